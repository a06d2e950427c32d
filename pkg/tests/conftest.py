import numpy as np
import pytest

from specsource.stats import SpdMatrix


def random_spd(rng: np.random.Generator, k: int, scale: float = 1.0) -> SpdMatrix:
    """Random well-conditioned SPD matrix for tests."""
    a = rng.standard_normal((k, k))
    return SpdMatrix(scale * (a @ a.T + k * np.eye(k)))


def random_orthogonal(rng: np.random.Generator, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(20240810)
