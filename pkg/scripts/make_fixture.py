#!/usr/bin/env python3
"""Regenerate the vendored glass-style fixture.

The published glass-fragment measurements behind the original study are not
redistributable here, so the repo ships a simulated stand-in with the same
design geometry: 16 windows, 5 fragments per window, and three log-ratio
variables (logCaK, logCaSi, logCaFe).  Fragments are drawn from a random
effects model whose within-window scatter matches the measurement-precision
scale the priors in this package assume, and whose between-window scatter
dominates it the way float-glass compositions do while keeping typical
window pairs distinguishable-but-not-astronomically-far, so a trace from a
different window lands in the mildly atypical regime where Monte Carlo
averaging is well behaved.

Run from the repo root:  python3 scripts/make_fixture.py
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from specsource.evidence import Fragment, GroupedDataset, write_dataset
from specsource.stats import RngStream, sample_mvn

SEED = 20240810
N_WINDOWS = 16
FRAGMENTS_PER_WINDOW = 5
FEATURES = ("logCaK", "logCaSi", "logCaFe")

GRAND_MEAN = np.array([5.2, -2.2, 4.4])
BETWEEN_SD = np.array([0.45, 0.025, 0.16])
BETWEEN_CORR = np.array(
    [
        [1.00, 0.30, 0.45],
        [0.30, 1.00, 0.20],
        [0.45, 0.20, 1.00],
    ]
)
BETWEEN_COV = np.outer(BETWEEN_SD, BETWEEN_SD) * BETWEEN_CORR
WITHIN_COV = np.diag([0.01, 0.00005, 0.0005])


def main() -> None:
    stream = RngStream(SEED, 0)
    effects = sample_mvn(np.zeros(3), BETWEEN_COV, stream, size=N_WINDOWS)
    fragments = []
    for i in range(N_WINDOWS):
        window_mean = GRAND_MEAN + effects[i]
        noise = sample_mvn(np.zeros(3), WITHIN_COV, stream, size=FRAGMENTS_PER_WINDOW)
        for j in range(FRAGMENTS_PER_WINDOW):
            fragments.append(Fragment(f"w{i + 1:02d}", j + 1, window_mean + noise[j]))

    dataset = GroupedDataset(tuple(fragments), FEATURES)
    out = pathlib.Path(__file__).resolve().parents[1] / "data" / "glass_sim_class1.csv"
    out.parent.mkdir(exist_ok=True)
    write_dataset(dataset, out)
    print(f"wrote {out} ({len(fragments)} rows)")


if __name__ == "__main__":
    main()
