"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes (see ``specsource.cli``):
configuration problems, data problems, and numerical failures are
reported separately so callers can script against them.
"""


class SpecSourceError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SpecSourceError):
    """Invalid or inconsistent run configuration."""


class DataError(SpecSourceError):
    """Malformed input data or an evidence selection that does not exist."""


class NumericalError(SpecSourceError):
    """A numerical operation failed (factorization, degenerate chain, ...)."""


class NotSpdError(NumericalError):
    """A matrix required to be symmetric positive definite is not."""


class DegenerateChainError(NumericalError):
    """A chain has zero variance, so autocorrelation-based summaries fail."""
