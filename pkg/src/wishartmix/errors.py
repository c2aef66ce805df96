"""Exception hierarchy.

Three top-level families map onto the CLI exit codes: ``ConfigError`` -> 1,
``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class WishartMixError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(WishartMixError):
    """Invalid run configuration (iteration counts, K range, flags)."""


class DataError(WishartMixError):
    """Malformed or unusable input data."""


class NumericalError(WishartMixError):
    """Numerical failure during computation."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization failed even after diagonal jitter."""


class DimensionMismatch(DataError):
    """Array shapes are inconsistent with each other."""


class DomainError(NumericalError):
    """Argument outside the mathematical domain of an operation."""


class AllMinusInfinity(NumericalError):
    """Categorical sampling from log-weights that are all -inf."""


class MissingCovariates(DataError):
    """Operation requires a covariate matrix the dataset does not carry."""


class DegenerateData(DataError):
    """Dataset cannot support the requested fit (e.g. n < K)."""


class RankDeficientDesign(DataError):
    """Covariate design matrix is not full column rank."""


class EmptyComponent(NumericalError):
    """A mixture component collapsed to (numerically) zero mass."""


class AllRestartsFailed(NumericalError):
    """Every EM restart aborted before producing a fit."""


class EmMonotonicityError(NumericalError):
    """Observed-data log-likelihood decreased during EM beyond slack."""


class TooShort(NumericalError):
    """Trace too short for an autocorrelation-based estimate."""


class ChainTooShort(NumericalError):
    """Chain has too few kept draws for importance-sampling LOO."""


class LengthMismatch(DataError):
    """Paired sequences have different lengths."""


class UnknownDesign(ConfigError):
    """Requested builtin simulation design does not exist."""


class MalformedTable(DataError):
    """Response table violates the expected long format."""


class NoItemsRetained(DataError):
    """Covariance-descriptor ingestion excluded every item."""


class DatasetFormatError(DataError):
    """Dataset file violates the JSON schema."""
