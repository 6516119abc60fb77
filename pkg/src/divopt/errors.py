"""Exception hierarchy for divopt.

All library errors derive from :class:`DivoptError` so callers can catch a
single type at the CLI boundary.
"""


class DivoptError(Exception):
    """Base class for all divopt errors."""


class DomainError(DivoptError, ValueError):
    """An argument lies outside its mathematical domain."""


class ConfigurationError(DivoptError, ValueError):
    """An invalid configuration value (zero-mass weighting, bad step size, ...)."""


class DegenerateBatchError(DivoptError):
    """Every rank weight in a batch is zero; the weighting truncates all samples."""


class FactorizationError(DivoptError):
    """A covariance/scale matrix could not be factorized, even after jitter repair."""


class StepFailureError(DivoptError):
    """A proposal update produced invalid parameters (non-PSD covariance, all
    mixture components frozen, ...)."""


class UnsupportedDomainError(DivoptError):
    """Exact enumeration requested on a domain that is not enumerable."""
