"""Exception hierarchy shared by all stages."""


class QFRError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(QFRError, ValueError):
    """Input data are malformed (non-finite values, bad CSV cells, ...)."""


class DegenerateSampleError(ValidationError):
    """A subject has too few measurements to form a quantile function."""


class OutOfRangeError(QFRError, ValueError):
    """A probability lies outside the estimable range of a quantile function."""


class ParameterError(QFRError, ValueError):
    """A distribution parameter is outside its domain."""


class ConfigError(QFRError, ValueError):
    """A configuration value is inconsistent or outside its documented range."""


class SparseDataError(QFRError, ValueError):
    """A subject has no more measurements than there are basis functions."""


class UnsupportedMethodError(QFRError, ValueError):
    """The requested fitting method is not available."""


class MissingArtifactError(QFRError, FileNotFoundError):
    """A pipeline stage needs an artifact that an earlier stage did not write."""


class SamplerError(QFRError, RuntimeError):
    """The Gibbs sampler produced a non-finite state."""
