"""Exception hierarchy shared by all cloudcal modules."""


class CloudCalError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CloudCalError):
    """Shapes or band counts of two rasters do not line up."""


class InvalidWeightsError(CloudCalError):
    """Band mixing weights are negative or do not sum to one."""


class ConfigError(CloudCalError):
    """A configuration value violates its documented constraints."""


class SignalError(CloudCalError):
    """A numeric input (loss, gradient, threshold) is non-finite or out of range."""


class DatasetError(CloudCalError):
    """A dataset manifest or one of its referenced files is invalid."""


class EmptyEvaluationError(CloudCalError):
    """Metrics were requested from a confusion matrix with zero pixels."""
