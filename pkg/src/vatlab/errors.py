"""Exception taxonomy shared by all vatlab modules."""


class VatlabError(Exception):
    """Base class for all vatlab errors."""


class DimensionError(VatlabError):
    """Tensor shapes do not line up."""


class NumericError(VatlabError):
    """NaN/Inf encountered or produced."""


class DataError(VatlabError):
    """Input data violates a contract (bad labels, bad probability rows, ...)."""


class ConfigError(VatlabError):
    """Invalid hyperparameter or configuration value."""


class FormatError(VatlabError):
    """Malformed external file (IDX, checkpoint, config)."""


class UsageError(VatlabError):
    """API misuse (stale cache, wrong model kind for a command, ...)."""
