"""Exception hierarchy shared by all modules."""


class EvsegError(Exception):
    """Base class for all package errors."""


class DimensionError(EvsegError):
    """Shapes or axes do not line up; message names the offending axes."""


class NumericError(EvsegError):
    """A computation produced NaN/Inf or diverged."""


class DataError(EvsegError):
    """Input records or labels violate a contract."""


class ConfigError(EvsegError):
    """Configuration inconsistent with itself or with stored weights."""


class StateError(EvsegError):
    """An object was used in an invalid lifecycle state (e.g. a tape replayed twice)."""
