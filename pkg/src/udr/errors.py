"""Exception types shared across the package."""


class UdrError(Exception):
    """Base class for all package errors."""


class DimensionError(UdrError, ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(UdrError, ValueError):
    """A scalar or flag argument violates its contract."""


class ContractError(UdrError, RuntimeError):
    """Internal state passed between calls is stale or inconsistent."""


class DataFormatError(UdrError, ValueError):
    """A data file failed to parse; the message names the offending field."""


class ConfigError(UdrError, ValueError):
    """A config file or override is unknown, unparsable, or invalid."""


class DivergenceError(UdrError, RuntimeError):
    """Training hit a non-finite loss; the message carries epoch/batch/lambda."""
