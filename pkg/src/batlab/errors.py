"""Exception types shared across the package."""


class BatError(Exception):
    """Base class for all errors raised by batlab."""


class DimensionError(BatError, ValueError):
    """Operand shapes are incompatible."""


class UsageError(BatError, RuntimeError):
    """An API was called in a state where it cannot run."""


class ConfigError(BatError, ValueError):
    """A configuration value is out of its allowed range."""


class DataError(BatError, ValueError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    """A source document could not be parsed."""
