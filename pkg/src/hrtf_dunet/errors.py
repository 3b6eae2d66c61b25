"""Exception types. The CLI maps each family to an exit code."""


class HrtfError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HrtfError, ValueError):
    """Invalid experiment configuration or CLI arguments (exit code 2)."""


class DataError(HrtfError, ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


class ContainerError(DataError):
    """A container file could not be read or written."""


class NumericalAbort(HrtfError, FloatingPointError):
    """Training produced a non-finite loss (exit code 4)."""
