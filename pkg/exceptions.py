class SedError(Exception):
    """
    Base exception for all sound event detection toolkit errors.

    Attributes:
        message (str): The human-readable error message.
        code (str | None): An optional machine-readable error code for
                           specific error handling.
        exit_code (int): The process exit code the CLI uses for this error.
    """
    default_code: str | None = None
    exit_code: int = 2

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        self.code = code if code is not None else self.default_code

    def __str__(self) -> str:
        """Return the string representation of the error, including the code
        if present."""
        if self.code:
            return f"{super().__str__()} (code: {self.code})"
        return super().__str__()


class InvalidArgumentError(SedError, ValueError):
    """An argument is outside the range an operation accepts."""
    default_code = 'INVALID_ARGUMENT'
    exit_code = 1


class ConfigError(SedError):
    """A configuration value or combination of values is invalid."""
    default_code = 'CONFIG_INVALID'
    exit_code = 1


class ShapeError(SedError, ValueError):
    """Array shapes do not match what an operator expects."""
    default_code = 'SHAPE_MISMATCH'
    exit_code = 2


class DataFormatError(SedError):
    """An input file is missing, malformed or incompatible."""
    default_code = 'DATA_FORMAT'
    exit_code = 2


class MetricError(SedError):
    """A metric is undefined for the given reference."""
    default_code = 'UNDEFINED_ER'
    exit_code = 2


class NumericalError(SedError):
    """Training diverged or a gradient check failed."""
    default_code = 'NUMERICAL'
    exit_code = 3
