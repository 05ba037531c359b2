"""Exception hierarchy shared by all modules.

Input problems derive from ``ValueError`` so callers can catch them broadly;
numerical conditioning failures derive from ``ArithmeticError``.
"""


class SemtrackError(Exception):
    """Base class for all package errors."""


class InputError(SemtrackError, ValueError):
    """Invalid user input (bad arguments, misaligned sequences, ...)."""


class InvalidBoxError(InputError):
    pass


class GridSpecError(InputError):
    pass


class CalibrationError(InputError):
    pass


class DimensionError(InputError):
    pass


class ConfigError(InputError):
    pass


class FormatError(InputError):
    """Malformed file content. Carries the location of the problem."""

    def __init__(self, message, *, line=None, offset=None, key=None):
        self.line = line
        self.offset = offset
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalError(SemtrackError, ArithmeticError):
    """A covariance or innovation matrix could not be factorized."""
