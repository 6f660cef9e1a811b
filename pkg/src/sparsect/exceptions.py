class SparseCTError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(SparseCTError, ValueError):
    """Inconsistent geometry, grid or hyperparameters."""


class InvalidInputError(SparseCTError, ValueError):
    """Arguments violate an operation's preconditions."""


class InvalidLevelError(InvalidInputError):
    """Severity level outside ``0..T_max`` or an invalid level pair."""


class NumericalError(SparseCTError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class FormatError(SparseCTError, ValueError):
    """Malformed or truncated file."""
