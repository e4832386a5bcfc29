"""Exception taxonomy shared by every module in the package."""


class IplError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(IplError, ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ParameterError(IplError, ValueError):
    """A scalar argument (learning rate, temperature, ...) is out of range."""


class StateError(IplError, RuntimeError):
    """An object is not in the state an operation requires (e.g. missing gradients)."""


class ConfigError(IplError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(IplError, ValueError):
    """Dataset, schedule, or class-id preconditions violated."""


class FormatError(IplError, ValueError):
    """A file being parsed does not match its documented format."""


class NumericError(IplError, ArithmeticError):
    """A numeric operation produced a non-finite value."""
