"""Exception hierarchy used across the package."""


class MotionWeaveError(Exception):
    """Base class for all library errors."""


class ParameterError(MotionWeaveError, ValueError):
    """A scalar argument or parameter combination is out of range."""


class ShapeError(MotionWeaveError, ValueError):
    """Tensor shapes are inconsistent with the operation's contract."""


class CapacityError(MotionWeaveError, ValueError):
    """A sequence exceeds a fixed capacity (e.g. the positional table)."""


class ConfigurationError(MotionWeaveError, ValueError):
    """Components are wired together inconsistently."""


class NumericError(MotionWeaveError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class SingularityError(NumericError):
    """A division by a vanishing schedule coefficient was attempted."""
