"""Exception types raised by the toolkit."""


class MoenError(Exception):
    """Base class for all toolkit errors."""


class NonFiniteError(MoenError, ArithmeticError):
    """A state entry became NaN or Inf during integration."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class SingularError(MoenError, ArithmeticError):
    """A linear solve hit a pivot below the singularity threshold."""


class OutOfRangeError(MoenError, ValueError):
    """Evaluation time outside a trajectory's grid."""


class NotLinearError(MoenError, ValueError):
    """A linear-only operation was given a nonlinear model."""


class DimensionMismatchError(MoenError, ValueError):
    pass


class ConfigError(MoenError, ValueError):
    """Invalid run configuration or inconsistent input files."""
