"""Exception hierarchy shared across the package."""


class LutNetError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LutNetError, ValueError):
    pass


class InfeasibleTableError(LutNetError):
    """Activation boundaries cannot be placed on a grid of the requested size."""


class DegenerateClusteringError(LutNetError, ValueError):
    pass


class LaplacianRecurrenceError(LutNetError):
    """The level recurrence left its domain before producing every level."""

    def __init__(self, message: str, feasible_count: int):
        super().__init__(message)
        self.feasible_count = feasible_count


class ShapeError(LutNetError, ValueError):
    pass


class NonFiniteLossError(LutNetError, FloatingPointError):
    pass


class ConfigurationError(LutNetError):
    """No fixed-point scale satisfies both the precision floor and the overflow bound."""


class OverflowBoundError(LutNetError, OverflowError):
    pass


class CompileError(LutNetError):
    def __init__(self, message: str, offenders=None):
        super().__init__(message)
        self.offenders = list(offenders or [])


class FormatError(LutNetError):
    """Malformed, truncated or corrupt model/data file."""


class ChecksumError(FormatError):
    pass


class IdxFormatError(FormatError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
