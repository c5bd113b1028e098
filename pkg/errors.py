"""
Exception hierarchy shared by every analysis module and the CLI.

Each class carries the process exit code the CLI reports for it:
    2 - validation error (bad inputs, grid mismatch, malformed files)
    3 - numerical failure (singular geometry, weak reference, replay drift)
    4 - I/O error (builtin OSError, mapped by metrology.py)
"""


class MetrologyError(Exception):
    """Base class for all library errors"""

    exit_code = 1


class ValidationError(MetrologyError, ValueError):
    """Inputs violate a documented precondition"""

    exit_code = 2


class CoprimalityError(ValidationError):
    """Pattern length shares a factor with the reduced rate denominator"""

    def __init__(self, message, achievable_positions):
        super().__init__(message)
        self.achievable_positions = achievable_positions


class NumericalError(MetrologyError, ArithmeticError):
    """A computation could not produce a meaningful result"""

    exit_code = 3


class WeakReferenceError(NumericalError):
    """Reference tone power is below the detection threshold"""


class DegenerateGeometryError(NumericalError):
    """Every frequency bin of a wave split is singular"""


class ReplayMismatchError(NumericalError):
    """A replayed run did not reproduce its recorded outputs"""
