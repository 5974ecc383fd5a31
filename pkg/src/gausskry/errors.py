"""Exception types raised by gausskry."""


class GausskryError(Exception):
    """Base class for all library errors."""


class SingularMatrix(GausskryError):
    """A pivot fell below the singularity threshold during an LU solve."""


class PoleHit(GausskryError):
    """A rational function was evaluated at (or numerically on) one of its poles."""


class InvalidInput(GausskryError, ValueError):
    """An argument violates the documented contract of an operation."""


class BreakdownError(GausskryError):
    """A Krylov process was asked to extend past a (lucky) breakdown."""


class AccuracyError(GausskryError):
    """A reference computation could not reach its accuracy contract."""
