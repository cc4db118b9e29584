"""Exception types raised across the package."""


class HmmLabError(Exception):
    """Base class for package errors."""


class InputError(HmmLabError, ValueError):
    """Malformed arguments: mismatched lengths, out-of-domain values."""


class ModelError(HmmLabError):
    """The model does not satisfy what a solver needs (e.g. convexity)."""


class AssumptionError(HmmLabError):
    """An evaluator failed at a validation grid point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DegenerateObservationError(HmmLabError):
    """Every state assigns zero density to an observation."""

    def __init__(self, m):
        super().__init__(f"all emission densities vanish at position {m}")
        self.m = m


class SizeError(HmmLabError):
    """An exhaustive search would be too large."""


class ConvergenceError(HmmLabError):
    """An iterative solve failed where the caller needs a converged result."""
