"""Exception hierarchy shared across the solver modules."""


class MfliqError(Exception):
    """Base class for all package errors."""


class GridError(MfliqError):
    """Invalid time-grid construction parameters."""


class ShapeError(MfliqError):
    """Field values incompatible with the ensemble layout."""


class ModelError(MfliqError):
    """Invalid or infeasible model data."""


class AdmissibilityError(MfliqError):
    """A strategy violates the liquidation constraint."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(MfliqError):
    """An iterative solve exceeded its iteration budget."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history) if residual_history is not None else []


class NumericalError(MfliqError):
    """NaN/overflow or a violated structural property during a solve."""
