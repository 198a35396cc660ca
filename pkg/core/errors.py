class StickyLDPError(Exception):
    """Base class for toolkit errors."""


class ValidationError(StickyLDPError, ValueError):
    """A precondition on the inputs does not hold."""


class MassMismatchError(ValidationError):
    """Two measures (or a measure and a mass split) disagree on total mass."""


class ConvergenceError(StickyLDPError, RuntimeError):
    """An iterative solve ran out of sweeps before meeting its tolerance."""


class ToleranceBreach(StickyLDPError):
    """A cross-check residual exceeded the requested tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), tol: float = float("nan")):
        super().__init__(message)
        self.residual = residual
        self.tol = tol
