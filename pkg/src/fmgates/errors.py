"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance.

    Carries the final residual so callers can report diagnostics.
    """

    def __init__(self, message, residual=None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class UnstableChainError(ValueError):
    """The requested mode branch has a non-positive Hessian eigenvalue."""


class RescaleError(ValueError):
    """The geometric phase is not sign-definite; Rabi rescaling undefined."""
