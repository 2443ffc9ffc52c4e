"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the domain of an operation (bad masses, bad matrix, ...)."""


class NumericError(RuntimeError):
    """A solver failed to reach its tolerance.

    ``residual`` holds the best residual norm seen and ``best`` the best
    iterate, when one is available.
    """

    def __init__(self, message, residual=None, best=None):
        super().__init__(message)
        self.residual = residual
        self.best = best


class AccuracyError(NumericError):
    """A requested tolerance is not reachable with the configured resources."""


class SingularityError(DomainError):
    """Evaluation at a singular point (coincident positions, x = 0 for G)."""
