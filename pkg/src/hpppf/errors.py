"""Exception types shared across the toolkit."""


class InputError(ValueError):
    """Caller supplied data that violates an operation's preconditions."""


class EstimationError(RuntimeError):
    """Pose estimation did not reach the required support.

    ``best`` carries the best attempt seen (may be ``None``).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InvariantViolation(AssertionError):
    """An internal consistency check failed."""
