"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An object violates one of its declared invariants (dimension, PSD, ...)."""


class NumericalError(RuntimeError):
    """A numerical operation failed (Cholesky breakdown, NaN gradient, ...).

    The optional ``context`` holds the offending array or a short diagnostic
    payload for post-mortem inspection.
    """

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = context


class ConditioningError(NumericalError):
    """A data matrix is too ill-conditioned for the requested operation."""
