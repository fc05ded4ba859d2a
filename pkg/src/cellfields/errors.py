"""Exceptions shared across the field-theory modules."""

__all__ = ["NotASolutionError"]


class NotASolutionError(ValueError):
    """Raised when an operation that assumes a solution gets residuals above tol."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}
