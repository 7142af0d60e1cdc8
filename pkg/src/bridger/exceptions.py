"""Exception types shared across the package."""

from sklearn.exceptions import NotFittedError

__all__ = ["ShapeError", "DivergenceError", "ConfigError", "NotFittedError"]


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class DivergenceError(RuntimeError):
    """Training or sampling produced a non-finite or exploding value.

    The keyword arguments are kept on the instance as ``diagnostics`` so that
    sweep harnesses can log them next to the failed cell.
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConfigError(ValueError):
    """An experiment configuration is malformed."""
