"""Exception types raised across the package."""


class ModevError(Exception):
    """Base class for all package errors."""


class ModelError(ModevError, ValueError):
    """A model or kernel produced an invalid (non-finite, non-PSD) value."""


class DomainError(ModevError, ValueError):
    """A tilt parameter lies outside the kernel's mgf domain."""

    def __init__(self, message, min_n=None):
        super().__init__(message)
        self.min_n = min_n


class UnsupportedTiltError(ModevError, NotImplementedError):
    """The kernel cannot produce exact tilted draws."""


class ConvergenceError(ModevError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, best=None, grad_norm=None):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class DegenerateEstimateError(ModevError, RuntimeError):
    """A Monte Carlo estimate is numerically degenerate (e.g. all weights zero)."""


class ConfigError(ModevError, ValueError):
    """Invalid run configuration."""
