"""Exception types raised across the package."""


class SteinNetError(Exception):
    """Base class for package errors."""


class NotPositiveDefinite(SteinNetError, ArithmeticError):
    """A Cholesky pivot stayed non-positive after all jitter escalation."""


class NonFiniteGradient(SteinNetError, FloatingPointError):
    pass


class NonFiniteScore(SteinNetError, FloatingPointError):
    """The target score returned NaN/Inf. ``state`` carries the offending point."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NonFiniteLoss(SteinNetError, FloatingPointError):
    pass


class DimensionMismatch(SteinNetError, ValueError):
    pass


class NoSamplerAvailable(SteinNetError, RuntimeError):
    pass


class ScoreMismatch(SteinNetError, ValueError):
    """A user-supplied score is not the gradient of the supplied log-density."""


class DegenerateInterval(SteinNetError, ValueError):
    pass


class DegenerateDenominator(SteinNetError, ArithmeticError):
    pass


class OutOfDomain(SteinNetError, ValueError):
    pass


class ConfigError(SteinNetError, ValueError):
    pass
