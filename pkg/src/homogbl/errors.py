"""Exception types raised across the package."""


class HomogError(Exception):
    """Base class for all package errors."""


class InvalidResolution(HomogError, ValueError):
    pass


class InterfaceMisalignment(HomogError, ValueError):
    pass


class MissingScale(HomogError, ValueError):
    pass


class BadConstraint(HomogError, ValueError):
    pass


class IncompatibleRHS(HomogError, ValueError):
    pass


class UnsupportedScale(HomogError, ValueError):
    pass


class GridIncompatibility(HomogError, ValueError):
    pass


class InsufficientData(HomogError, ValueError):
    pass


class Inconsistency(HomogError, RuntimeError):
    """A computed identity failed its consistency check."""


class NumericalBreakdown(HomogError, ArithmeticError):
    pass


class NoConvergence(HomogError, RuntimeError):
    """Iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(HomogError, ValueError):
    pass
