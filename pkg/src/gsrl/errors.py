"""Exception types shared across the package.

Argument and domain violations raise plain ``ValueError``; the classes here
mark failures that can only be detected while computing.
"""


class GsrlError(Exception):
    """Base class for computational failures raised by this package."""


class NumericsError(GsrlError):
    """A numerical guarantee was violated (residual, positivity, variance)."""


class CalibrationError(GsrlError):
    """Threshold calibration could not bracket or reach the target."""


class RateUndefinedError(GsrlError):
    """Convergence rate is undefined because successive solutions coincide."""


class UndefinedConditionalError(GsrlError):
    """A conditional probability was requested given a zero-probability event."""
