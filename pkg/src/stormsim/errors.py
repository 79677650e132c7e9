"""Exception hierarchy shared across the package.

Two broad families matter to callers: input/validation problems
(:class:`ValidationError`, CLI exit code 2) and fitting/runtime problems
(:class:`FitError`, CLI exit code 3).
"""


class StormError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(StormError):
    """Malformed or inconsistent input data or configuration."""


class ParseError(ValidationError):
    """Unreadable input file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FitError(StormError):
    """A model fit failed or did not converge."""


class InsufficientTailError(FitError):
    """Too few threshold exceedances to fit a tail model."""


class SingularBandwidthError(FitError):
    """Kernel bandwidth matrix is not positive definite."""


class UnsupportedConditioningError(StormError):
    """Conditioning point is outside the numerical support of a kernel model."""


class SeparationError(FitError):
    """Logistic fit diverged, indicating (quasi-)separated data."""


class InvalidInverseError(StormError):
    """Requested inverse transform falls outside the Box-Cox domain."""


class UndefinedRegionError(ValidationError):
    """Risk region contains no catalog points."""
