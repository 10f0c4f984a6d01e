"""Exception hierarchy shared by all modules."""


class SkewMemError(Exception):
    """Base class for package errors."""


class ValidationError(SkewMemError, ValueError):
    """Malformed input: non-monotone radii, nonpositive weights, bad config values."""


class HypothesisViolation(SkewMemError):
    """A structural hypothesis on the weight model fails (summability, positivity)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EvaluationError(SkewMemError, ArithmeticError):
    """A density, drift or quadrature evaluation produced an unusable value."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} (at {where!r})")
        self.where = where


class StepSizeError(SkewMemError):
    """The time discretisation is too coarse for the configuration."""


class UsageError(SkewMemError):
    """An operation was called with arguments it cannot serve."""


class ConfigError(SkewMemError):
    """Configuration problem, optionally pointing at a line of the source file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BandwidthError(ConfigError):
    """Too few samples fall inside the kernel window; widen the bandwidth."""
