"""Exception hierarchy shared across the package."""


class SpikeFuseError(Exception):
    """Base class for all package errors."""


class DimensionError(SpikeFuseError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ShapeError(DimensionError):
    """Input shape violates an operation's precondition."""


class ConfigError(SpikeFuseError, ValueError):
    """Invalid configuration value."""


class OracleInvalidError(SpikeFuseError):
    """A verification oracle cannot be applied (e.g. non-deterministic op)."""


class GradientMismatchError(SpikeFuseError, AssertionError):
    """Analytic and numeric gradients disagree beyond tolerance."""


class EventParseError(SpikeFuseError, ValueError):
    """Malformed line in an event file."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class BoundsError(SpikeFuseError, ValueError):
    """Event coordinate outside the sensor."""


class WindowError(SpikeFuseError, ValueError):
    """Empty or inverted time window."""


class GeometryError(SpikeFuseError, ValueError):
    """Bounding box is degenerate or lies outside the feature map."""


class DomainError(SpikeFuseError, ValueError):
    """Value outside the domain an operation accepts."""


class RatioUndefinedError(SpikeFuseError, ZeroDivisionError):
    """Energy ratio requested against a zero baseline."""


class TrainingDivergedError(SpikeFuseError, FloatingPointError):
    """Loss or a tensor became non-finite during training."""
