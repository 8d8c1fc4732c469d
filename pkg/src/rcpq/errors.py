"""Exception types shared across the package."""


class RcpqError(Exception):
    """Base class for all package errors."""


class FormatError(RcpqError):
    """Malformed file header, bad magic or unsupported version."""


class UnsupportedLayoutError(RcpqError):
    """Tensor layout outside the supported subset (2-D, C-order, little-endian)."""


class DataError(RcpqError):
    """Payload violates a data invariant (NaN/Inf, truncated section, mismatch)."""


class ShapeError(RcpqError):
    """Operand dimensions are incompatible."""


class DegenerateGroupError(RcpqError):
    """A quantization group has zero range after clipping."""


class DegenerateDistributionError(RcpqError):
    """Sample set has zero variance, so kurtosis is undefined."""


class InvalidRangeError(RcpqError):
    """Clip logits produced a non-positive quantization range."""


class EncodeError(RcpqError):
    """Code values outside the representable alphabet."""


class ConfigError(RcpqError):
    """Invalid or inconsistent configuration value."""


class ZeroTokenError(RcpqError):
    """An activation token is identically zero, so no per-token scale exists."""


class TrainingFailureError(RcpqError):
    """Training loss became non-finite."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
