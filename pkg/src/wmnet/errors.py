"""Exception hierarchy shared by every wmnet module."""


class WatermarkError(Exception):
    """Base class for all structured wmnet errors."""


class ShapeError(WatermarkError, ValueError):
    """Raised when tensor or image dimensions disagree with an operation's contract."""


class GraphError(WatermarkError):
    """Raised on misuse of the autodiff graph (e.g. backward on a non-scalar)."""


class NonFiniteError(WatermarkError, FloatingPointError):
    """Raised when a gradient, parameter or loss becomes NaN or infinite."""

    def __init__(self, message: str, name: str | None = None, step: int | None = None):
        super().__init__(message)
        self.name = name
        self.step = step


class CheckpointError(WatermarkError):
    """Raised for malformed, truncated or incompatible checkpoint files."""


class ConfigError(WatermarkError, ValueError):
    """Raised for invalid configuration values or config-file syntax."""


class ImageReadError(WatermarkError, OSError):
    """Raised when an image or data file cannot be read."""

    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        msg = f"cannot read {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class AttackError(WatermarkError, ValueError):
    """Raised for unknown attack kinds or out-of-domain strengths."""


class GeometryError(WatermarkError):
    """Raised for degenerate point configurations or singular homographies."""


class DecodeError(WatermarkError):
    """Raised when a Reed-Solomon codeword cannot be corrected.

    ``codeword`` is the index of the failing block; ``raw_ber`` is filled in by
    callers that know the pre-correction bit error rate.
    """

    def __init__(self, message: str, codeword: int | None = None, raw_ber: float | None = None):
        super().__init__(message)
        self.codeword = codeword
        self.raw_ber = raw_ber
