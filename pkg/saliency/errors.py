"""
Domain exceptions shared by every saliency module
"""

from typing import Any, Optional


class SaliencyError(Exception):
    """Base class for all errors raised by this project"""


class ShapeError(SaliencyError, ValueError):
    """Raised when a tensor shape does not satisfy an operator contract"""

    def __init__(self, message: str, dim: Optional[str] = None, expected: Any = None, got: Any = None):
        self.dim = dim
        self.expected = expected
        self.got = got
        if dim is not None:
            message = f"{message} (dimension {dim}: expected {expected}, got {got})"
        super().__init__(message)


class GraphError(SaliencyError, RuntimeError):
    """Raised for invalid use of the recorded computation graph"""


class NetpbmError(SaliencyError, ValueError):
    """Base class for NetPBM decoding problems"""


class MalformedHeaderError(NetpbmError):
    pass


class UnsupportedBitDepthError(NetpbmError):
    pass


class TruncatedRasterError(NetpbmError):
    pass


class DimensionMismatchError(SaliencyError, ValueError):
    """Image and mask disagree on height or width"""


class CheckpointError(SaliencyError, ValueError):
    pass


class ConfigError(SaliencyError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingGradientError(SaliencyError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing gradient"


class TrainingDivergedError(SaliencyError, RuntimeError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")
