"""
Binary NetPBM codec: P5 (greymap) and P6 (pixmap), 8-bit samples
"""

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from errors import MalformedHeaderError, TruncatedRasterError, UnsupportedBitDepthError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHANNELS = {b"P5": 1, b"P6": 3}
WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int) -> Tuple[list, int]:
    """First `count` whitespace-separated header tokens (comments skipped) and the offset after them"""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos] in WHITESPACE:
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeaderError(f"header ends after {len(tokens)} of {count} fields")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or data[pos] not in WHITESPACE:
        raise MalformedHeaderError("missing whitespace after maxval")
    return tokens, pos + 1


def _positive_int(token: bytes, field: str) -> int:
    if not token.isdigit():
        raise MalformedHeaderError(f"{field} is not a decimal integer: {token!r}")
    value = int(token)
    if value <= 0:
        raise MalformedHeaderError(f"{field} must be positive, got {value}")
    return value


def decode(data: bytes) -> np.ndarray:
    """Raster as uint8 [H, W] for P5 or [H, W, 3] for P6"""
    magic = data[:2]
    if magic not in CHANNELS:
        raise MalformedHeaderError(f"unsupported magic number {magic!r} (expected P5 or P6)")
    tokens, offset = _header_tokens(data[2:], 3)
    width = _positive_int(tokens[0], "width")
    height = _positive_int(tokens[1], "height")
    maxval = _positive_int(tokens[2], "maxval")
    if maxval > 255:
        raise UnsupportedBitDepthError(f"maxval {maxval} needs 16-bit samples; only 8-bit is supported")

    channels = CHANNELS[magic]
    expected = width * height * channels
    raster = data[2 + offset:]
    if len(raster) < expected:
        raise TruncatedRasterError(f"raster has {len(raster)} bytes, expected {expected}")
    if len(raster) > expected:
        logger.warning(f"Ignoring {len(raster) - expected} trailing bytes after the raster")
    pixels = np.frombuffer(raster[:expected], dtype=np.uint8)
    if maxval != 255:
        pixels = np.round(pixels.astype(np.float64) * 255.0 / maxval).clip(0, 255).astype(np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return pixels.reshape(shape)


def encode(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise ValueError(f"NetPBM encoder expects uint8 samples, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected [H, W] or [H, W, 3] samples, got shape {pixels.shape}")
    height, width = pixels.shape[:2]
    return magic + f"\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def read(path: PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path: PathLike, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode(pixels))


def to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) / 255.0


def from_unit(values: np.ndarray) -> np.ndarray:
    """[0, 1] reals to 8-bit samples, rounded to nearest"""
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
