"""
PFAC checkpoint format.

    magic     4 bytes  b"PFAC"
    version   u32      1
    count     u32      number of tensors
    per tensor:
      name_len u32, name (UTF-8), rank u32, dims u32 * rank,
      values   float32 * prod(dims), row-major

All integers and floats are little-endian.
"""

import logging
import os
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from errors import CheckpointError
from params import ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"PFAC"
VERSION = 1
_U32 = struct.Struct("<I")
_VALUE = np.dtype("<f4")


def encode_state(state: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(state))]
    for name, array in state.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(d) for d in array.shape)
        chunks.append(np.ascontiguousarray(array, dtype=_VALUE).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_state(data: bytes) -> Dict[str, np.ndarray]:
    """Parse a whole checkpoint; any defect raises before a tensor is handed out"""
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"not a PFAC checkpoint (magic {magic!r})")
    version = reader.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    count = reader.u32("tensor count")

    state: Dict[str, np.ndarray] = {}
    for index in range(count):
        raw_name = reader.take(reader.u32(f"name length of tensor {index}"), f"name of tensor {index}")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"tensor {index} has an invalid UTF-8 name") from e
        if name in state:
            raise CheckpointError(f"duplicate tensor {name}")
        rank = reader.u32(f"rank of {name}")
        dims = tuple(reader.u32(f"dims of {name}") for _ in range(rank))
        n_values = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = reader.take(n_values * _VALUE.itemsize, f"values of {name}")
        state[name] = np.frombuffer(raw, dtype=_VALUE).astype(np.float32).reshape(dims)
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the last tensor")
    return state


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> None:
    """Write via a temporary sibling so a failed save leaves no partial file"""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(encode_state(params.state()))
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    logger.info(f"Saved checkpoint with {len(params)} tensors to {path}")


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return decode_state(Path(path).read_bytes())


def load_into(params: ModelParams, path: Union[str, Path]) -> ModelParams:
    """Replace every tensor of `params` from the checkpoint at `path`"""
    params.load_state(load_checkpoint(path))
    logger.info(f"Loaded checkpoint {path}")
    return params
