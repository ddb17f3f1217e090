"""
Named, ordered collection of learnable tensors
"""

import hashlib
import logging
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from errors import CheckpointError
from tensor import Tensor

logger = logging.getLogger(__name__)

PRECISIONS = {"single": np.float32, "double": np.float64}


class ModelParams:
    """
    Ordered name -> Tensor map. Insertion order is the serialization order and
    feeds signature(), so two collections built from the same config agree.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._tensors: Dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"Duplicate parameter name: {name}")
        tensor = Tensor(array, requires_grad=trainable, name=name, dtype=self.dtype)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._tensors.items())

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(name, t) for name, t in self._tensors.items() if t.requires_grad]

    def count(self) -> int:
        """Total number of scalars"""
        return int(sum(t.size for t in self._tensors.values()))

    def replace(self, name: str, array: np.ndarray) -> None:
        """Swap in new values for an existing parameter (shape must not change)"""
        old = self._tensors[name]
        if tuple(array.shape) != old.shape:
            raise ValueError(f"Parameter {name} changes shape from {old.shape} to {array.shape}")
        self._tensors[name] = Tensor(array, requires_grad=old.requires_grad, name=name, dtype=self.dtype)

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """Replace every tensor from `state`; nothing changes if any tensor mismatches"""
        missing = [name for name in self._tensors if name not in state]
        if missing:
            raise CheckpointError(f"Checkpoint is missing tensor {missing[0]}")
        unexpected = [name for name in state if name not in self._tensors]
        if unexpected:
            raise CheckpointError(f"Checkpoint has unexpected tensor {unexpected[0]}")
        for name, t in self._tensors.items():
            if tuple(state[name].shape) != t.shape:
                raise CheckpointError(
                    f"Tensor {name} has shape {tuple(state[name].shape)} in checkpoint, model expects {t.shape}"
                )
        for name in list(self._tensors):
            self.replace(name, np.asarray(state[name]))

    def signature(self) -> str:
        digest = hashlib.sha256()
        for name, t in self._tensors.items():
            digest.update(f"{name}:{'x'.join(map(str, t.shape))};".encode("utf-8"))
        digest.update(str(self.dtype).encode("utf-8"))
        return digest.hexdigest()

    def astype(self, dtype) -> "ModelParams":
        copy = ModelParams(dtype)
        for name, t in self._tensors.items():
            copy.add(name, t.data, trainable=t.requires_grad)
        return copy

    def zeros_like(self) -> "ModelParams":
        copy = ModelParams(self.dtype)
        for name, t in self._tensors.items():
            copy.add(name, np.zeros(t.shape), trainable=t.requires_grad)
        return copy

    def update(self, other: "ModelParams") -> None:
        for name, t in other.items():
            if name in self._tensors:
                raise ValueError(f"Duplicate parameter name: {name}")
            self._tensors[name] = t


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Zero-mean Gaussian with variance 2 / fan_in"""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def add_conv(
    params: ModelParams,
    rng: np.random.Generator,
    name: str,
    c_in: int,
    c_out: int,
    kh: int,
    kw: Optional[int] = None,
) -> None:
    kw = kh if kw is None else kw
    params.add(f"{name}.weight", he_normal(rng, (c_out, c_in, kh, kw), c_in * kh * kw))
    params.add(f"{name}.bias", np.zeros(c_out))


def add_dense(params: ModelParams, rng: np.random.Generator, name: str, c_in: int, c_out: int) -> None:
    params.add(f"{name}.weight", he_normal(rng, (c_out, c_in), c_in))
    params.add(f"{name}.bias", np.zeros(c_out))
