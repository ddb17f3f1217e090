"""
Minimal dense tensor engine with reverse-mode differentiation

Every operator is a Function subclass. forward() works on plain numpy arrays and
may keep intermediates in self.cache; backward() maps the gradient of the output
to one gradient per input (None for inputs that take no gradient). The layout
for image-like data is always [N, C, H, W].
"""

import logging
import threading
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from errors import GraphError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence, float, int]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current thread"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """
    Immutable n-dimensional array with optional gradient tracking.

    The wrapped array is marked read-only. Leaves that take gradients get their
    `.grad` written by backward(); `name` is the key used in the gradient map.
    """

    __slots__ = ("data", "requires_grad", "name", "grad", "_node")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
    ):
        array = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        array.setflags(write=False)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._node: Optional["Function"] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool, node: Optional["Function"]) -> "Tensor":
        out = cls.__new__(cls)
        array = np.asarray(array)
        array.setflags(write=False)
        out.data = array
        out.requires_grad = requires_grad
        out.name = None
        out.grad = None
        out._node = node
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False, node=None)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        op = f" op={self._node.op}" if self._node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}{op}, requires_grad={self.requires_grad})"


def constant(data: ArrayLike, dtype: Optional[np.dtype] = None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


class Function:
    """Graph node: op tag, input tensors and cached intermediates for backward"""

    op = "function"

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.cache: Dict[str, object] = {}
        self.consumed = False

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        node = cls(*inputs)
        out = node.forward(*(t.data for t in inputs), **kwargs)
        record = is_grad_enabled() and any(t.requires_grad for t in inputs)
        if not record:
            node.cache.clear()
            return Tensor._wrap(out, requires_grad=False, node=None)
        return Tensor._wrap(out, requires_grad=True, node=node)


# --- convolution -----------------------------------------------------------

def _same_padding(k: int, dilation: int) -> Tuple[int, int]:
    total = dilation * (k - 1)
    return total // 2, total - total // 2


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, dilation: int, out_h: int, out_w: int) -> np.ndarray:
    n, c = x.shape[:2]
    s_n, s_c, s_h, s_w = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(s_n, s_c, dilation * s_h, dilation * s_w, stride * s_h, stride * s_w),
        writeable=False,
    )
    return patches.reshape(n, c * kh * kw, out_h * out_w)


def _col2im(
    cols: np.ndarray,
    padded_shape: Tuple[int, int, int, int],
    kh: int,
    kw: int,
    stride: int,
    dilation: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    n, c = padded_shape[:2]
    out = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        h0 = i * dilation
        for j in range(kw):
            w0 = j * dilation
            out[:, :, h0:h0 + stride * out_h:stride, w0:w0 + stride * out_w:stride] += cols[:, :, i, j]
    return out


class Conv2d(Function):
    op = "conv2d"

    def forward(self, x, weight, bias, stride=1, dilation=1, padding="same"):
        n, c, h, w = x.shape
        c_out, _, kh, kw = weight.shape
        if padding == "same":
            pad_h, pad_w = _same_padding(kh, dilation), _same_padding(kw, dilation)
        else:
            pad_h, pad_w = (0, 0), (0, 0)
        if any(pad_h) or any(pad_w):
            x = np.pad(x, ((0, 0), (0, 0), pad_h, pad_w))
        padded_shape = x.shape
        out_h = (padded_shape[2] - dilation * (kh - 1) - 1) // stride + 1
        out_w = (padded_shape[3] - dilation * (kw - 1) - 1) // stride + 1

        if kh == 1 and kw == 1 and stride == 1:
            cols = x.reshape(n, c, out_h * out_w)
        else:
            cols = _im2col(x, kh, kw, stride, dilation, out_h, out_w)
        wmat = weight.reshape(c_out, -1)
        out = np.matmul(wmat, cols) + bias[None, :, None]

        self.cache.update(
            cols=cols, wmat=wmat, weight_shape=weight.shape, padded_shape=padded_shape,
            pad_h=pad_h, pad_w=pad_w, in_hw=(h, w), out_hw=(out_h, out_w),
            stride=stride, dilation=dilation,
        )
        return out.reshape(n, c_out, out_h, out_w)

    def backward(self, grad):
        cache = self.cache
        cols, wmat = cache["cols"], cache["wmat"]
        n, c_out = grad.shape[:2]
        out_h, out_w = cache["out_hw"]
        _, _, kh, kw = cache["weight_shape"]
        go = grad.reshape(n, c_out, out_h * out_w)

        grad_weight = np.tensordot(go, cols, axes=([0, 2], [0, 2])).reshape(cache["weight_shape"])
        grad_bias = go.sum(axis=(0, 2))
        grad_cols = np.matmul(wmat.T, go)
        padded_shape = cache["padded_shape"]
        if kh == 1 and kw == 1 and cache["stride"] == 1:
            grad_padded = grad_cols.reshape(padded_shape)
        else:
            grad_padded = _col2im(
                grad_cols, padded_shape, kh, kw, cache["stride"], cache["dilation"], out_h, out_w
            )
        h, w = cache["in_hw"]
        top, left = cache["pad_h"][0], cache["pad_w"][0]
        grad_x = grad_padded[:, :, top:top + h, left:left + w]
        return grad_x, grad_weight, grad_bias


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """2-D cross-correlation with zero padding; `same` keeps H, W (stride 1 only)"""
    if x.ndim != 4:
        raise ShapeError("conv2d input must be [N, C, H, W]", dim="rank", expected=4, got=x.ndim)
    if weight.ndim != 4:
        raise ShapeError("conv2d weight must be [Cout, Cin, kh, kw]", dim="rank", expected=4, got=weight.ndim)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d channel mismatch", dim="Cin", expected=weight.shape[1], got=x.shape[1])
    if stride < 1 or dilation < 1:
        raise ValueError(f"conv2d needs stride >= 1 and dilation >= 1, got {stride} and {dilation}")
    if padding not in ("same", "valid"):
        raise ValueError(f"Unknown padding mode: {padding}")
    if padding == "same" and stride != 1:
        raise ValueError("same padding is only defined for stride 1")
    c_out = weight.shape[0]
    if bias is None:
        bias = constant(np.zeros(c_out, dtype=weight.dtype))
    if bias.shape != (c_out,):
        raise ShapeError("conv2d bias must be [Cout]", dim="Cout", expected=c_out, got=bias.shape)
    if padding == "valid":
        _, _, kh, kw = weight.shape
        for label, size, k in (("H", x.shape[2], kh), ("W", x.shape[3], kw)):
            if size - dilation * (k - 1) - 1 < 0:
                raise ShapeError("conv2d kernel extent exceeds input", dim=label,
                                 expected=f">= {dilation * (k - 1) + 1}", got=size)
    return Conv2d.apply(x, weight, bias, stride=stride, dilation=dilation, padding=padding)


# --- elementwise -----------------------------------------------------------

POINTWISE_KINDS = ("relu", "sigmoid", "tanh", "abs")


class Pointwise(Function):
    op = "pointwise"

    def forward(self, x, kind="relu"):
        if kind == "relu":
            out = np.maximum(x, 0)
        elif kind == "sigmoid":
            out = expit(x)
        elif kind == "tanh":
            out = np.tanh(x)
        else:
            out = np.abs(x)
        self.cache.update(kind=kind, x=x, out=out)
        return out

    def backward(self, grad):
        kind, x, out = self.cache["kind"], self.cache["x"], self.cache["out"]
        if kind == "relu":
            return (grad * (x > 0),)
        if kind == "sigmoid":
            return (grad * out * (1 - out),)
        if kind == "tanh":
            return (grad * (1 - out * out),)
        return (grad * np.sign(x),)


def pointwise(kind: str, x: Tensor) -> Tensor:
    if kind not in POINTWISE_KINDS:
        raise ValueError(f"Unknown pointwise kind {kind!r}; expected one of {POINTWISE_KINDS}")
    return Pointwise.apply(x, kind=kind)


def relu(x: Tensor) -> Tensor:
    return pointwise("relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return pointwise("sigmoid", x)


def tanh(x: Tensor) -> Tensor:
    return pointwise("tanh", x)


def absolute(x: Tensor) -> Tensor:
    return pointwise("abs", x)


class Log(Function):
    op = "log"

    def forward(self, x):
        self.cache["x"] = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.cache["x"],)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


class Clip(Function):
    op = "clip"

    def forward(self, x, low=0.0, high=1.0):
        self.cache["mask"] = (x >= low) & (x <= high)
        return np.clip(x, low, high)

    def backward(self, grad):
        return (grad * self.cache["mask"],)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    if low > high:
        raise ValueError(f"clip bounds out of order: {low} > {high}")
    return Clip.apply(x, low=low, high=high)


class Affine(Function):
    """scale * x + shift with scalar constants"""

    op = "affine"

    def forward(self, x, scale=1.0, shift=0.0):
        self.cache["scale"] = scale
        return (x * scale + shift).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.cache["scale"],)


def affine(x: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    return Affine.apply(x, scale=scale, shift=shift)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} operands differ in shape", dim="shape", expected=a.shape, got=b.shape)


class Add(Function):
    op = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return Add.apply(a, b)


class Mul(Function):
    op = "mul"

    def forward(self, a, b):
        self.cache.update(a=a, b=b)
        return a * b

    def backward(self, grad):
        return grad * self.cache["b"], grad * self.cache["a"]


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return Mul.apply(a, b)


# --- pooling, dense, reshaping ---------------------------------------------

class MaxPool2d(Function):
    op = "max_pool2d"

    def forward(self, x, window=2):
        n, c, h, w = x.shape
        k = window
        windows = (
            x.reshape(n, c, h // k, k, w // k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // k, w // k, k * k)
        )
        # argmax returns the first maximum, i.e. row-major tie-break
        idx = windows.argmax(axis=-1)
        self.cache.update(idx=idx, shape=x.shape, window=k)
        return np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, c, h, w = self.cache["shape"]
        k = self.cache["window"]
        routed = np.zeros((n, c, h // k, w // k, k * k), dtype=grad.dtype)
        np.put_along_axis(routed, self.cache["idx"][..., None], grad[..., None], axis=-1)
        grad_x = routed.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (grad_x,)


def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    if stride != window:
        raise ValueError("max_pool2d supports non-overlapping windows only (stride == window)")
    if x.ndim != 4:
        raise ShapeError("max_pool2d input must be [N, C, H, W]", dim="rank", expected=4, got=x.ndim)
    for label, size in (("H", x.shape[2]), ("W", x.shape[3])):
        if size % window:
            raise ShapeError("max_pool2d needs sizes divisible by the window", dim=label,
                             expected=f"multiple of {window}", got=size)
    return MaxPool2d.apply(x, window=window)


class GlobalAvgPool(Function):
    op = "global_avg_pool"

    def forward(self, x):
        self.cache["shape"] = x.shape
        return x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype)

    def backward(self, grad):
        n, c, h, w = self.cache["shape"]
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("global_avg_pool input must be [N, C, H, W]", dim="rank", expected=4, got=x.ndim)
    return GlobalAvgPool.apply(x)


class Dense(Function):
    op = "dense"

    def forward(self, v, weight, bias):
        self.cache.update(v=v, weight=weight)
        return v @ weight.T + bias

    def backward(self, grad):
        v, weight = self.cache["v"], self.cache["weight"]
        return grad @ weight, grad.T @ v, grad.sum(axis=0)


def dense(v: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map v @ W.T + b for v [N, Cin], W [Cout, Cin], b [Cout]"""
    if v.ndim != 2 or weight.ndim != 2:
        raise ShapeError("dense expects v [N, Cin] and W [Cout, Cin]", dim="rank", expected=2,
                         got=(v.ndim, weight.ndim))
    if v.shape[1] != weight.shape[1]:
        raise ShapeError("dense inner dimension mismatch", dim="Cin", expected=weight.shape[1], got=v.shape[1])
    if bias.shape != (weight.shape[0],):
        raise ShapeError("dense bias must be [Cout]", dim="Cout", expected=weight.shape[0], got=bias.shape)
    return Dense.apply(v, weight, bias)


class ConcatChannels(Function):
    op = "concat_channels"

    def forward(self, *xs):
        self.cache["splits"] = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.cache["splits"], axis=1))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_channels needs at least one tensor")
    first = xs[0]
    for x in xs:
        if x.ndim != 4:
            raise ShapeError("concat_channels inputs must be [N, C, H, W]", dim="rank", expected=4, got=x.ndim)
        for axis, label in ((0, "N"), (2, "H"), (3, "W")):
            if x.shape[axis] != first.shape[axis]:
                raise ShapeError("concat_channels inputs disagree", dim=label,
                                 expected=first.shape[axis], got=x.shape[axis])
    if len(xs) == 1:
        return first
    return ConcatChannels.apply(*xs)


def _interp_axis(size: int, factor: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Neighbour indices, blend weights and dense matrix for half-pixel bilinear resampling"""
    src = (np.arange(size * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0, size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = src - i0
    matrix = np.zeros((size * factor, size))
    rows = np.arange(size * factor)
    np.add.at(matrix, (rows, i0), 1 - frac)
    np.add.at(matrix, (rows, i1), frac)
    return i0, i1, frac, matrix


class BilinearUpsample(Function):
    op = "bilinear_upsample"

    def forward(self, x, factor=2):
        _, _, h, w = x.shape
        h0, h1, fh, mh = _interp_axis(h, factor)
        w0, w1, fw, mw = _interp_axis(w, factor)
        fh = fh.astype(x.dtype)[:, None]
        fw = fw.astype(x.dtype)
        # x0 + t * (x1 - x0) reproduces constants exactly
        rows = x[:, :, h0, :] + fh * (x[:, :, h1, :] - x[:, :, h0, :])
        out = rows[:, :, :, w0] + fw * (rows[:, :, :, w1] - rows[:, :, :, w0])
        self.cache.update(mh=mh.astype(x.dtype), mw=mw.astype(x.dtype))
        return out

    def backward(self, grad):
        mh, mw = self.cache["mh"], self.cache["mw"]
        return (np.matmul(mh.T, np.matmul(grad, mw)),)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise ShapeError("bilinear_upsample input must be [N, C, H, W]", dim="rank", expected=4, got=x.ndim)
    if factor == 1:
        return x
    return BilinearUpsample.apply(x, factor=factor)


class BroadcastMul(Function):
    op = "broadcast_mul"

    def forward(self, x, w):
        per_channel = w.ndim == 2
        wb = w[:, :, None, None] if per_channel else w
        self.cache.update(x=x, wb=wb, per_channel=per_channel)
        return x * wb

    def backward(self, grad):
        x, wb = self.cache["x"], self.cache["wb"]
        grad_x = grad * wb
        if self.cache["per_channel"]:
            grad_w = (grad * x).sum(axis=(2, 3))
        else:
            grad_w = (grad * x).sum(axis=1, keepdims=True)
        return grad_x, grad_w


def broadcast_mul(x: Tensor, w: Tensor) -> Tensor:
    """Gate x [N,C,H,W] by a per-channel vector [N,C] or a spatial map [N,1,H,W]"""
    if x.ndim != 4:
        raise ShapeError("broadcast_mul input must be [N, C, H, W]", dim="rank", expected=4, got=x.ndim)
    n, c, h, w_ = x.shape
    if w.ndim == 2:
        if w.shape != (n, c):
            raise ShapeError("per-channel weights must be [N, C]", dim="weights", expected=(n, c), got=w.shape)
    elif w.ndim == 4:
        if w.shape != (n, 1, h, w_):
            raise ShapeError("spatial weights must be [N, 1, H, W]", dim="weights",
                             expected=(n, 1, h, w_), got=w.shape)
    else:
        raise ShapeError("broadcast_mul weights must be [N, C] or [N, 1, H, W]", dim="rank",
                         expected="2 or 4", got=w.ndim)
    return BroadcastMul.apply(x, w)


class EdgePad(Function):
    """Pad H and W by replicating the border row/column"""

    op = "edge_pad"

    def forward(self, x, width=1):
        h, w = x.shape[-2:]
        rows = np.clip(np.arange(-width, h + width), 0, h - 1)
        cols = np.clip(np.arange(-width, w + width), 0, w - 1)
        self.cache.update(rows=rows, cols=cols, hw=(h, w))
        return x[..., rows, :][..., cols]

    def backward(self, grad):
        h, w = self.cache["hw"]
        grad_rows = np.zeros(grad.shape[:-1] + (w,), dtype=grad.dtype)
        np.add.at(np.moveaxis(grad_rows, -1, 0), self.cache["cols"], np.moveaxis(grad, -1, 0))
        grad_x = np.zeros(grad.shape[:-2] + (h, w), dtype=grad.dtype)
        np.add.at(np.moveaxis(grad_x, -2, 0), self.cache["rows"], np.moveaxis(grad_rows, -2, 0))
        return (grad_x,)


def edge_pad(x: Tensor, width: int = 1) -> Tensor:
    if width < 0:
        raise ValueError(f"pad width must be non-negative, got {width}")
    if width == 0:
        return x
    return EdgePad.apply(x, width=width)


class ZeroPad(Function):
    """Pad H and W with zeros"""

    op = "zero_pad"

    def forward(self, x, width=1):
        self.cache["width"] = width
        pad = [(0, 0)] * (x.ndim - 2) + [(width, width), (width, width)]
        return np.pad(x, pad)

    def backward(self, grad):
        w = self.cache["width"]
        return (grad[..., w:-w, w:-w],)


def zero_pad(x: Tensor, width: int = 1) -> Tensor:
    if width < 0:
        raise ValueError(f"pad width must be non-negative, got {width}")
    if width == 0:
        return x
    return ZeroPad.apply(x, width=width)


class Crop(Function):
    """Window [top:top+height, left:left+width] of the last two axes"""

    op = "crop"

    def forward(self, x, top=0, left=0, height=1, width=1):
        self.cache.update(shape=x.shape, window=(slice(top, top + height), slice(left, left + width)))
        rows, cols = self.cache["window"]
        return x[..., rows, cols]

    def backward(self, grad):
        rows, cols = self.cache["window"]
        grad_x = np.zeros(self.cache["shape"], dtype=grad.dtype)
        grad_x[..., rows, cols] = grad
        return (grad_x,)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    h, w = x.shape[-2:]
    if top < 0 or left < 0 or height < 1 or width < 1 or top + height > h or left + width > w:
        raise ShapeError(f"crop window {height}x{width} at ({top}, {left}) does not fit {h}x{w}")
    return Crop.apply(x, top=top, left=left, height=height, width=width)


class ReduceSum(Function):
    op = "reduce_sum"

    def forward(self, x):
        self.cache["shape"] = x.shape
        return np.asarray(x.sum(dtype=np.float64), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.cache["shape"], grad, dtype=grad.dtype),)


class ReduceMean(Function):
    op = "reduce_mean"

    def forward(self, x):
        self.cache["shape"] = x.shape
        return np.asarray(x.mean(dtype=np.float64), dtype=x.dtype)

    def backward(self, grad):
        shape = self.cache["shape"]
        return (np.full(shape, grad / int(np.prod(shape)), dtype=grad.dtype),)


def reduce_sum(x: Tensor) -> Tensor:
    return ReduceSum.apply(x)


def reduce_mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError("reduce_mean of an empty tensor", dim="size", expected="> 0", got=0)
    return ReduceMean.apply(x)


# --- reverse mode ----------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in tensor._node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> Dict[str, np.ndarray]:
    """
    Propagate d(loss)/d(.) to every requires_grad leaf reachable from `loss`.

    Each leaf's `.grad` is overwritten with its gradient. The returned map holds
    the gradients of named leaves. Without retain_graph the recorded nodes drop
    their caches and a second backward through them raises GraphError.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    named: Dict[str, np.ndarray] = {}
    for tensor in reversed(_topological_order(loss)):
        grad = grads.pop(id(tensor), None)
        if grad is None:
            continue
        node = tensor._node
        if node is None:
            tensor.grad = grad
            if tensor.name is not None:
                named[tensor.name] = grad
            continue
        if node.consumed:
            raise GraphError(f"graph through {node.op} was already consumed; pass retain_graph=True")
        input_grads = node.backward(grad)
        for parent, parent_grad in zip(node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
        if not retain_graph:
            node.cache.clear()
            node.consumed = True
    return named
