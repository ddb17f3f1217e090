"""
Finite-difference gradient oracle and the per-operator / end-to-end suites
that compare it against backward() at double precision
"""

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from backbone import BackboneConfig
from losses import LossConfig, edge_bce, laplace_edge, total_loss, weighted_bce
from params import ModelParams
from pfa import CpfeConfig, HeadConfig, ModelConfig, build_model, pfa_forward
from tensor import (
    Tensor,
    affine,
    backward,
    bilinear_upsample,
    broadcast_mul,
    concat_channels,
    constant,
    conv2d,
    crop,
    dense,
    edge_pad,
    global_avg_pool,
    log,
    max_pool2d,
    mul,
    no_grad,
    pointwise,
    reduce_mean,
    reduce_sum,
    zero_pad,
)

logger = logging.getLogger(__name__)

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3
DEFAULT_SEEDS = 10
ERROR_FLOOR = 1e-3

Scalar = Union[Tensor, float]
# builder(rng, seed) -> (input arrays, fn(list of Tensors) -> output Tensor)
Builder = Callable[[np.random.Generator, int], Tuple[List[np.ndarray], Callable[[List[Tensor]], Tensor]]]


class GradcheckResult(BaseModel):
    op: str = Field(description="Operator or suite name")
    seeds: int = Field(ge=0, description="Number of seeds checked")
    max_error: float = Field(description="Largest relative error over seeds and inputs")
    tolerance: float
    passed: bool


def _scalar(value: Scalar) -> float:
    if isinstance(value, Tensor):
        return float(value.data.reshape(-1)[0])
    return float(value)


def finite_diff_grad(
    f: Callable[[Tensor], Scalar],
    x: Union[Tensor, np.ndarray],
    eps: float = 1e-6,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Central difference (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).

    With `indices` (flat positions) only those entries are evaluated and a 1-D
    array in the same order is returned; otherwise the result has x's shape.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    out = []
    with no_grad():
        for i in positions:
            saved = flat[i]
            flat[i] = saved + eps
            plus = _scalar(f(constant(base)))
            flat[i] = saved - eps
            minus = _scalar(f(constant(base)))
            flat[i] = saved
            out.append((plus - minus) / (2 * eps))
    grad = np.array(out, dtype=np.float64)
    return grad if indices is not None else grad.reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ERROR_FLOOR) -> float:
    """
    Largest entrywise |a - n| / max(|a|, |n|, floor).

    The floor keeps finite-difference round-off on near-zero gradients from
    dominating; a single wrong entry above the floor is never averaged away.
    """
    analytic = np.ravel(analytic).astype(np.float64)
    numeric = np.ravel(numeric).astype(np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    """Random values with |x| >= 0.1 so kinks at 0 stay outside the eps window"""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.5, size=shape)


def _conv_builder(padding: str, stride: int):
    def build(rng, seed):
        dilation = (1, 3, 5, 7)[seed % 4] if padding == "same" else 1 + seed % 2
        x = rng.normal(size=(1, 2, 8, 8))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        return [x, w, b], lambda t: conv2d(t[0], t[1], t[2], stride=stride, dilation=dilation, padding=padding)
    return build


def _pointwise_builder(kind: str):
    def build(rng, seed):
        x = _away_from_zero(rng, (2, 3, 4, 4)) if kind in ("relu", "abs") else rng.normal(size=(2, 3, 4, 4))
        return [x], lambda t: pointwise(kind, t[0])
    return build


def _build_max_pool(rng, seed):
    return [rng.normal(size=(2, 2, 6, 6))], lambda t: max_pool2d(t[0])


def _build_global_avg_pool(rng, seed):
    return [rng.normal(size=(2, 3, 5, 4))], lambda t: global_avg_pool(t[0])


def _build_dense(rng, seed):
    v, w, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)
    return [v, w, b], lambda t: dense(t[0], t[1], t[2])


def _build_concat(rng, seed):
    xs = [rng.normal(size=(2, c, 3, 3)) for c in (1, 3, 2)]
    return xs, lambda t: concat_channels(t)


def _build_upsample(rng, seed):
    factor = (2, 4)[seed % 2]
    return [rng.normal(size=(1, 2, 3, 5))], lambda t: bilinear_upsample(t[0], factor)


def _build_broadcast_mul(rng, seed):
    x = rng.normal(size=(2, 3, 4, 4))
    w = rng.normal(size=(2, 3)) if seed % 2 == 0 else rng.normal(size=(2, 1, 4, 4))
    return [x, w], lambda t: broadcast_mul(t[0], t[1])


def _build_mul(rng, seed):
    return [rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))], lambda t: mul(t[0], t[1])


def _build_log(rng, seed):
    return [rng.uniform(0.2, 2.0, size=(3, 4))], lambda t: log(t[0])


def _build_affine(rng, seed):
    scale, shift = rng.normal(), rng.normal()
    return [rng.normal(size=(3, 4))], lambda t: affine(t[0], scale, shift)


def _build_edge_pad(rng, seed):
    return [rng.normal(size=(1, 2, 4, 5))], lambda t: edge_pad(t[0], 1 + seed % 2)


def _build_zero_pad(rng, seed):
    return [rng.normal(size=(1, 2, 4, 5))], lambda t: zero_pad(t[0], 1 + seed % 2)


def _build_crop(rng, seed):
    top, left = seed % 3, (seed // 3) % 2
    return [rng.normal(size=(2, 1, 5, 6))], lambda t: crop(t[0], top, left, 3, 4)


def _build_reduce_mean(rng, seed):
    return [rng.normal(size=(2, 3, 4))], lambda t: reduce_mean(t[0])


def _build_laplace_edge(rng, seed):
    border = ("replicate", "zero")[seed % 2]
    return [rng.normal(size=(2, 1, 6, 6))], lambda t: laplace_edge(t[0], border=border)


def _binary_mask(rng, shape) -> np.ndarray:
    return (rng.uniform(size=shape) < 0.4).astype(np.float64)


def _build_weighted_bce(rng, seed):
    p = rng.uniform(0.05, 0.95, size=(2, 1, 5, 5))
    y = _binary_mask(rng, p.shape)
    reduction = ("sum", "mean")[seed % 2]
    return [p], lambda t: weighted_bce(t[0], y, reduction=reduction)


def _build_edge_bce(rng, seed):
    p = rng.uniform(0.05, 0.95, size=(1, 1, 6, 6))
    y = _binary_mask(rng, p.shape)
    reduction = ("sum", "mean")[seed % 2]
    return [p], lambda t: edge_bce(t[0], y, reduction=reduction)


OP_SUITES: Dict[str, Builder] = {
    "conv2d": _conv_builder("same", 1),
    "conv2d_valid": _conv_builder("valid", 2),
    "relu": _pointwise_builder("relu"),
    "sigmoid": _pointwise_builder("sigmoid"),
    "tanh": _pointwise_builder("tanh"),
    "abs": _pointwise_builder("abs"),
    "log": _build_log,
    "affine": _build_affine,
    "mul": _build_mul,
    "max_pool2d": _build_max_pool,
    "global_avg_pool": _build_global_avg_pool,
    "dense": _build_dense,
    "concat_channels": _build_concat,
    "bilinear_upsample": _build_upsample,
    "broadcast_mul": _build_broadcast_mul,
    "edge_pad": _build_edge_pad,
    "zero_pad": _build_zero_pad,
    "crop": _build_crop,
    "reduce_mean": _build_reduce_mean,
    "laplace_edge": _build_laplace_edge,
    "weighted_bce": _build_weighted_bce,
    "edge_bce": _build_edge_bce,
}


def check_op_seed(op: str, seed: int) -> float:
    """Max relative error over all inputs of `op` for f = sum(op(x) * R)"""
    if op not in OP_SUITES:
        raise KeyError(f"Unknown operator suite: {op}")
    rng = np.random.default_rng([seed, 7])
    arrays, fn = OP_SUITES[op](rng, seed)
    out_shape = fn([constant(a) for a in arrays]).shape
    weights = constant(rng.normal(size=out_shape))

    def objective(inputs: List[Tensor]) -> Tensor:
        out = fn(inputs)
        return reduce_sum(mul(out, weights)) if out.size > 1 else out

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(objective(leaves))

    worst = 0.0
    for k, leaf in enumerate(leaves):
        def f(x: Tensor, k=k) -> Tensor:
            inputs = [constant(a) for a in arrays]
            inputs[k] = x
            return objective(inputs)
        numeric = finite_diff_grad(f, arrays[k])
        worst = max(worst, relative_error(leaf.grad, numeric))
    return worst


def run_op_suite(op: str, seeds: Iterable[int] = range(DEFAULT_SEEDS), tolerance: float = OP_TOLERANCE) -> GradcheckResult:
    seeds = list(seeds)
    errors = [check_op_seed(op, seed) for seed in seeds]
    worst = max(errors) if errors else 0.0
    result = GradcheckResult(op=op, seeds=len(seeds), max_error=worst, tolerance=tolerance, passed=worst <= tolerance)
    log_fn = logger.info if result.passed else logger.error
    log_fn(f"gradcheck {op}: max relative error {worst:.3e} over {len(seeds)} seeds")
    return result


def tiny_model_config() -> ModelConfig:
    """Smallest configuration that still exercises every head component"""
    return ModelConfig(
        backbone=BackboneConfig(stage_channels=[2, 2, 2, 2, 2], convs_per_stage=[1, 1, 1, 1, 1], input_size=(16, 16)),
        cpfe=CpfeConfig(dilations=[3, 5, 7], branch_channels=2),
        head=HeadConfig(ca_reduction=4, sa_kernel=3, low_channels=2, fuse_channels=2),
        precision="double",
    )


def _with_replaced(params: ModelParams, name: str, array: np.ndarray) -> ModelParams:
    copy = ModelParams(params.dtype)
    for key, tensor in params.items():
        copy.add(key, array if key == name else tensor.data, trainable=tensor.requires_grad)
    return copy


def run_end_to_end(
    seed: int = 0,
    tolerance: float = END_TO_END_TOLERANCE,
    samples_per_tensor: int = 3,
    config: Optional[ModelConfig] = None,
) -> GradcheckResult:
    """
    pfa_forward + total_loss (alpha 0.7) on a tiny double-precision model,
    sampled entries per tensor. Biases are drawn away from zero so ReLU
    inputs do not sit on the kink.
    """
    config = config or tiny_model_config()
    params = build_model(config, seed)
    rng = np.random.default_rng([seed, 11])
    for name, tensor in params.items():
        if name.endswith(".bias"):
            sign = rng.choice([-1.0, 1.0], size=tensor.shape)
            params.replace(name, sign * rng.uniform(0.05, 0.2, size=tensor.shape))
    h, w = config.backbone.input_size
    image = constant(rng.uniform(size=(1, config.backbone.in_channels, h, w)))
    mask = _binary_mask(rng, (1, 1, h, w))
    loss_cfg = LossConfig(alpha=0.7, reduction="mean")

    def loss_of(p: ModelParams) -> Tensor:
        prediction, _ = pfa_forward(p, image, config)
        return total_loss(prediction, mask, loss_cfg)

    grads = backward(loss_of(params))
    analytic, numeric = [], []
    for name, tensor in params.trainable():
        count = min(samples_per_tensor, tensor.size)
        indices = rng.choice(tensor.size, size=count, replace=False)
        fd = finite_diff_grad(
            lambda x, name=name: loss_of(_with_replaced(params, name, x.data)),
            tensor.data, indices=indices,
        )
        analytic.append(grads[name].reshape(-1)[indices])
        numeric.append(fd)
    worst = relative_error(np.concatenate(analytic), np.concatenate(numeric))
    result = GradcheckResult(op="end_to_end", seeds=1, max_error=worst, tolerance=tolerance, passed=worst <= tolerance)
    log_fn = logger.info if result.passed else logger.error
    log_fn(f"gradcheck end-to-end: relative error {worst:.3e} over {len(analytic)} tensors")
    return result
