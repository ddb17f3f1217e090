"""
Saliency losses: class-balanced cross-entropy, Laplace edge extraction,
boundary cross-entropy and their weighted total
"""

import logging
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, Field

from errors import ShapeError
from tensor import (
    Tensor,
    absolute,
    add,
    affine,
    clip,
    constant,
    crop,
    edge_pad,
    log,
    mul,
    reduce_mean,
    reduce_sum,
    tanh,
    zero_pad,
)

logger = logging.getLogger(__name__)

# (top, left) offsets of the up, down, left and right neighbours in a 1-pixel padded map
NEIGHBOURS = ((0, 1), (2, 1), (1, 0), (1, 2))

Reduction = Literal["sum", "mean"]
MapLike = Union[Tensor, np.ndarray]


class LossConfig(BaseModel):
    alpha_s: float = Field(default=0.528, ge=0, le=1, description="Positive-class weight of the saliency BCE")
    alpha: float = Field(default=1.0, ge=0, le=1, description="Mix between saliency and boundary loss")
    clamp_eps: float = Field(default=1e-7, gt=0, lt=0.5, description="Probabilities are clamped to [eps, 1-eps]")
    reduction: Reduction = Field(default="sum", description="sum over pixels, or per-pixel mean")
    edge_border: Literal["replicate", "zero"] = Field(
        default="replicate", description="Border handling of the Laplace convolution"
    )


def _as_tensor(value: MapLike, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(np.asarray(value), dtype=like.dtype)


def _reduce(x: Tensor, reduction: Reduction) -> Tensor:
    if reduction == "mean":
        return reduce_mean(x)
    if reduction == "sum":
        return reduce_sum(x)
    raise ValueError(f"Unknown reduction {reduction!r}")


def _cross_entropy(p: Tensor, target: np.ndarray, pos_weight: float, neg_weight: float,
                   eps: float, reduction: Reduction) -> Tensor:
    """-reduce(pos_weight * t * log p + neg_weight * (1 - t) * log(1 - p)), p clamped"""
    p = clip(p, eps, 1.0 - eps)
    pos = mul(constant(pos_weight * target, dtype=p.dtype), log(p))
    neg = mul(constant(neg_weight * (1.0 - target), dtype=p.dtype), log(affine(p, -1.0, 1.0)))
    return affine(_reduce(add(pos, neg), reduction), -1.0)


def weighted_bce(
    p: Tensor,
    y: MapLike,
    alpha_s: float = 0.528,
    eps: float = 1e-7,
    reduction: Reduction = "sum",
) -> Tensor:
    y_data = y.data if isinstance(y, Tensor) else np.asarray(y)
    if p.shape != y_data.shape:
        raise ShapeError("prediction and ground truth differ in shape", dim="shape", expected=p.shape, got=y_data.shape)
    return _cross_entropy(p, y_data, alpha_s, 1.0 - alpha_s, eps, reduction)


def laplace_edge(m: MapLike, border: str = "replicate") -> Tensor:
    """
    tanh(|M * K|) with the 4-neighbour Laplace kernel K.

    The response is summed as (up - c) + (down - c) + (left - c) + (right - c)
    on the padded map, so equal neighbours cancel exactly and a constant map
    gives exactly zero. border="replicate" extends the map by its edge pixels;
    border="zero" pads with zeros, which makes the image frame itself an edge
    for any non-zero map.
    """
    m = m if isinstance(m, Tensor) else constant(np.asarray(m, dtype=np.float64))
    if m.ndim != 4 or m.shape[1] != 1:
        raise ShapeError("laplace_edge expects a single-channel map [N, 1, H, W]", dim="C", expected=1,
                         got=m.shape[1] if m.ndim == 4 else m.shape)
    if border == "replicate":
        padded = edge_pad(m, 1)
    elif border == "zero":
        padded = zero_pad(m, 1)
    else:
        raise ValueError(f"Unknown border mode {border!r}")
    h, w = m.shape[2:]
    neg_center = affine(crop(padded, 1, 1, h, w), -1.0)
    diffs = [add(crop(padded, top, left, h, w), neg_center) for top, left in NEIGHBOURS]
    response = add(add(diffs[0], diffs[1]), add(diffs[2], diffs[3]))
    return tanh(absolute(response))


def edge_bce(
    p: Tensor,
    y: MapLike,
    eps: float = 1e-7,
    reduction: Reduction = "sum",
    border: str = "replicate",
) -> Tensor:
    """Unweighted cross-entropy between laplace_edge(P) and the soft target laplace_edge(Y)"""
    y_tensor = _as_tensor(y, p)
    if p.shape != y_tensor.shape:
        raise ShapeError("prediction and ground truth differ in shape", dim="shape", expected=p.shape, got=y_tensor.shape)
    delta_y = laplace_edge(y_tensor.detach(), border=border).data
    delta_p = laplace_edge(p, border=border)
    return _cross_entropy(delta_p, delta_y, 1.0, 1.0, eps, reduction)


def total_loss(p: Tensor, y: MapLike, cfg: LossConfig) -> Tensor:
    """alpha * L_S + (1 - alpha) * L_B; a term with zero weight is not evaluated"""
    if cfg.alpha == 1.0:
        return weighted_bce(p, y, cfg.alpha_s, cfg.clamp_eps, cfg.reduction)
    l_b = edge_bce(p, y, cfg.clamp_eps, cfg.reduction, cfg.edge_border)
    if cfg.alpha == 0.0:
        return l_b
    l_s = weighted_bce(p, y, cfg.alpha_s, cfg.clamp_eps, cfg.reduction)
    return add(affine(l_s, cfg.alpha), affine(l_b, 1.0 - cfg.alpha))
