"""
PFA head: context-aware pyramid feature extraction, channel-wise and spatial
attention, low-level combination and the fusion head producing the saliency map
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from backbone import BackboneConfig, SideOutputs, build_backbone, forward_sides
from errors import ShapeError
from params import PRECISIONS, ModelParams, add_conv, add_dense
from tensor import (
    Tensor,
    add,
    bilinear_upsample,
    broadcast_mul,
    concat_channels,
    conv2d,
    dense,
    global_avg_pool,
    relu,
    sigmoid,
)

logger = logging.getLogger(__name__)


class CpfeConfig(BaseModel):
    dilations: List[int] = Field(default=[3, 5, 7], description="Dilation rates of the 3x3 branches")
    branch_channels: int = Field(default=32, ge=1, description="Output channels of every CPFE convolution")

    @field_validator("dilations")
    @classmethod
    def _positive(cls, value: List[int]) -> List[int]:
        if not value or any(d < 1 for d in value):
            raise ValueError(f"dilations must be a non-empty list of positive integers, got {value}")
        return value

    @property
    def level_channels(self) -> int:
        return (len(self.dilations) + 1) * self.branch_channels


class HeadConfig(BaseModel):
    ca_reduction: int = Field(default=4, ge=1, description="Bottleneck ratio of the channel attention FCs")
    sa_kernel: int = Field(default=9, ge=1, description="k of the 1xk / kx1 spatial attention kernels")
    low_channels: int = Field(default=32, ge=1, description="Width of the 3x3 conv on each low-level side")
    fuse_channels: int = Field(default=32, ge=1, description="Width of the 1x1 reductions before fusion")
    use_cpfe: bool = Field(default=True, description="Pyramid extraction on the high-level sides")
    use_ca: bool = Field(default=True, description="Channel-wise attention on the high-level path")
    use_low_level: bool = Field(default=True, description="Fuse the low-level path")
    use_sa: bool = Field(default=True, description="Gate the low-level path with spatial attention")

    @field_validator("sa_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"spatial attention kernel must be odd, got {value}")
        return value

    @model_validator(mode="after")
    def _sa_needs_low_level(self) -> "HeadConfig":
        if self.use_sa and not self.use_low_level:
            raise ValueError("use_sa gates the low-level path and requires use_low_level")
        return self


class ModelConfig(BaseModel):
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    cpfe: CpfeConfig = Field(default_factory=CpfeConfig)
    head: HeadConfig = Field(default_factory=HeadConfig)
    precision: Literal["single", "double"] = Field(default="single", description="Parameter storage precision")

    @property
    def high_channels(self) -> int:
        if self.head.use_cpfe:
            return 3 * self.cpfe.level_channels
        return sum(self.backbone.stage_channels[2:])

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @model_validator(mode="after")
    def _bottleneck_divides(self) -> "ModelConfig":
        if self.head.use_ca and self.high_channels % self.head.ca_reduction:
            raise ValueError(
                f"high-level channels {self.high_channels} not divisible by ca_reduction {self.head.ca_reduction}"
            )
        return self


@dataclass
class AttentionWeights:
    """ca: [N, C] channel gates; sa: [N, 1, H/4, W/4] spatial gates (None when switched off)"""

    ca: Optional[Tensor] = None
    sa: Optional[Tensor] = None


def build_head(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng([seed, 1])
    params = ModelParams(dtype)
    head = config.head
    stage_channels = config.backbone.stage_channels
    b = config.cpfe.branch_channels

    if head.use_cpfe:
        for level in (3, 4, 5):
            c_in = stage_channels[level - 1]
            add_conv(params, rng, f"head.cpfe{level}.conv1x1", c_in, b, 1)
            for d in config.cpfe.dilations:
                add_conv(params, rng, f"head.cpfe{level}.dil{d}", c_in, b, 3)

    c = config.high_channels
    if head.use_ca:
        add_dense(params, rng, "head.ca.fc1", c, c // head.ca_reduction)
        add_dense(params, rng, "head.ca.fc2", c // head.ca_reduction, c)

    if head.use_sa:
        k, mid = head.sa_kernel, max(1, c // 2)
        add_conv(params, rng, "head.sa.a1", c, mid, 1, k)
        add_conv(params, rng, "head.sa.a2", mid, 1, k, 1)
        add_conv(params, rng, "head.sa.b1", c, mid, k, 1)
        add_conv(params, rng, "head.sa.b2", mid, 1, 1, k)

    fused = head.fuse_channels
    if head.use_low_level:
        add_conv(params, rng, "head.low1", stage_channels[0], head.low_channels, 3)
        add_conv(params, rng, "head.low2", stage_channels[1], head.low_channels, 3)
    add_conv(params, rng, "head.fuse_high", c, head.fuse_channels, 1)
    if head.use_low_level:
        add_conv(params, rng, "head.fuse_low", 2 * head.low_channels, head.fuse_channels, 1)
        fused += head.fuse_channels
    add_conv(params, rng, "head.out", fused, 1, 3)
    return params


def build_model(config: ModelConfig, seed: int) -> ModelParams:
    """Backbone and head parameters in one collection, stored at config.precision"""
    params = build_backbone(config.backbone, seed, dtype=config.dtype)
    params.update(build_head(config, seed, dtype=config.dtype))
    logger.info(f"Built model with {params.count()} parameters ({len(params)} tensors, {config.precision})")
    return params


def _conv(params: ModelParams, prefix: str, x: Tensor, dilation: int = 1) -> Tensor:
    return conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], dilation=dilation)


def _check_ladder(h3: Tensor, h4: Tensor, h5: Tensor) -> None:
    for label, axis in (("H", 2), ("W", 3)):
        if h4.shape[axis] * 2 != h3.shape[axis]:
            raise ShapeError("level-4 side is not half of level 3", dim=label,
                             expected=h3.shape[axis] // 2, got=h4.shape[axis])
        if h5.shape[axis] * 4 != h3.shape[axis]:
            raise ShapeError("level-5 side is not a quarter of level 3", dim=label,
                             expected=h3.shape[axis] // 4, got=h5.shape[axis])


def cpfe_level(params: ModelParams, level: int, f: Tensor, cfg: CpfeConfig) -> Tensor:
    """[1x1 | 3x3 dil d for d in dilations] branches, ReLU each, concatenated"""
    prefix = f"head.cpfe{level}"
    branches = [relu(_conv(params, f"{prefix}.conv1x1", f))]
    for d in cfg.dilations:
        branches.append(relu(_conv(params, f"{prefix}.dil{d}", f, dilation=d)))
    return concat_channels(branches)


def cpfe_pyramid(params: ModelParams, h3: Tensor, h4: Tensor, h5: Tensor, cfg: CpfeConfig) -> Tensor:
    """Per-level CPFE, levels 4 and 5 upsampled to level 3, channel order (3 | 4 | 5)"""
    _check_ladder(h3, h4, h5)
    return concat_channels([
        cpfe_level(params, 3, h3, cfg),
        bilinear_upsample(cpfe_level(params, 4, h4, cfg), 2),
        bilinear_upsample(cpfe_level(params, 5, h5, cfg), 4),
    ])


def channel_attention(params: ModelParams, f: Tensor, reduction: int) -> Tuple[Tensor, Tensor]:
    c = f.shape[1]
    if c % reduction:
        raise ShapeError("channel count not divisible by the attention reduction", dim="C",
                         expected=f"multiple of {reduction}", got=c)
    v = global_avg_pool(f)
    hidden = relu(dense(v, params["head.ca.fc1.weight"], params["head.ca.fc1.bias"]))
    ca = sigmoid(dense(hidden, params["head.ca.fc2.weight"], params["head.ca.fc2.bias"]))
    return ca, broadcast_mul(f, ca)


def spatial_attention(params: ModelParams, f_h: Tensor, k: int = 9) -> Tensor:
    """sigmoid(kx1(1xk(f)) + 1xk(kx1(f))), single channel at the resolution of f_h"""
    if k % 2 == 0:
        raise ValueError(f"spatial attention kernel must be odd, got {k}")
    for name in ("a1", "b2"):
        kernel = params[f"head.sa.{name}.weight"].shape
        if kernel[2:] != (1, k):
            raise ShapeError(f"head.sa.{name} kernel does not match k", dim="kernel", expected=(1, k), got=kernel[2:])
    branch_a = _conv(params, "head.sa.a2", _conv(params, "head.sa.a1", f_h))
    branch_b = _conv(params, "head.sa.b2", _conv(params, "head.sa.b1", f_h))
    return sigmoid(add(branch_a, branch_b))


def low_level_combine(params: ModelParams, low1: Tensor, low2: Tensor) -> Tensor:
    for label, axis in (("H", 2), ("W", 3)):
        if low2.shape[axis] * 2 != low1.shape[axis]:
            raise ShapeError("low-level sides must differ by a factor of 2", dim=label,
                             expected=low1.shape[axis] // 2, got=low2.shape[axis])
    c1 = relu(_conv(params, "head.low1", low1))
    c2 = bilinear_upsample(relu(_conv(params, "head.low2", low2)), 2)
    return concat_channels([c1, c2])


def high_level_features(params: ModelParams, sides: SideOutputs, config: ModelConfig) -> Tensor:
    if config.head.use_cpfe:
        return cpfe_pyramid(params, sides.high3, sides.high4, sides.high5, config.cpfe)
    _check_ladder(sides.high3, sides.high4, sides.high5)
    return concat_channels([
        sides.high3,
        bilinear_upsample(sides.high4, 2),
        bilinear_upsample(sides.high5, 4),
    ])


def pfa_forward(params: ModelParams, image: Tensor, config: ModelConfig) -> Tuple[Tensor, AttentionWeights]:
    """
    Saliency map P [N, 1, H, W] in (0, 1) plus the attention gates.

    The high path is reduced to fuse_channels at 1/4 resolution before the x4
    upsample; the 1x1 reduction and bilinear upsampling are both linear, so
    this equals reducing after upsampling.
    """
    head = config.head
    sides = forward_sides(params, image)
    high = high_level_features(params, sides, config)
    scale = image.shape[2] // high.shape[2]

    aux = AttentionWeights()
    if head.use_ca:
        aux.ca, high = channel_attention(params, high, head.ca_reduction)

    fused = [bilinear_upsample(_conv(params, "head.fuse_high", high), scale)]
    if head.use_low_level:
        low = low_level_combine(params, sides.low1, sides.low2)
        if head.use_sa:
            aux.sa = spatial_attention(params, high, head.sa_kernel)
            low = broadcast_mul(low, bilinear_upsample(aux.sa, scale))
        fused.append(_conv(params, "head.fuse_low", low))

    logits = _conv(params, "head.out", concat_channels(fused))
    return sigmoid(logits), aux
