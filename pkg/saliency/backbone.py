"""
VGG-style five-stage backbone exposing the side outputs the PFA head consumes.

Weights start from He initialization (no ImageNet import); training fine-tunes
every backbone tensor together with the head.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from errors import ShapeError
from params import ModelParams, add_conv
from tensor import Tensor, conv2d, max_pool2d, relu

logger = logging.getLogger(__name__)

NUM_STAGES = 5
DOWNSAMPLE = 2 ** (NUM_STAGES - 1)

VGG16_STAGE_CHANNELS = [64, 128, 256, 512, 512]
VGG16_CONVS_PER_STAGE = [2, 2, 3, 3, 3]


class BackboneConfig(BaseModel):
    stage_channels: List[int] = Field(
        default=[8, 16, 32, 32, 32],
        description="Output channels of the five stages (VGG-16 is 64,128,256,512,512)",
    )
    convs_per_stage: List[int] = Field(
        default=list(VGG16_CONVS_PER_STAGE), description="3x3 convolutions in each stage"
    )
    input_size: Tuple[int, int] = Field(default=(64, 64), description="Training image (H, W)")
    in_channels: int = Field(default=3, ge=1, description="Image channels")

    @field_validator("stage_channels", "convs_per_stage")
    @classmethod
    def _five_positive(cls, value: List[int]) -> List[int]:
        if len(value) != NUM_STAGES:
            raise ValueError(f"expected {NUM_STAGES} values, got {len(value)}")
        if any(v < 1 for v in value):
            raise ValueError(f"all values must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def _input_divisible(self) -> "BackboneConfig":
        h, w = self.input_size
        if h < DOWNSAMPLE or w < DOWNSAMPLE or h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ValueError(f"input_size must be positive multiples of {DOWNSAMPLE}, got {self.input_size}")
        return self


@dataclass
class SideOutputs:
    """Backbone features at 1, 1/2, 1/4, 1/8 and 1/16 of the input resolution"""

    low1: Tensor
    low2: Tensor
    high3: Tensor
    high4: Tensor
    high5: Tensor

    def as_list(self) -> List[Tensor]:
        return [self.low1, self.low2, self.high3, self.high4, self.high5]


def stage_convs(params: ModelParams, stage: int) -> List[str]:
    """Parameter prefixes of the convolutions in `stage` (1-based), in order"""
    prefixes = []
    j = 1
    while f"backbone.stage{stage}.conv{j}.weight" in params:
        prefixes.append(f"backbone.stage{stage}.conv{j}")
        j += 1
    return prefixes


def build_backbone(config: BackboneConfig, seed: int, dtype=np.float32) -> ModelParams:
    """He-initialized kernels (variance 2/fan_in), zero biases, deterministic in seed"""
    rng = np.random.default_rng(seed)
    params = ModelParams(dtype)
    c_in = config.in_channels
    for stage, (c_out, n_convs) in enumerate(zip(config.stage_channels, config.convs_per_stage), start=1):
        for j in range(1, n_convs + 1):
            add_conv(params, rng, f"backbone.stage{stage}.conv{j}", c_in, c_out, 3)
            c_in = c_out
    logger.debug(f"Built backbone with {params.count()} parameters")
    return params


def forward_sides(params: ModelParams, image: Tensor) -> SideOutputs:
    if image.ndim != 4:
        raise ShapeError("image must be [N, C, H, W]", dim="rank", expected=4, got=image.ndim)
    for label, size in (("H", image.shape[2]), ("W", image.shape[3])):
        if size % DOWNSAMPLE:
            raise ShapeError("image size must be divisible by 16", dim=label,
                             expected=f"multiple of {DOWNSAMPLE}", got=size)

    sides = []
    x = image
    for stage in range(1, NUM_STAGES + 1):
        if stage > 1:
            x = max_pool2d(x)
        prefixes = stage_convs(params, stage)
        if not prefixes:
            raise KeyError(f"No convolutions found for backbone stage {stage}")
        for prefix in prefixes:
            x = relu(conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"]))
        sides.append(x)
    return SideOutputs(*sides)
