"""
Flat `key = value` run configuration.

Lines are tokenized with python-dotenv's parser so every binding keeps its
line number; values are then validated by the RunConfig pydantic model.
"""

import io
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from backbone import BackboneConfig
from data import AugmentConfig
from errors import ConfigError
from pfa import CpfeConfig, HeadConfig, ModelConfig
from train import PhaseConfig, TrainConfig

logger = logging.getLogger(__name__)

LIST_KEYS = ("stage_channels", "convs_per_stage", "dilations")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # paths
    data_dir: Optional[str] = Field(default=None, description="Training dataset directory (images/, masks/, manifest.txt)")
    val_dir: Optional[str] = Field(default=None, description="Optional held-out dataset evaluated after every epoch")

    # backbone
    stage_channels: List[int] = Field(default=[8, 16, 32, 32, 32])
    convs_per_stage: List[int] = Field(default=[2, 2, 3, 3, 3])
    image_size: int = Field(default=64, ge=16)
    precision: Literal["single", "double"] = "single"

    # head
    dilations: List[int] = Field(default=[3, 5, 7])
    branch_channels: int = Field(default=32, ge=1)
    ca_reduction: int = Field(default=4, ge=1)
    sa_kernel: int = Field(default=9, ge=1)
    low_channels: int = Field(default=32, ge=1)
    fuse_channels: int = Field(default=32, ge=1)
    use_cpfe: bool = True
    use_ca: bool = True
    use_low_level: bool = True
    use_sa: bool = True

    # loss
    alpha_s: float = Field(default=0.528, ge=0, le=1)
    clamp_eps: float = Field(default=1e-7, gt=0, lt=0.5)
    loss_mode: Literal["sum", "mean"] = "mean"
    edge_border: Literal["replicate", "zero"] = "replicate"
    use_edge_loss: bool = True

    # schedule
    phase1_alpha: float = Field(default=1.0, ge=0, le=1)
    phase1_lr: float = Field(default=1e-2, gt=0)
    phase1_epochs: int = Field(default=30, ge=0)
    phase2_alpha: float = Field(default=0.7, ge=0, le=1)
    phase2_lr: float = Field(default=1e-3, gt=0)
    phase2_epochs: int = Field(default=10, ge=0)
    batch_size: int = Field(default=8, ge=1)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    seed: int = 0

    # augmentation
    augment: bool = False
    rotate_max_deg: float = Field(default=15.0, ge=0, le=180)
    crop_fraction: float = Field(default=0.9, gt=0, le=1)
    brightness: float = Field(default=0.2, ge=0, lt=1)
    saturation: float = Field(default=0.2, ge=0, lt=1)
    contrast: float = Field(default=0.2, ge=0, lt=1)
    hflip_prob: float = Field(default=0.5, ge=0, le=1)
    augment_seed: int = 0

    @field_validator(*LIST_KEYS, mode="before")
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    def model(self) -> ModelConfig:
        return ModelConfig(
            backbone=BackboneConfig(
                stage_channels=self.stage_channels,
                convs_per_stage=self.convs_per_stage,
                input_size=(self.image_size, self.image_size),
            ),
            cpfe=CpfeConfig(dilations=self.dilations, branch_channels=self.branch_channels),
            head=HeadConfig(
                ca_reduction=self.ca_reduction, sa_kernel=self.sa_kernel,
                low_channels=self.low_channels, fuse_channels=self.fuse_channels,
                use_cpfe=self.use_cpfe, use_ca=self.use_ca, use_low_level=self.use_low_level, use_sa=self.use_sa,
            ),
            precision=self.precision,
        )

    def augmentation(self) -> Optional[AugmentConfig]:
        if not self.augment:
            return None
        return AugmentConfig(
            rotate_max_deg=self.rotate_max_deg, crop_fraction=self.crop_fraction,
            brightness=self.brightness, saturation=self.saturation, contrast=self.contrast,
            hflip_prob=self.hflip_prob, seed=self.augment_seed,
        )

    def training(self) -> TrainConfig:
        return TrainConfig(
            phase1=PhaseConfig(alpha=self.phase1_alpha, lr=self.phase1_lr, epochs=self.phase1_epochs),
            phase2=PhaseConfig(alpha=self.phase2_alpha, lr=self.phase2_lr, epochs=self.phase2_epochs),
            batch_size=self.batch_size, momentum=self.momentum, image_size=self.image_size, seed=self.seed,
            loss_mode=self.loss_mode, alpha_s=self.alpha_s, clamp_eps=self.clamp_eps,
            edge_border=self.edge_border, use_edge_loss=self.use_edge_loss, augment=self.augmentation(),
        )


def _line_of(binding) -> int:
    # the parser marks a binding before skipping the blank lines in front of it
    raw = binding.original.string
    leading = raw[:len(raw) - len(raw.lstrip())]
    return binding.original.line + leading.count("\n")


def _bindings(text: str) -> Tuple[Dict[str, str], Dict[str, int]]:
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    for binding in parse_stream(io.StringIO(text)):
        line = _line_of(binding)
        if binding.error:
            raise ConfigError(f"cannot parse {binding.original.string.strip()!r}", line=line)
        if binding.key is None:
            continue
        if binding.value is None:
            raise ConfigError(f"key {binding.key!r} has no value (expected key = value)", line=line)
        if binding.key in values:
            raise ConfigError(f"duplicate key {binding.key!r} (first set on line {lines[binding.key]})", line=line)
        if binding.key not in RunConfig.model_fields:
            raise ConfigError(f"unknown key {binding.key!r}", line=line)
        values[binding.key] = binding.value
        lines[binding.key] = line
    return values, lines


def parse_run_config(text: str) -> RunConfig:
    values, lines = _bindings(text)
    try:
        config = RunConfig(**values)
        # surface cross-field problems (divisibility, odd kernels) with the config
        config.model()
        config.training()
    except ValidationError as e:
        first = e.errors()[0]
        key = str(first["loc"][0]) if first["loc"] else ""
        raise ConfigError(f"{key or 'config'}: {first['msg']}", line=lines.get(key)) from e
    logger.debug(f"Parsed run config with {len(values)} explicit keys")
    return config


def load_run_config(path: Union[str, Path]) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))
