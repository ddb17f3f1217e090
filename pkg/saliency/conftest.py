"""
Shared fixtures; desk-scale experiments only run with RUN_SLOW=1
"""

import os

import pytest

from backbone import BackboneConfig
from data import synth_dataset
from pfa import CpfeConfig, HeadConfig, ModelConfig
from train import PhaseConfig, TrainConfig


def pytest_collection_modifyitems(config, items):
    if os.getenv("RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set RUN_SLOW=1 to run desk-scale experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_tiny_config(precision: str = "single", **head) -> ModelConfig:
    return ModelConfig(
        backbone=BackboneConfig(stage_channels=[4, 4, 8, 8, 8], convs_per_stage=[1, 1, 1, 1, 1], input_size=(16, 16)),
        cpfe=CpfeConfig(branch_channels=4),
        head=HeadConfig(sa_kernel=3, low_channels=4, fuse_channels=4, **head),
        precision=precision,
    )


@pytest.fixture
def tiny_config() -> ModelConfig:
    return make_tiny_config()


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(
        phase1=PhaseConfig(alpha=1.0, lr=1e-2, epochs=1),
        phase2=PhaseConfig(alpha=0.7, lr=1e-3, epochs=1),
        batch_size=2,
        image_size=16,
        seed=3,
    )


@pytest.fixture
def tiny_dataset():
    return synth_dataset(seed=5, n=4, size=(16, 16))
