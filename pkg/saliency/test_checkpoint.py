#!/usr/bin/env python3
"""
PFAC checkpoint round trips and rejection of damaged files
"""

import struct

import numpy as np
import pytest

from checkpoint import MAGIC, decode_state, encode_state, load_checkpoint, load_into, save_checkpoint
from errors import CheckpointError
from params import ModelParams
from pfa import build_model


def _small_params(seed=0) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = ModelParams(np.float32)
    params.add("conv.weight", rng.normal(size=(2, 1, 3, 3)))
    params.add("conv.bias", rng.normal(size=2))
    params.add("name/ünïcode", rng.normal(size=(4,)))
    return params


def test_round_trip_is_bit_exact(tmp_path):
    params = _small_params()
    path = tmp_path / "model.pfac"
    save_checkpoint(params, path)
    state = load_checkpoint(path)
    assert list(state) == params.names()
    for name, array in state.items():
        assert array.dtype == np.float32
        np.testing.assert_array_equal(array, params[name].data)
    assert not (tmp_path / "model.pfac.tmp").exists()


def test_layout_is_little_endian():
    data = encode_state({"w": np.array([[1.5]], dtype=np.float32)})
    assert data[:4] == MAGIC
    assert struct.unpack("<III", data[4:16]) == (1, 1, 1)
    assert data[16:17] == b"w"
    assert struct.unpack("<III", data[17:29]) == (2, 1, 1)
    assert struct.unpack("<f", data[29:33]) == (1.5,)
    assert len(data) == 33


def test_identical_params_give_identical_bytes(tiny_config):
    a = encode_state(build_model(tiny_config, seed=4).state())
    b = encode_state(build_model(tiny_config, seed=4).state())
    assert a == b


@pytest.mark.parametrize("damage", [
    lambda d: b"PFAX" + d[4:],
    lambda d: d[:4] + struct.pack("<I", 2) + d[8:],
    lambda d: d[:-3],
    lambda d: d + b"\x00",
    lambda d: d[:10],
])
def test_damaged_files_are_rejected(damage):
    data = encode_state(_small_params().state())
    with pytest.raises(CheckpointError):
        decode_state(damage(data))


def test_mismatched_checkpoint_names_the_tensor_and_changes_nothing(tmp_path):
    path = tmp_path / "other.pfac"
    other = ModelParams(np.float32)
    other.add("conv.weight", np.zeros((3, 1, 3, 3)))
    other.add("conv.bias", np.zeros(2))
    other.add("name/ünïcode", np.zeros(4))
    save_checkpoint(other, path)

    params = _small_params()
    before = {name: t.data.copy() for name, t in params.items()}
    with pytest.raises(CheckpointError, match="conv.weight"):
        load_into(params, path)
    for name, array in before.items():
        np.testing.assert_array_equal(params[name].data, array)


def test_missing_tensor_is_named(tmp_path, tiny_config):
    params = build_model(tiny_config, seed=0)
    state = params.state()
    state.pop("head.out.bias")
    path = tmp_path / "partial.pfac"
    path.write_bytes(encode_state(state))
    with pytest.raises(CheckpointError, match="head.out.bias"):
        load_into(params, path)


def test_load_into_restores_weights(tmp_path, tiny_config):
    trained = build_model(tiny_config, seed=1)
    save_checkpoint(trained, tmp_path / "t.pfac")
    fresh = load_into(build_model(tiny_config, seed=2), tmp_path / "t.pfac")
    for name in trained:
        np.testing.assert_array_equal(fresh[name].data, trained[name].data)
