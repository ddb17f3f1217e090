#!/usr/bin/env python3
"""
Tests for the tensor engine: operator values, shape contracts and backward()
"""

import numpy as np
import pytest

from errors import GraphError, ShapeError
from tensor import (
    Tensor,
    absolute,
    add,
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
    is_grad_enabled,
    max_pool2d,
    mul,
    no_grad,
    reduce_mean,
    reduce_sum,
    relu,
    sigmoid,
    tanh,
    zero_pad,
)


def test_conv2d_all_ones_center_is_nine():
    x = constant(np.ones((1, 1, 5, 5)))
    w = constant(np.ones((1, 1, 3, 3)))
    out = conv2d(x, w)
    assert out.shape == (1, 1, 5, 5)
    assert out.data[0, 0, 2, 2] == 9.0
    # zero padding at the corner leaves a 2x2 overlap
    assert out.data[0, 0, 0, 0] == 4.0


@pytest.mark.parametrize("dilation", [1, 3, 5, 7])
def test_conv2d_same_padding_keeps_shape(dilation):
    x = constant(np.random.default_rng(0).normal(size=(1, 2, 64, 64)))
    w = constant(np.ones((4, 2, 3, 3)))
    assert conv2d(x, w, dilation=dilation).shape == (1, 4, 64, 64)


def test_conv2d_zero_weight_zero_output():
    x = constant(np.random.default_rng(1).normal(size=(2, 3, 8, 8)))
    out = conv2d(x, constant(np.zeros((5, 3, 3, 3))), constant(np.zeros(5)))
    assert out.shape == (2, 5, 8, 8)
    assert not out.data.any()


def test_conv2d_valid_output_size():
    x = constant(np.zeros((1, 1, 11, 9)))
    out = conv2d(x, constant(np.zeros((1, 1, 3, 3))), stride=2, dilation=2, padding="valid")
    # floor((H - d(k-1) - 1) / s) + 1
    assert out.shape == (1, 1, (11 - 4 - 1) // 2 + 1, (9 - 4 - 1) // 2 + 1)


def test_conv2d_channel_mismatch_names_dimension():
    with pytest.raises(ShapeError) as excinfo:
        conv2d(constant(np.zeros((1, 2, 4, 4))), constant(np.zeros((1, 3, 3, 3))))
    assert excinfo.value.dim == "Cin"
    assert "Cin" in str(excinfo.value)


def test_conv2d_same_padding_rejects_stride():
    with pytest.raises(ValueError):
        conv2d(constant(np.zeros((1, 1, 4, 4))), constant(np.zeros((1, 1, 3, 3))), stride=2)


@pytest.mark.parametrize("dilation", [1, 3, 5, 7])
def test_conv2d_is_linear(dilation):
    rng = np.random.default_rng(dilation)
    w = constant(rng.normal(size=(3, 2, 3, 3)))
    x, y = rng.normal(size=(2, 1, 2, 10, 10))
    a, b = 1.7, -0.4
    lhs = conv2d(constant(a * x + b * y), w).data
    rhs = a * conv2d(constant(x), w).data + b * conv2d(constant(y), w).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10, rtol=0)


def test_pointwise_values():
    assert sigmoid(constant([0.0])).data[0] == 0.5
    assert tanh(constant([4.0])).data[0] == pytest.approx(0.999329299739067, abs=1e-12)
    assert relu(constant([-2.0])).data[0] == 0.0
    assert absolute(constant([-2.0])).data[0] == 2.0


def test_sigmoid_and_edge_ranges():
    x = np.random.default_rng(2).uniform(-20, 20, size=1000)
    s = sigmoid(constant(x)).data
    assert np.all((s > 0) & (s < 1))
    e = tanh(absolute(constant(np.random.default_rng(3).normal(scale=3, size=1000)))).data
    assert np.all((e >= 0) & (e < 1))


def test_max_pool_values_and_gradient():
    x = Tensor(np.array([[[[1.0, 3.0], [5.0, 7.0]]]]), requires_grad=True)
    out = max_pool2d(x)
    assert out.data.item() == 7.0
    backward(reduce_sum(out))
    np.testing.assert_array_equal(x.grad, [[[[0.0, 0.0], [0.0, 1.0]]]])


def test_max_pool_ties_route_to_first_element():
    x = Tensor(np.full((1, 1, 2, 2), 2.5), requires_grad=True)
    backward(reduce_sum(max_pool2d(x)))
    np.testing.assert_array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])


def test_max_pool_constant_and_divisibility():
    out = max_pool2d(constant(np.full((1, 2, 6, 4), 3.0)))
    np.testing.assert_array_equal(out.data, np.full((1, 2, 3, 2), 3.0))
    with pytest.raises(ShapeError):
        max_pool2d(constant(np.zeros((1, 1, 5, 4))))


def test_global_avg_pool():
    x = constant(np.array([[[[1.0, 3.0], [5.0, 7.0]], [[2.0, 2.0], [2.0, 2.0]]]]))
    np.testing.assert_array_equal(global_avg_pool(x).data, [[4.0, 2.0]])
    assert not global_avg_pool(constant(np.zeros((2, 3, 4, 4)))).data.any()


def test_dense_examples():
    v = constant([[1.0, 2.0]])
    np.testing.assert_array_equal(dense(v, constant([[3.0, 4.0]]), constant([1.0])).data, [[12.0]])
    np.testing.assert_array_equal(dense(v, constant(np.eye(2)), constant(np.zeros(2))).data, v.data)
    np.testing.assert_array_equal(dense(v, constant(np.zeros((1, 2))), constant([0.3])).data, [[0.3]])
    with pytest.raises(ShapeError):
        dense(v, constant(np.zeros((1, 3))), constant([0.0]))


def test_concat_channels():
    maps = [constant(np.full((1, 32, 4, 4), float(i))) for i in range(4)]
    out = concat_channels(maps)
    assert out.shape == (1, 128, 4, 4)
    for i in range(4):
        np.testing.assert_array_equal(out.data[:, 32 * i:32 * (i + 1)], maps[i].data)
    assert concat_channels(maps[:1]) is maps[0]
    assert concat_channels([constant(np.zeros((1, 128, 2, 2)))] * 3).shape == (1, 384, 2, 2)
    with pytest.raises(ShapeError):
        concat_channels([constant(np.zeros((1, 1, 4, 4))), constant(np.zeros((1, 1, 4, 2)))])


def test_bilinear_upsample_ramp():
    out = bilinear_upsample(constant(np.array([[[[0.0, 1.0]]]])), 2)
    np.testing.assert_allclose(out.data[0, 0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-15)
    assert out.shape == (1, 1, 2, 4)


@pytest.mark.parametrize("factor", [2, 4])
def test_bilinear_upsample_preserves_constants_exactly(factor):
    x = constant(np.full((2, 3, 3, 5), 0.123456789))
    out = bilinear_upsample(x, factor)
    assert out.shape == (2, 3, 3 * factor, 5 * factor)
    assert np.all(out.data == 0.123456789)


def test_bilinear_upsample_factor_one_is_identity():
    x = constant(np.random.default_rng(4).normal(size=(1, 2, 3, 3)))
    assert bilinear_upsample(x, 1) is x


def test_broadcast_mul_shapes():
    x = constant(np.ones((2, 3, 4, 4)))
    per_channel = broadcast_mul(x, constant(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])))
    assert per_channel.data[1, 2, 3, 3] == 6.0
    spatial = broadcast_mul(x, constant(np.full((2, 1, 4, 4), 0.5)))
    assert np.all(spatial.data == 0.5)
    with pytest.raises(ShapeError):
        broadcast_mul(x, constant(np.ones((2, 2))))
    with pytest.raises(ShapeError):
        broadcast_mul(x, constant(np.ones((2, 3, 4, 4))))


def test_edge_pad_replicates_border():
    x = constant(np.arange(4.0).reshape(1, 1, 2, 2))
    out = edge_pad(x, 1).data[0, 0]
    np.testing.assert_array_equal(out, [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_zero_pad_and_crop_invert_each_other():
    x = Tensor(np.arange(6.0).reshape(1, 1, 2, 3), requires_grad=True)
    padded = zero_pad(x, 1)
    assert padded.shape == (1, 1, 4, 5)
    assert padded.data[0, 0, 0].tolist() == [0, 0, 0, 0, 0]
    np.testing.assert_array_equal(crop(padded, 1, 1, 2, 3).data, x.data)
    backward(reduce_sum(crop(padded, 0, 0, 2, 2)))
    np.testing.assert_array_equal(x.grad, [[[[1, 0, 0], [0, 0, 0]]]])


def test_crop_window_must_fit():
    x = constant(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        crop(x, 1, 1, 3, 1)
    with pytest.raises(ShapeError):
        crop(x, -1, 0, 1, 1)


def test_backward_sigmoid_at_zero():
    x = Tensor([0.0], requires_grad=True, name="x")
    grads = backward(reduce_sum(sigmoid(x)))
    assert grads["x"][0] == pytest.approx(0.25)
    assert x.grad.shape == x.shape


def test_backward_linear_sum():
    x = Tensor(np.random.default_rng(5).normal(size=(3, 4)), requires_grad=True)
    backward(reduce_sum(affine(x, 2.0)))
    np.testing.assert_array_equal(x.grad, np.full((3, 4), 2.0))


def test_backward_accumulates_shared_inputs():
    x = Tensor([3.0], requires_grad=True)
    backward(reduce_sum(add(mul(x, x), x)))
    assert x.grad[0] == pytest.approx(7.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        backward(relu(x))


def test_graph_is_consumed_unless_retained():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = reduce_mean(mul(x, x))
    backward(loss, retain_graph=True)
    first = x.grad.copy()
    backward(loss)
    np.testing.assert_array_equal(x.grad, first)
    with pytest.raises(GraphError):
        backward(loss)


def test_no_grad_records_nothing():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        out = sigmoid(x)
    assert is_grad_enabled()
    assert not out.requires_grad
    assert out.is_leaf


def test_tensor_data_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0
    assert Tensor([1, 2]).dtype == np.float64
