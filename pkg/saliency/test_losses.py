#!/usr/bin/env python3
"""
Loss oracles: weighted BCE, Laplace edges, edge BCE and the alpha mix
"""

import numpy as np
import pytest

from errors import ShapeError
from losses import LossConfig, edge_bce, laplace_edge, total_loss, weighted_bce
from tensor import Tensor, backward, constant


def _pixel(value):
    return constant(np.full((1, 1, 1, 1), value))


def test_weighted_bce_single_pixel_oracles():
    assert weighted_bce(_pixel(0.5), np.ones((1, 1, 1, 1))).item() == pytest.approx(0.528 * np.log(2), abs=1e-12)
    assert weighted_bce(_pixel(0.5), np.zeros((1, 1, 1, 1))).item() == pytest.approx(0.472 * np.log(2), abs=1e-12)
    assert weighted_bce(_pixel(0.5), np.ones((1, 1, 1, 1))).item() == pytest.approx(0.36598, abs=1e-5)


def test_weighted_bce_clamps_saturated_predictions():
    loss = weighted_bce(_pixel(0.0), np.ones((1, 1, 1, 1)), eps=1e-7).item()
    assert np.isfinite(loss)
    assert loss == pytest.approx(-0.528 * np.log(1e-7))


def test_mean_reduction_divides_by_pixel_count():
    rng = np.random.default_rng(0)
    p = constant(rng.uniform(0.1, 0.9, size=(2, 1, 4, 4)))
    y = (rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(float)
    total = weighted_bce(p, y, reduction="sum").item()
    assert weighted_bce(p, y, reduction="mean").item() == pytest.approx(total / 32, rel=1e-12)


def test_laplace_edge_impulse_response():
    m = np.zeros((1, 1, 5, 5))
    m[0, 0, 2, 2] = 1.0
    edge = laplace_edge(m).data[0, 0]
    expected = np.zeros((5, 5))
    expected[2, 2] = np.tanh(4.0)
    expected[1, 2] = expected[3, 2] = expected[2, 1] = expected[2, 3] = np.tanh(1.0)
    np.testing.assert_allclose(edge, expected, atol=1e-6)


@pytest.mark.parametrize("value", [0.7, 0.3, 1 / 3, 1e-3])
@pytest.mark.parametrize("border", ["replicate", "zero"])
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_laplace_edge_of_constant_map_is_exactly_zero(value, border, dtype):
    m = constant(np.full((2, 1, 6, 6), value), dtype=dtype)
    edge = laplace_edge(m, border=border).data
    interior = edge[:, :, 1:-1, 1:-1] if border == "zero" else edge
    assert np.all(interior == 0.0)


def test_laplace_edge_vertical_step():
    m = np.zeros((1, 1, 4, 4))
    m[..., 2:] = 1.0
    edge = laplace_edge(m).data[0, 0]
    np.testing.assert_allclose(edge[:, 1], np.tanh(1.0), rtol=1e-12)
    np.testing.assert_allclose(edge[:, 2], np.tanh(1.0), rtol=1e-12)
    assert np.all(edge[:, [0, 3]] == 0.0)


def test_laplace_edge_is_translation_equivariant_inside():
    big = np.random.default_rng(4).uniform(size=(1, 1, 12, 12))
    full = laplace_edge(big).data[0, 0]
    for top, left in [(2, 2), (3, 4)]:
        window = laplace_edge(big[..., top:top + 8, left:left + 8]).data[0, 0]
        np.testing.assert_allclose(window[1:-1, 1:-1], full[top + 1:top + 7, left + 1:left + 7], rtol=1e-12)


def test_laplace_edge_zero_border_marks_the_frame():
    edge = laplace_edge(np.ones((1, 1, 4, 4)), border="zero").data[0, 0]
    assert edge[0, 0] == pytest.approx(np.tanh(2.0))
    assert edge[1, 1] == 0.0


def test_laplace_edge_needs_single_channel():
    with pytest.raises(ShapeError):
        laplace_edge(np.zeros((1, 2, 4, 4)))


def test_edge_bce_of_constant_maps_is_only_the_clamp_residue():
    p = constant(np.full((1, 1, 4, 4), 0.3))
    # both edge maps are zero; the clamp leaves -log(1 - eps) per pixel
    loss = edge_bce(p, np.zeros((1, 1, 4, 4)), eps=1e-7).item()
    assert loss == pytest.approx(-16 * np.log(1 - 1e-7), rel=1e-9)
    assert loss < 1e-5


def test_edge_bce_does_not_backpropagate_into_ground_truth():
    rng = np.random.default_rng(1)
    p = Tensor(rng.uniform(0.1, 0.9, size=(1, 1, 5, 5)), requires_grad=True)
    y = Tensor((rng.uniform(size=(1, 1, 5, 5)) > 0.5).astype(float), requires_grad=True)
    backward(edge_bce(p, y))
    assert p.grad is not None
    assert y.grad is None


@pytest.mark.parametrize("alpha", [0.0, 0.7, 1.0])
def test_total_loss_is_linear_in_alpha(alpha):
    rng = np.random.default_rng(2)
    p = constant(rng.uniform(0.05, 0.95, size=(2, 1, 8, 8)))
    y = (rng.uniform(size=(2, 1, 8, 8)) > 0.6).astype(float)
    cfg = LossConfig(alpha=alpha)
    expected = alpha * weighted_bce(p, y).item() + (1 - alpha) * edge_bce(p, y).item()
    assert total_loss(p, y, cfg).item() == pytest.approx(expected, abs=1e-12)


def test_alpha_one_is_weighted_bce():
    rng = np.random.default_rng(3)
    p = constant(rng.uniform(0.05, 0.95, size=(1, 1, 8, 8)))
    y = (rng.uniform(size=(1, 1, 8, 8)) > 0.5).astype(float)
    assert total_loss(p, y, LossConfig(alpha=1.0)).item() == weighted_bce(p, y).item()


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        weighted_bce(constant(np.full((1, 1, 4, 4), 0.5)), np.zeros((1, 1, 4, 2)))
    with pytest.raises(ShapeError):
        edge_bce(constant(np.full((1, 1, 4, 4), 0.5)), np.zeros((1, 1, 2, 4)))


def test_edge_bce_of_constant_prediction_has_exact_zero_edges():
    p = Tensor(np.full((1, 1, 4, 4), 1 / 3), requires_grad=True)
    loss = edge_bce(p, np.zeros((1, 1, 4, 4)))
    assert loss.item() == pytest.approx(-16 * np.log(1 - 1e-7), rel=1e-12)
    backward(loss)
    assert np.all(np.isfinite(p.grad))


@pytest.mark.parametrize("target", [0.0, 1.0])
def test_weighted_bce_is_convex_with_minimum_at_target(target):
    grid = np.linspace(0.01, 0.99, 99)
    values = np.array([weighted_bce(_pixel(v), np.full((1, 1, 1, 1), target)).item() for v in grid])
    assert np.argmin(values) == (len(grid) - 1 if target == 1.0 else 0)
    assert np.all(np.diff(values, 2) > 0)


def test_balanced_weight_halves_the_standard_bce():
    rng = np.random.default_rng(5)
    p = rng.uniform(0.05, 0.95, size=(1, 1, 6, 6))
    y = (rng.uniform(size=p.shape) > 0.5).astype(float)
    standard = -np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert weighted_bce(constant(p), y, alpha_s=0.5).item() == pytest.approx(0.5 * standard, rel=1e-12)


def test_edge_bce_of_perfect_prediction_is_edge_entropy():
    eps = 1e-7
    y = (np.random.default_rng(6).uniform(size=(1, 1, 6, 6)) > 0.5).astype(float)
    d = laplace_edge(y).data
    c = np.clip(d, eps, 1 - eps)
    entropy = -np.sum(d * np.log(c) + (1 - d) * np.log(1 - c))
    assert edge_bce(constant(y), y, eps=eps).item() == pytest.approx(entropy, rel=1e-12)
