#!/usr/bin/env python3
"""
Analytic gradients against central finite differences at double precision
"""

import numpy as np
import pytest

from gradcheck import (
    OP_SUITES,
    OP_TOLERANCE,
    finite_diff_grad,
    relative_error,
    run_end_to_end,
    run_op_suite,
)
from tensor import mul, reduce_sum


def test_finite_diff_of_sum_is_ones():
    grad = finite_diff_grad(reduce_sum, np.random.default_rng(0).normal(size=(2, 3)))
    np.testing.assert_allclose(grad, np.ones((2, 3)), atol=1e-8)


def test_finite_diff_of_square():
    grad = finite_diff_grad(lambda x: reduce_sum(mul(x, x)), np.array([3.0]))
    assert grad[0] == pytest.approx(6.0, abs=1e-6)


def test_finite_diff_subsampled_indices():
    x = np.arange(6.0).reshape(2, 3)
    grad = finite_diff_grad(lambda t: reduce_sum(mul(t, t)), x, indices=[5, 1])
    np.testing.assert_allclose(grad, [10.0, 2.0], atol=1e-6)


def test_finite_diff_rejects_non_positive_eps():
    with pytest.raises(ValueError):
        finite_diff_grad(reduce_sum, np.ones(2), eps=0.0)


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == pytest.approx(2.0)
    assert relative_error(np.array([2.0, 1.0]), np.array([2.0, 0.9])) == pytest.approx(0.1)


def test_relative_error_floor_absorbs_round_off():
    assert relative_error(np.array([1e-9]), np.array([0.0])) == pytest.approx(1e-6)


def test_relative_error_catches_one_bad_entry_among_many():
    analytic = np.ones(1000)
    numeric = analytic.copy()
    numeric[417] = 1.05
    assert relative_error(analytic, numeric) == pytest.approx(0.05 / 1.05)
    assert relative_error(analytic, numeric) > OP_TOLERANCE


@pytest.mark.parametrize("op", sorted(OP_SUITES))
def test_operator_gradients_match_finite_differences(op):
    result = run_op_suite(op, seeds=range(10))
    assert result.seeds == 10
    assert result.max_error <= OP_TOLERANCE, f"{op}: {result.max_error:.3e}"
    assert result.passed


def test_conv2d_suite_covers_pyramid_dilations():
    # seeds cycle dilation 1, 3, 5, 7
    result = run_op_suite("conv2d", seeds=[1, 2, 3])
    assert result.passed


@pytest.mark.parametrize("seed", range(4))
def test_end_to_end_gradient(seed):
    result = run_end_to_end(seed=seed)
    assert result.passed, f"end-to-end relative error {result.max_error:.3e}"


def test_unknown_operator_suite():
    with pytest.raises(KeyError):
        run_op_suite("softmax", seeds=[0])
