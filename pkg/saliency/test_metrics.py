#!/usr/bin/env python3
"""
Metrics against a brute-force oracle, plus the CSV formats
"""

import numpy as np
import pytest

from metrics import (
    MetricsReport,
    boundary_f_measure,
    evaluate_dataset,
    f_measure,
    image_curves,
    mae,
    pr_at_threshold,
    write_curve_csv,
    write_summary_csv,
)


def _brute_force(pairs):
    """Loop-per-threshold reference written independently of metrics.py"""
    n = len(pairs)
    precision = np.zeros(256)
    recall = np.zeros(256)
    f_curve = np.zeros(256)
    adaptive = 0.0
    error = 0.0
    for p, y in pairs:
        positives = y == 1
        for k in range(256):
            b = p >= k / 255
            tp = np.sum(b & positives)
            prec = tp / b.sum() if b.sum() else 1.0
            rec = tp / positives.sum() if positives.sum() else 1.0
            precision[k] += prec
            recall[k] += rec
            denom = 0.3 * prec + rec
            f_curve[k] += 1.3 * prec * rec / denom if denom > 0 else 0.0
        b = p >= min(1.0, 2 * p.mean())
        tp = np.sum(b & positives)
        prec = tp / b.sum() if b.sum() else 1.0
        rec = tp / positives.sum() if positives.sum() else 1.0
        denom = 0.3 * prec + rec
        adaptive += 1.3 * prec * rec / denom if denom > 0 else 0.0
        error += np.abs(p - y).sum() / p.size
    f_curve /= n
    return dict(precision=precision / n, recall=recall / n, f_curve=f_curve,
                max_f=f_curve.max(), adaptive_f=adaptive / n, mae=error / n)


def _random_pairs(seed, count=5, size=8):
    rng = np.random.default_rng(seed)
    return [(rng.uniform(size=(size, size)), (rng.uniform(size=(size, size)) > 0.6).astype(float))
            for _ in range(count)]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_evaluate_dataset_matches_brute_force(seed):
    pairs = _random_pairs(seed)
    report = evaluate_dataset(pairs)
    oracle = _brute_force(pairs)
    for field in ("precision", "recall", "f_curve"):
        np.testing.assert_allclose(getattr(report, field), oracle[field], atol=1e-9, rtol=0)
    for field in ("max_f", "adaptive_f", "mae"):
        assert getattr(report, field) == pytest.approx(oracle[field], abs=1e-9)


def test_perfect_prediction():
    pairs = [(y, y) for _, y in _random_pairs(3, count=3)]
    report = evaluate_dataset(pairs)
    assert report.max_f == pytest.approx(1.0)
    assert report.mae == 0.0
    assert report.n_images == 3


def test_f_measure_spot_value():
    assert f_measure(0.8, 0.6) == pytest.approx(0.742857, abs=1e-6)
    assert f_measure(0.0, 0.0) == 0.0


def test_empty_prediction_and_empty_mask_conventions():
    p = np.zeros((4, 4))
    y = np.zeros((4, 4))
    assert pr_at_threshold(p, y, 0.5) == (1.0, 1.0)
    y[0, 0] = 1
    assert pr_at_threshold(p, y, 0.5) == (1.0, 0.0)


def test_non_binary_ground_truth_is_rejected():
    with pytest.raises(ValueError):
        pr_at_threshold(np.zeros((2, 2)), np.full((2, 2), 0.5), 0.5)
    with pytest.raises(ValueError):
        evaluate_dataset([(np.zeros((2, 2)), np.full((2, 2), 0.2))])


def test_empty_dataset_and_shape_mismatch():
    with pytest.raises(ValueError):
        evaluate_dataset([])
    with pytest.raises(ValueError):
        mae(np.zeros((2, 2)), np.zeros((2, 3)))


def test_threaded_evaluation_is_identical():
    pairs = _random_pairs(4, count=6)
    assert evaluate_dataset(pairs, workers=3) == evaluate_dataset(pairs, workers=1)


def test_permutation_invariance():
    pairs = _random_pairs(5, count=5)
    forward = evaluate_dataset(pairs)
    reverse = evaluate_dataset(pairs[::-1])
    np.testing.assert_allclose(forward.f_curve, reverse.f_curve, atol=1e-12)
    assert forward.mae == pytest.approx(reverse.mae, abs=1e-12)


def test_boundary_f_measure_of_ground_truth_is_one():
    y = np.zeros((16, 16))
    y[4:12, 5:10] = 1
    assert boundary_f_measure(y, y) == pytest.approx(1.0)
    assert boundary_f_measure(np.full((16, 16), 0.5), y) == pytest.approx(0.0)


def test_curve_csv_format(tmp_path):
    report = evaluate_dataset(_random_pairs(6, count=2))
    path = tmp_path / "curve.csv"
    write_curve_csv(report, path)
    lines = path.read_bytes().decode("ascii").split("\n")
    assert lines[0] == "threshold,precision,recall,f_measure"
    assert lines[-1] == ""
    rows = lines[1:-1]
    assert len(rows) == 256
    assert rows[0].startswith("0.000000,")
    assert rows[-1].startswith("1.000000,")
    assert b"\r" not in path.read_bytes()


def test_summary_csv(tmp_path):
    report = MetricsReport(precision=[1.0] * 256, recall=[1.0] * 256, f_curve=[1.0] * 256,
                           max_f=1.0, adaptive_f=0.5, mae=0.25, n_images=1)
    path = tmp_path / "summary.csv"
    write_summary_csv(report, path)
    assert path.read_text() == "metric,value\nmax_f,1.000000\nadaptive_f,0.500000\nmae,0.250000\n"


def test_four_pixel_example():
    y = np.array([[1, 1, 0, 0]])
    p = np.array([[0.9, 0.4, 0.6, 0.1]])
    assert pr_at_threshold(p, y, 0.5) == (0.5, 0.5)


def test_recall_and_selection_shrink_as_threshold_rises():
    rng = np.random.default_rng(11)
    p = rng.uniform(size=(12, 12))
    y = (rng.uniform(size=(12, 12)) > 0.6).astype(float)
    thresholds = np.linspace(0.0, 1.0, 41)
    recalls = [pr_at_threshold(p, y, t)[1] for t in thresholds]
    selected = [np.count_nonzero(p >= t) for t in thresholds]
    assert np.all(np.diff(recalls) <= 0)
    assert np.all(np.diff(selected) <= 0)
    _, curve_recall = image_curves(p, y)
    assert np.all(np.diff(curve_recall) <= 0)


def test_mae_is_symmetric_under_complement():
    rng = np.random.default_rng(12)
    p = rng.uniform(size=(9, 7))
    y = (rng.uniform(size=(9, 7)) > 0.5).astype(float)
    assert mae(p, y) == pytest.approx(mae(1 - p, 1 - y), abs=1e-15)


def test_duplicated_pairs_leave_the_report_unchanged():
    rng = np.random.default_rng(13)
    pairs = [(rng.uniform(size=(8, 8)), (rng.uniform(size=(8, 8)) > 0.5).astype(float)) for _ in range(3)]
    single = evaluate_dataset(pairs)
    doubled = evaluate_dataset(pairs + pairs)
    assert doubled.n_images == 2 * single.n_images
    for field in ("precision", "recall", "f_curve"):
        np.testing.assert_allclose(getattr(doubled, field), getattr(single, field), rtol=1e-12, atol=1e-15)
    for field in ("max_f", "adaptive_f", "mae"):
        assert getattr(doubled, field) == pytest.approx(getattr(single, field), rel=1e-12)
