"""
Evaluation: 256-threshold precision/recall curves, F-measure, MAE and the
max / adaptive F summaries, plus CSV emission
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from losses import laplace_edge

logger = logging.getLogger(__name__)

BETA2 = 0.3
NUM_THRESHOLDS = 256
THRESHOLDS = np.arange(NUM_THRESHOLDS) / 255.0

CURVE_HEADER = ["threshold", "precision", "recall", "f_measure"]


class MetricsReport(BaseModel):
    precision: List[float] = Field(description="Mean precision at thresholds k/255")
    recall: List[float] = Field(description="Mean recall at thresholds k/255")
    f_curve: List[float] = Field(description="Mean F-measure at thresholds k/255")
    max_f: float = Field(ge=0, le=1, description="Maximum of f_curve over the thresholds")
    adaptive_f: float = Field(ge=0, le=1, description="Mean F at per-image threshold min(1, 2 * mean(P))")
    mae: float = Field(ge=0, le=1, description="Mean over images of the per-pixel absolute error")
    n_images: int = Field(ge=1)


def _check_binary(y: np.ndarray) -> None:
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("ground truth must be binary (values 0 or 1)")


def _check_pair(p: np.ndarray, y: np.ndarray) -> None:
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} differs from ground truth shape {y.shape}")


def pr_at_threshold(p: np.ndarray, y: np.ndarray, t: float) -> Tuple[float, float]:
    """
    Precision and recall of B = (P >= t) against binary Y. An empty B gives
    precision 1, an empty Y gives recall 1.
    """
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y)
    _check_pair(p, y)
    _check_binary(y)
    b = p >= t
    positives = y.astype(bool)
    tp = np.count_nonzero(b & positives)
    n_b, n_y = np.count_nonzero(b), np.count_nonzero(positives)
    precision = tp / n_b if n_b else 1.0
    recall = tp / n_y if n_y else 1.0
    return float(precision), float(recall)


def f_measure(precision, recall, beta2: float = BETA2):
    """(1 + b2) P R / (b2 P + R), 0 where the denominator vanishes; works on scalars and arrays"""
    precision, recall = np.asarray(precision, dtype=np.float64), np.asarray(recall, dtype=np.float64)
    denom = beta2 * precision + recall
    safe = np.where(denom > 0, denom, 1.0)
    f = np.where(denom > 0, (1 + beta2) * precision * recall / safe, 0.0)
    return float(f) if f.ndim == 0 else f


def mae(p: np.ndarray, y: np.ndarray) -> float:
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.float64)
    _check_pair(p, y)
    return float(np.mean(np.abs(p - y)))


def image_curves(p: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Precision and recall of one image at all 256 thresholds (exact integer counts)"""
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y)
    _check_pair(p, y)
    _check_binary(y)
    scores = np.sort(p.ravel())
    fg_scores = np.sort(p.ravel()[y.ravel().astype(bool)])
    n_b = scores.size - np.searchsorted(scores, THRESHOLDS, side="left")
    tp = fg_scores.size - np.searchsorted(fg_scores, THRESHOLDS, side="left")
    precision = np.where(n_b > 0, tp / np.maximum(n_b, 1), 1.0)
    recall = tp / fg_scores.size if fg_scores.size else np.ones(NUM_THRESHOLDS)
    return precision, recall


def _image_stats(pair: Tuple[np.ndarray, np.ndarray]):
    p, y = (np.asarray(a, dtype=np.float64) for a in pair)
    precision, recall = image_curves(p, y)
    t_adaptive = min(1.0, 2.0 * float(p.mean()))
    adaptive = f_measure(*pr_at_threshold(p, y, t_adaptive))
    return precision, recall, f_measure(precision, recall), adaptive, mae(p, y)


def evaluate_dataset(pairs: Sequence[Tuple[np.ndarray, np.ndarray]], workers: int = 1) -> MetricsReport:
    """
    Pointwise mean of per-image precision, recall and F curves over thresholds
    k/255. Per-image work may run on `workers` threads; results are summed in
    input order.
    """
    if not pairs:
        raise ValueError("evaluate_dataset needs at least one (prediction, ground truth) pair")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(_image_stats, pairs))
    else:
        stats = [_image_stats(pair) for pair in pairs]

    n = len(stats)
    precision = np.zeros(NUM_THRESHOLDS)
    recall = np.zeros(NUM_THRESHOLDS)
    f_curve = np.zeros(NUM_THRESHOLDS)
    adaptive_total = 0.0
    mae_total = 0.0
    for p_curve, r_curve, f, adaptive, err in stats:
        precision += p_curve
        recall += r_curve
        f_curve += f
        adaptive_total += adaptive
        mae_total += err
    precision, recall, f_curve = precision / n, recall / n, f_curve / n
    report = MetricsReport(
        precision=precision.tolist(),
        recall=recall.tolist(),
        f_curve=f_curve.tolist(),
        max_f=float(f_curve.max()),
        adaptive_f=adaptive_total / n,
        mae=mae_total / n,
        n_images=n,
    )
    logger.debug(f"Evaluated {n} images: max_f={report.max_f:.4f} mae={report.mae:.4f}")
    return report


def boundary_f_measure(p: np.ndarray, y: np.ndarray, beta2: float = BETA2) -> float:
    """F-measure of the Laplace edge map of P against that of Y, both binarized at 0.5"""
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.float64)
    _check_pair(p, y)
    shape = (1, 1) + p.shape[-2:]
    edge_p = laplace_edge(p.reshape(shape)).data
    edge_y = (laplace_edge(y.reshape(shape)).data >= 0.5).astype(np.float64)
    return f_measure(*pr_at_threshold(edge_p, edge_y, 0.5), beta2=beta2)


def write_curve_csv(report: MetricsReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for t, prec, rec, f in zip(THRESHOLDS, report.precision, report.recall, report.f_curve):
            writer.writerow([f"{t:.6f}", f"{prec:.6f}", f"{rec:.6f}", f"{f:.6f}"])


def write_summary_csv(report: MetricsReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["max_f", f"{report.max_f:.6f}"])
        writer.writerow(["adaptive_f", f"{report.adaptive_f:.6f}"])
        writer.writerow(["mae", f"{report.mae:.6f}"])
