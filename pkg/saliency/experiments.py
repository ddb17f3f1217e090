"""
Desk-scale experiments: the alpha sweep of the edge-loss weight and the
component ablation over the head switches
"""

import csv
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from data import Sample
from metrics import boundary_f_measure, evaluate_dataset
from params import ModelParams
from pfa import HeadConfig, ModelConfig, build_model
from train import TrainConfig, predict, train

logger = logging.getLogger(__name__)


class ValidationScores(BaseModel):
    mae: float
    max_f: float
    boundary_f: float = Field(description="Mean boundary F-measure of the Laplace edge maps")


class SweepResult(ValidationScores):
    alpha: float


class AblationRow(BaseModel):
    name: str
    use_cpfe: bool = False
    use_ca: bool = False
    use_low_level: bool = False
    use_sa: bool = False
    use_edge_loss: bool = False


class AblationResult(ValidationScores):
    row: AblationRow


DEFAULT_ABLATION_ROWS = [
    AblationRow(name="HL"),
    AblationRow(name="HL+CPFE", use_cpfe=True),
    AblationRow(name="HL+CPFE+CA", use_cpfe=True, use_ca=True),
    AblationRow(name="HL+LL", use_low_level=True),
    AblationRow(name="HL+LL+EL", use_low_level=True, use_edge_loss=True),
    AblationRow(name="HL+CPFE+CA+LL", use_cpfe=True, use_ca=True, use_low_level=True),
    AblationRow(name="HL+CPFE+CA+LL+SA", use_cpfe=True, use_ca=True, use_low_level=True, use_sa=True),
    AblationRow(name="ALL", use_cpfe=True, use_ca=True, use_low_level=True, use_sa=True, use_edge_loss=True),
]


def validation_scores(params: ModelParams, model_cfg: ModelConfig, val_set: Sequence[Sample],
                      workers: int = 1) -> ValidationScores:
    images = np.stack([s.image for s in val_set])
    maps = predict(params, model_cfg, images, workers=workers)
    pairs = [(maps[i, 0], s.mask[0]) for i, s in enumerate(val_set)]
    report = evaluate_dataset(pairs, workers=workers)
    boundary = float(np.mean([boundary_f_measure(p, y) for p, y in pairs]))
    return ValidationScores(mae=report.mae, max_f=report.max_f, boundary_f=boundary)


def alpha_sweep(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    alphas: Sequence[float] = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5),
    workers: int = 1,
) -> List[SweepResult]:
    """Phase 1 once, then phase 2 from the same phase-1 weights for every alpha"""
    base, _ = train(model_cfg, train_cfg, train_set, phases=[1])
    results = []
    for alpha in alphas:
        phase_cfg = train_cfg.model_copy(update={
            "phase2": train_cfg.phase2.model_copy(update={"alpha": alpha}),
            "use_edge_loss": True,
        })
        params, _ = train(model_cfg, phase_cfg, train_set, params=base.astype(base.dtype), phases=[2])
        scores = validation_scores(params, model_cfg, val_set, workers)
        results.append(SweepResult(alpha=alpha, **scores.model_dump()))
        logger.info(f"alpha {alpha}: mae {scores.mae:.4f} max-F {scores.max_f:.4f} boundary-F {scores.boundary_f:.4f}")
    return results


def ablation_study(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    rows: Optional[Sequence[AblationRow]] = None,
    workers: int = 1,
) -> List[AblationResult]:
    results = []
    for row in rows or DEFAULT_ABLATION_ROWS:
        head = model_cfg.head.model_copy(update=row.model_dump(exclude={"name", "use_edge_loss"}))
        row_cfg = ModelConfig(backbone=model_cfg.backbone, cpfe=model_cfg.cpfe,
                              head=HeadConfig(**head.model_dump()), precision=model_cfg.precision)
        row_train = train_cfg.model_copy(update={"use_edge_loss": row.use_edge_loss})
        params, _ = train(row_cfg, row_train, train_set, params=build_model(row_cfg, train_cfg.seed))
        scores = validation_scores(params, row_cfg, val_set, workers)
        results.append(AblationResult(row=row, **scores.model_dump()))
        logger.info(f"ablation {row.name}: mae {scores.mae:.4f} max-F {scores.max_f:.4f}")
    return results


def write_sweep_csv(results: Sequence[SweepResult], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["alpha", "mae", "max_f", "boundary_f"])
        for r in results:
            writer.writerow([f"{r.alpha:.3f}", f"{r.mae:.6f}", f"{r.max_f:.6f}", f"{r.boundary_f:.6f}"])


def write_ablation_csv(results: Sequence[AblationResult], path: Union[str, Path]) -> None:
    flags = ["use_cpfe", "use_ca", "use_low_level", "use_sa", "use_edge_loss"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["row"] + flags + ["mae", "max_f", "boundary_f"])
        for r in results:
            row = r.row.model_dump()
            writer.writerow([r.row.name] + [int(row[f]) for f in flags]
                            + [f"{r.mae:.6f}", f"{r.max_f:.6f}", f"{r.boundary_f:.6f}"])
