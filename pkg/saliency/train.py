"""
Two-phase SGD training of the PFA model, prediction and model evaluation
"""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from data import AugmentConfig, Sample, augment, iter_batches, stack_batch
from errors import MissingGradientError, TrainingDivergedError
from losses import LossConfig, Reduction, total_loss
from metrics import MetricsReport, evaluate_dataset
from params import ModelParams
from pfa import ModelConfig, build_model, pfa_forward
from tensor import backward, constant, no_grad

logger = logging.getLogger(__name__)

TRAIN_LOG_HEADER = ["step", "epoch", "phase", "loss"]


class PhaseConfig(BaseModel):
    alpha: float = Field(ge=0, le=1, description="Weight of the saliency loss against the edge loss")
    lr: float = Field(gt=0, description="SGD learning rate")
    epochs: int = Field(ge=0, description="Passes over the training set")


class TrainConfig(BaseModel):
    phase1: PhaseConfig = Field(default_factory=lambda: PhaseConfig(alpha=1.0, lr=1e-2, epochs=30))
    phase2: PhaseConfig = Field(default_factory=lambda: PhaseConfig(alpha=0.7, lr=1e-3, epochs=10))
    batch_size: int = Field(default=8, ge=1)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    image_size: int = Field(default=64, ge=16, description="Square training resolution, multiple of 16")
    seed: int = Field(default=0)
    loss_mode: Reduction = Field(default="mean", description="Per-pixel mean keeps lr independent of image area")
    alpha_s: float = Field(default=0.528, ge=0, le=1, description="Positive-class weight of the saliency BCE")
    clamp_eps: float = Field(default=1e-7, gt=0, lt=0.5, description="Probability clamp inside the losses")
    edge_border: Literal["replicate", "zero"] = Field(default="replicate", description="Laplace border handling")
    use_edge_loss: bool = Field(default=True, description="Phase 2 uses phase2.alpha; otherwise alpha stays 1")
    augment: Optional[AugmentConfig] = Field(default=None, description="Augmentation, off when None")

    def loss_config(self, alpha: float) -> LossConfig:
        return LossConfig(alpha=alpha, alpha_s=self.alpha_s, clamp_eps=self.clamp_eps,
                          reduction=self.loss_mode, edge_border=self.edge_border)

    def phases(self) -> List[Tuple[int, PhaseConfig]]:
        phase2 = self.phase2 if self.use_edge_loss else self.phase2.model_copy(update={"alpha": 1.0})
        return [(1, self.phase1), (2, phase2)]


class StepRecord(BaseModel):
    step: int
    epoch: int
    phase: int
    loss: float


class EpochRecord(BaseModel):
    phase: int
    epoch: int
    mean_loss: float
    val_mae: Optional[float] = None
    val_max_f: Optional[float] = None


class TrainLog(BaseModel):
    steps: List[StepRecord] = Field(default_factory=list)
    epochs: List[EpochRecord] = Field(default_factory=list)
    wall_time: float = Field(default=0.0, description="Seconds spent in train()")

    def epoch_losses(self) -> List[float]:
        return [record.mean_loss for record in self.epochs]


def init_velocity(params: ModelParams) -> Dict[str, np.ndarray]:
    return {name: np.zeros(t.shape, dtype=params.dtype) for name, t in params.trainable()}


def sgd_step(
    params: ModelParams,
    grads: Mapping[str, np.ndarray],
    lr: float,
    momentum: float,
    velocity: Dict[str, np.ndarray],
) -> Tuple[ModelParams, Dict[str, np.ndarray]]:
    """
    v <- momentum * v + g; p <- p - lr * v for every trainable parameter.

    params is updated in place (each tensor is swapped for a new one) and the
    velocity dict is updated in place; both are also returned.
    """
    trainable = params.trainable()
    for name, _ in trainable:
        if name not in grads:
            raise MissingGradientError(f"No gradient for trainable parameter {name}")
    for name, tensor in trainable:
        v = velocity.get(name)
        g = np.asarray(grads[name], dtype=params.dtype)
        v = g if v is None else momentum * v + g
        velocity[name] = np.asarray(v, dtype=params.dtype)
        params.replace(name, tensor.data - lr * velocity[name])
    return params, velocity


def _check_dataset(dataset: Sequence[Sample], size: int) -> None:
    if not dataset:
        raise ValueError("training set is empty")
    for sample in dataset:
        if sample.size != (size, size):
            raise ValueError(f"sample {sample.id} is {sample.size}, training expects {size}x{size}")


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Sequence[Sample],
    val_set: Optional[Sequence[Sample]] = None,
    params: Optional[ModelParams] = None,
    phases: Optional[Sequence[int]] = None,
    show_progress: bool = False,
) -> Tuple[ModelParams, TrainLog]:
    """
    Phase 1 then phase 2, each with a fresh momentum buffer. Epochs visit the
    set in a permutation drawn from (seed, phase, epoch); augmentation draws
    from (augment.seed, global_epoch * len(dataset) + sample index).

    `params` resumes from existing weights; `phases` restricts which phases run.
    """
    _check_dataset(dataset, train_cfg.image_size)
    if params is None:
        params = build_model(model_cfg, train_cfg.seed)
    selected = set(phases) if phases is not None else {1, 2}
    log = TrainLog()
    started = time.perf_counter()
    n = len(dataset)
    step = 0
    global_epoch = 0

    for phase_id, phase in train_cfg.phases():
        if phase_id not in selected:
            global_epoch += phase.epochs
            continue
        loss_cfg = train_cfg.loss_config(phase.alpha)
        velocity = init_velocity(params)
        logger.info(f"Phase {phase_id}: alpha={phase.alpha} lr={phase.lr} epochs={phase.epochs}")
        for epoch in tqdm(range(1, phase.epochs + 1), desc=f"phase {phase_id}", disable=not show_progress):
            order = np.random.default_rng([train_cfg.seed, 2, phase_id, epoch]).permutation(n)
            epoch_losses = []
            for indices in iter_batches(range(n), train_cfg.batch_size, order):
                batch = [dataset[i] for i in indices]
                if train_cfg.augment is not None:
                    batch = [augment(s, train_cfg.augment, global_epoch * n + int(i)) for s, i in zip(batch, indices)]
                images, masks = stack_batch(batch)
                step += 1
                prediction, _ = pfa_forward(params, constant(images, dtype=params.dtype), model_cfg)
                loss = total_loss(prediction, masks, loss_cfg)
                value = loss.item()
                if not math.isfinite(value):
                    logger.error(f"Non-finite loss {value} at step {step} (phase {phase_id}, epoch {epoch})")
                    raise TrainingDivergedError(f"loss became {value} in phase {phase_id}, epoch {epoch}", step=step)
                sgd_step(params, backward(loss), phase.lr, train_cfg.momentum, velocity)
                log.steps.append(StepRecord(step=step, epoch=epoch, phase=phase_id, loss=value))
                epoch_losses.append(value)

            record = EpochRecord(phase=phase_id, epoch=epoch, mean_loss=float(np.mean(epoch_losses)))
            message = f"phase {phase_id} epoch {epoch}: mean loss {record.mean_loss:.5f}"
            if val_set:
                report = evaluate_model(params, model_cfg, val_set)
                record.val_mae, record.val_max_f = report.mae, report.max_f
                message += f", val mae {report.mae:.4f}, val max-F {report.max_f:.4f}"
            log.epochs.append(record)
            logger.info(message)
            global_epoch += 1

    log.wall_time = time.perf_counter() - started
    logger.info(f"Training finished after {step} steps in {log.wall_time:.1f}s")
    return params, log


def predict(
    params: ModelParams,
    model_cfg: ModelConfig,
    images: np.ndarray,
    batch_size: int = 8,
    workers: int = 1,
) -> np.ndarray:
    """Saliency maps [N, 1, H, W] for images [N, 3, H, W]; no graph is recorded"""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    chunks = [images[i:i + batch_size] for i in range(0, len(images), batch_size)]

    def run(chunk: np.ndarray) -> np.ndarray:
        with no_grad():
            prediction, _ = pfa_forward(params, constant(chunk, dtype=params.dtype), model_cfg)
        return prediction.data

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, chunks))
    else:
        outputs = [run(chunk) for chunk in chunks]
    return np.concatenate(outputs, axis=0)


def evaluate_model(
    params: ModelParams,
    model_cfg: ModelConfig,
    samples: Sequence[Sample],
    batch_size: int = 8,
    workers: int = 1,
) -> MetricsReport:
    images = np.stack([s.image for s in samples])
    maps = predict(params, model_cfg, images, batch_size=batch_size, workers=workers)
    pairs = [(maps[i, 0], sample.mask[0]) for i, sample in enumerate(samples)]
    return evaluate_dataset(pairs, workers=workers)


def write_train_log_csv(log: TrainLog, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAIN_LOG_HEADER)
        for record in log.steps:
            writer.writerow([record.step, record.epoch, record.phase, repr(record.loss)])
