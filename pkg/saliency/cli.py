#!/usr/bin/env python3
"""
Command-line surface: synth, train, eval, predict, gradcheck, sweep, ablate

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
verification failure.
"""

import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import click
import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

import gradcheck as gc
import netpbm
from checkpoint import load_into, save_checkpoint
from config import RunConfig, load_run_config
from data import read_dataset, synth_dataset, write_dataset
from errors import ConfigError, SaliencyError, ShapeError
from experiments import ablation_study, alpha_sweep, write_ablation_csv, write_sweep_csv
from losses import laplace_edge
from metrics import evaluate_dataset, write_curve_csv, write_summary_csv
from pfa import build_model
from train import evaluate_model, predict, train, write_train_log_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class VerificationFailed(Exception):
    """A gradient check exceeded its tolerance"""


def worker_count() -> int:
    try:
        return max(1, int(os.getenv("PFA_THREADS", "1")))
    except ValueError:
        logger.warning(f"Ignoring non-integer PFA_THREADS={os.getenv('PFA_THREADS')!r}")
        return 1


def setup_logging() -> None:
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO").upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def _config(path: Optional[str]) -> RunConfig:
    return load_run_config(path) if path else RunConfig()


def _checkpoint_model(config_path: Optional[str], checkpoint: str):
    run = _config(config_path)
    model_cfg = run.model()
    params = load_into(build_model(model_cfg, run.seed), checkpoint)
    return run, model_cfg, params


@click.group()
def cli():
    """Pyramid feature attention saliency network at desk scale"""


@cli.command("synth")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--count", type=int, required=True, help="Number of samples")
@click.option("--size", type=int, default=64, show_default=True, help="Square side, multiple of 16")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def cmd_synth(seed: int, count: int, size: int, out_dir: str):
    """Generate a synthetic shapes dataset"""
    if count < 1:
        raise click.UsageError("--count must be at least 1")
    samples = synth_dataset(seed, count, (size, size))
    write_dataset(samples, out_dir)


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out-checkpoint", type=click.Path(dir_okay=False), required=True)
@click.option("--progress/--no-progress", default=False)
def cmd_train(config_path: str, out_checkpoint: str, progress: bool):
    """Two-phase training; writes the checkpoint and train_log.csv beside it"""
    run = load_run_config(config_path)
    if not run.data_dir:
        raise ConfigError("data_dir is required for training")
    workers = worker_count()
    dataset = read_dataset(run.data_dir, workers=workers)
    val_set = read_dataset(run.val_dir, workers=workers) if run.val_dir else None
    params, log = train(run.model(), run.training(), dataset, val_set=val_set, show_progress=progress)
    out = Path(out_checkpoint)
    save_checkpoint(params, out)
    write_train_log_csv(log, out.with_name("train_log.csv"))


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--data-dir", type=click.Path(file_okay=False), required=True)
@click.option("--out-csv", type=click.Path(dir_okay=False), required=True, help="Curve CSV; summary goes to <stem>_summary.csv")
@click.option("--ground-truth-as-prediction", is_flag=True, help="Score the masks themselves (sanity check)")
def cmd_eval(checkpoint: Optional[str], config_path: Optional[str], data_dir: str, out_csv: str,
             ground_truth_as_prediction: bool):
    """Evaluate a checkpoint on a dataset and write curve and summary CSVs"""
    workers = worker_count()
    samples = read_dataset(data_dir, workers=workers)
    if ground_truth_as_prediction:
        report = evaluate_dataset([(s.mask[0], s.mask[0]) for s in samples], workers=workers)
    else:
        if checkpoint is None:
            raise click.UsageError("--checkpoint is required unless --ground-truth-as-prediction is given")
        _, model_cfg, params = _checkpoint_model(config_path, checkpoint)
        report = evaluate_model(params, model_cfg, samples, workers=workers)
    out = Path(out_csv)
    write_curve_csv(report, out)
    write_summary_csv(report, out.with_name(f"{out.stem}_summary.csv"))
    logger.info(f"max-F {report.max_f:.4f}, adaptive-F {report.adaptive_f:.4f}, MAE {report.mae:.4f}")


@cli.command("predict")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--image", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out-map", type=click.Path(dir_okay=False), required=True)
@click.option("--out-edge", type=click.Path(dir_okay=False), required=True)
def cmd_predict(checkpoint: str, config_path: Optional[str], image: str, out_map: str, out_edge: str):
    """Saliency map and its Laplace edge map as 8-bit PGMs"""
    pixels = netpbm.read(image)
    if pixels.ndim != 3:
        raise ShapeError("input image must be a P6 pixmap", dim="channels", expected=3, got=1)
    h, w = pixels.shape[:2]
    if h % 16 or w % 16:
        raise ShapeError(
            f"image is {w}x{h}; pad it to {-(-w // 16) * 16}x{-(-h // 16) * 16} (multiples of 16)",
            dim="H" if h % 16 else "W", expected="multiple of 16", got=h if h % 16 else w,
        )
    _, model_cfg, params = _checkpoint_model(config_path, checkpoint)
    saliency = predict(params, model_cfg, netpbm.to_unit(pixels).transpose(2, 0, 1)[None])
    edge = laplace_edge(saliency).data
    netpbm.write(out_map, netpbm.from_unit(saliency[0, 0]))
    netpbm.write(out_edge, netpbm.from_unit(edge[0, 0]))


@cli.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True, help="First seed")
@click.option("--seeds", "n_seeds", type=int, default=gc.DEFAULT_SEEDS, show_default=True)
@click.option("--op", "ops", multiple=True, type=click.Choice(sorted(gc.OP_SUITES)), help="Operator suite(s)")
@click.option("--end-to-end", is_flag=True, help="Check pfa_forward + total_loss on a tiny model")
def cmd_gradcheck(seed: int, n_seeds: int, ops: List[str], end_to_end: bool):
    """Finite-difference checks at double precision"""
    seeds = range(seed, seed + n_seeds)
    results = []
    if end_to_end:
        results.append(gc.run_end_to_end(seed))
    if ops or not end_to_end:
        for op in ops or sorted(gc.OP_SUITES):
            results.append(gc.run_op_suite(op, seeds))
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        click.echo(f"{result.op:<20} {result.max_error:.3e}  (tol {result.tolerance:.0e}, {result.seeds} seeds)  {status}")
    failed = [r.op for r in results if not r.passed]
    if failed:
        raise VerificationFailed(f"gradient check failed for {', '.join(failed)}")


def _experiment_inputs(config_path: str, val_dir: Optional[str]):
    run = load_run_config(config_path)
    held_out = val_dir or run.val_dir
    if not run.data_dir or not held_out:
        raise ConfigError("data_dir and val_dir (or --val-dir) are required")
    workers = worker_count()
    return run, read_dataset(run.data_dir, workers=workers), read_dataset(held_out, workers=workers), workers


@cli.command("sweep")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--val-dir", type=click.Path(file_okay=False), default=None)
@click.option("--alphas", default="1.0,0.9,0.8,0.7,0.6,0.5", show_default=True)
@click.option("--out-csv", type=click.Path(dir_okay=False), required=True)
def cmd_sweep(config_path: str, val_dir: Optional[str], alphas: str, out_csv: str):
    """Phase-2 edge-loss weight sweep from shared phase-1 weights"""
    try:
        values = [float(a) for a in alphas.split(",") if a.strip()]
    except ValueError as e:
        raise click.UsageError(f"--alphas must be comma separated numbers: {e}")
    run, train_set, val_set, workers = _experiment_inputs(config_path, val_dir)
    results = alpha_sweep(run.model(), run.training(), train_set, val_set, values, workers=workers)
    write_sweep_csv(results, out_csv)


@cli.command("ablate")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--val-dir", type=click.Path(file_okay=False), default=None)
@click.option("--out-csv", type=click.Path(dir_okay=False), required=True)
def cmd_ablate(config_path: str, val_dir: Optional[str], out_csv: str):
    """Train and score every head component combination"""
    run, train_set, val_set, workers = _experiment_inputs(config_path, val_dir)
    results = ablation_study(run.model(), run.training(), train_set, val_set, workers=workers)
    write_ablation_csv(results, out_csv)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    setup_logging()
    try:
        cli.main(args=argv, prog_name="saliency", standalone_mode=False)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        logger.error("Aborted")
        return EXIT_USAGE
    except VerificationFailed as e:
        logger.error(str(e))
        return EXIT_FAILURE
    except (SaliencyError, OSError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
