"""Grid search over model and optimization hyperparameters.

Each grid point is one trial: a fresh model trained with early stopping in
its own output directory (``trial_000``, ``trial_001``...) and a seed
derived from the base training seed and the trial index. Trials share the
experiment's data and nothing else, so they run in worker processes.

Examples:
    >>> results = grid_search(GridSpec(lr=[1e-3], dropout=[0.1]), data, cfg, "runs/grid")
    >>> results[0].rank
    1

Tests:
    - tests/unit/test_grid.py
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from protoehr.config import ExperimentConfig, GridSpec, ModelConfig, TrainConfig
from protoehr.core.errors import ConfigError
from protoehr.core.seeding import derive_seed32
from protoehr.experiment import ExperimentData, build_model
from protoehr.schemas.reports import TrialResult
from protoehr.training.trainer import train

logger = logging.getLogger(__name__)

TRIALS_FILE = "trials.csv"
TRAIN_AXES = ("lr",)


def trial_configs(
    point: dict[str, Any], model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int
) -> tuple[ModelConfig, TrainConfig]:
    """Apply one grid point to the base configs.

    Raises:
        ConfigError: If the point makes a config invalid.
    """
    model_update = {k: v for k, v in point.items() if k not in TRAIN_AXES}
    train_update = {k: v for k, v in point.items() if k in TRAIN_AXES}
    try:
        model = ModelConfig.model_validate({**model_cfg.model_dump(), **model_update})
        training = TrainConfig.model_validate(
            {**train_cfg.model_dump(), **train_update, "seed": seed}
        )
    except ValidationError as exc:
        raise ConfigError(f"grid point {point} is invalid: {exc.errors()[0]['msg']}") from exc
    return model, training


def run_trial(
    index: int, point: dict[str, Any], data: ExperimentData, cfg: ExperimentConfig, out_dir: Path
) -> TrialResult:
    """Train one grid point; module-level so worker processes can import it."""
    seed = derive_seed32(cfg.train.seed, "trial", index)
    model_cfg, train_cfg = trial_configs(point, cfg.model, cfg.train, seed)
    trial_dir = out_dir / f"trial_{index:03d}"
    logger.info(f"Trial {index}: {point}")
    result = train(build_model(data, model_cfg, seed), data.train, data.val, train_cfg, trial_dir)
    return TrialResult(
        trial=index,
        point=point,
        seed=seed,
        best_metric=result.best_metric,
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run,
        checkpoint=str(result.checkpoint),
    )


def rank_trials(results: list[TrialResult]) -> list[TrialResult]:
    """Sort by validation metric (descending, ties by trial index) and number ranks from 1."""
    ordered = sorted(results, key=lambda r: (-r.best_metric, r.trial))
    return [r.model_copy(update={"rank": i}) for i, r in enumerate(ordered, start=1)]


def write_trials(path: str | Path, results: list[TrialResult], axes: list[str]) -> None:
    fields = ["rank", "trial", *axes, "seed", "best_metric", "best_epoch", "epochs_run", "checkpoint"]
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in results:
            row = r.model_dump(exclude={"point"})
            row.update({axis: r.point[axis] for axis in axes})
            writer.writerow(row)


def grid_search(
    grid: GridSpec,
    data: ExperimentData,
    cfg: ExperimentConfig,
    out_dir: str | Path,
    parallel: int = 1,
) -> list[TrialResult]:
    """Train every grid point and persist the ranked trial table.

    Args:
        grid: Axes to search.
        data: Shared cohort, KG and folds.
        cfg: Base experiment config; grid points override its model and lr.
        out_dir: Directory for trial subdirectories and ``trials.csv``.
        parallel: Worker processes; 1 runs trials in this process.
    """
    if parallel < 1:
        raise ConfigError(f"parallel must be >= 1, got {parallel}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = grid.points()
    for point in points:
        trial_configs(point, cfg.model, cfg.train, cfg.train.seed)
    logger.info(f"Grid search: {len(points)} trials, {parallel} worker(s)")

    if parallel == 1:
        results = [run_trial(i, p, data, cfg, out) for i, p in enumerate(points)]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as executor:
            futures = [
                executor.submit(run_trial, i, p, data, cfg, out) for i, p in enumerate(points)
            ]
            results = [f.result() for f in futures]

    ranked = rank_trials(results)
    write_trials(out / TRIALS_FILE, ranked, list(points[0]))
    best = ranked[0]
    logger.info(f"Best trial {best.trial}: {best.point} -> {best.best_metric:.4f}")
    return ranked
