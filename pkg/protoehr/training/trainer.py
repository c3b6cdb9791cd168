"""Training loop with early stopping and resumable state.

One epoch (1-based index ``e``):

1. lr = lr0 · gamma^(e-1)
2. shuffle the training samples with the stream ``(seed, "shuffle", e)``
3. for each minibatch ``b``: forward with dropout stream ``(seed, "dropout", e, b)``,
   backward, Adam step
4. score the whole validation fold with the task's early-stopping metric

Training stops after ``patience`` epochs without strict improvement (or at
``max_epochs``); the best epoch's parameters are kept. Every random draw is
derived from ``(seed, epoch, batch)``, so a run resumed from its saved state
follows the uninterrupted run exactly.

Examples:
    >>> result = train(model, train_samples, val_samples, TrainConfig(patience=5))
    >>> result.best_epoch, result.best_metric
    (12, 0.87)

Tests:
    - tests/unit/test_trainer.py
    - tests/integration/test_training.py
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from protoehr.config import EARLY_STOP_METRIC, ModelConfig, TrainConfig
from protoehr.core.errors import CheckpointError, ContractError, NonFiniteLossError
from protoehr.core.seeding import make_rng
from protoehr.core.tensors import backward
from protoehr.eval.metrics import task_metric
from protoehr.model.checkpoint import STATE_DTYPE, load_arrays, save_arrays, save_model
from protoehr.model.protoehr import Batch, ProtoEHRModel
from protoehr.schemas.ehr import TaskSample
from protoehr.schemas.reports import HistoryRow
from protoehr.training.optim import Adam, lr_schedule

logger = logging.getLogger(__name__)

STATE_STEM = "train_state"
MODEL_STEM = "model"
HISTORY_FILE = "history.csv"
HISTORY_FIELDS = ("epoch", "train_loss", "val_metric", "lr")


@dataclass
class TrainResult:
    """Outcome of a training run; ``model`` holds the best epoch's parameters."""

    model: ProtoEHRModel
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_metric: float
    history: list[HistoryRow] = field(default_factory=list)
    stopped_early: bool = False
    checkpoint: Path | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)


@dataclass
class _Progress:
    epoch: int = 0
    best_metric: float = -math.inf
    best_epoch: int = 0
    bad_epochs: int = 0
    best_state: dict[str, np.ndarray] = field(default_factory=dict)
    history: list[HistoryRow] = field(default_factory=list)


def parameter_norms(model: ProtoEHRModel) -> dict[str, float]:
    return {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}


def validation_score(model: ProtoEHRModel, val: Batch) -> float:
    probs, _ = model.predict_proba(val)
    return task_metric(EARLY_STOP_METRIC[model.task], probs, val.labels, model.task)


def run_epoch(
    model: ProtoEHRModel,
    optimizer: Adam,
    samples: Sequence[TaskSample],
    cfg: TrainConfig,
    epoch: int,
) -> tuple[float, float]:
    """Train one epoch; returns (mean training loss, learning rate).

    Raises:
        NonFiniteLossError: If any minibatch loss is NaN or infinite.
    """
    lr = lr_schedule(epoch - 1, cfg.lr, cfg.lr_decay_gamma)
    order = make_rng(cfg.seed, "shuffle", epoch).permutation(len(samples))
    model.train()
    total = 0.0
    for b, start in enumerate(range(0, len(samples), cfg.batch_size)):
        batch = Batch.from_samples(
            [samples[i] for i in order[start : start + cfg.batch_size]], model.task
        )
        optimizer.zero_grad()
        loss, _ = model.loss(batch, make_rng(cfg.seed, "dropout", epoch, b), cfg.pos_weight)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(epoch, b, parameter_norms(model))
        backward(loss)
        optimizer.step(lr)
        total += value * len(batch)
        logger.debug(f"epoch {epoch} batch {b}: loss {value:.5f}")
    return total / len(samples), lr


# =============================================================================
# Persistence
# =============================================================================


def write_history(path: str | Path, history: Sequence[HistoryRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            values = row.model_dump()
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in values.items()})


def read_history(path: str | Path) -> list[HistoryRow]:
    with Path(path).open(encoding="utf-8") as f:
        return [HistoryRow.model_validate(row) for row in csv.DictReader(f)]


def save_train_state(
    path: str | Path, model: ProtoEHRModel, optimizer: Adam, progress: _Progress, cfg: TrainConfig
) -> Path:
    """Everything needed to continue training, stored as 64-bit floats."""
    arrays: dict[str, np.ndarray] = {f"param.{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"best.{k}": v for k, v in progress.best_state.items()})
    arrays.update(optimizer.state_arrays())
    meta: dict[str, Any] = {
        "kind": "train_state",
        "task": model.task.value,
        "model_config": model.cfg.model_dump(mode="json"),
        "train_config": cfg.model_dump(mode="json"),
        "epoch": progress.epoch,
        "step": optimizer.state.step,
        "best_metric": progress.best_metric if progress.best_epoch else None,
        "best_epoch": progress.best_epoch,
        "bad_epochs": progress.bad_epochs,
        "history": [row.model_dump() for row in progress.history],
    }
    return save_arrays(path, arrays, meta, dtype=STATE_DTYPE)


def load_train_state(
    path: str | Path, model: ProtoEHRModel, optimizer: Adam, cfg: TrainConfig
) -> _Progress:
    """Restore model, optimizer and progress from :func:`save_train_state`.

    Raises:
        CheckpointError: If the state belongs to another task, model or training config.
    """
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "train_state":
        raise CheckpointError(f"{path} is not a training state")
    if meta.get("task") != model.task.value:
        raise CheckpointError(f"training state is for task {meta.get('task')}")
    if ModelConfig.model_validate(meta["model_config"]) != model.cfg:
        raise CheckpointError("training state was written for a different model config")
    if TrainConfig.model_validate(meta["train_config"]) != cfg:
        raise CheckpointError("training state was written for a different training config")

    def section(prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

    model.load_state_dict(section("param."))
    optimizer.load_state_arrays(
        {k: v for k, v in arrays.items() if k.startswith("adam.")}, int(meta["step"])
    )
    best_metric = meta.get("best_metric")
    return _Progress(
        epoch=int(meta["epoch"]),
        best_metric=-math.inf if best_metric is None else float(best_metric),
        best_epoch=int(meta["best_epoch"]),
        bad_epochs=int(meta["bad_epochs"]),
        best_state=section("best."),
        history=[HistoryRow.model_validate(row) for row in meta["history"]],
    )


# =============================================================================
# Training
# =============================================================================


def train(
    model: ProtoEHRModel,
    train_samples: Sequence[TaskSample],
    val_samples: Sequence[TaskSample],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    resume: bool = False,
    max_epochs: int | None = None,
) -> TrainResult:
    """Train with early stopping on the validation fold.

    Args:
        model: Freshly initialized (or to-be-resumed) model.
        train_samples: Training fold.
        val_samples: Validation fold.
        cfg: Optimization settings.
        out_dir: If given, the training state, history CSV and best model
            are written here after every epoch.
        resume: Continue from ``out_dir``'s training state.
        max_epochs: Stop after this many epochs in total (defaults to
            ``cfg.max_epochs``); a later resume can continue past it.

    Raises:
        ContractError: If a fold is empty or resuming without an output directory.
        NonFiniteLossError: If a minibatch loss is not finite.
        UndefinedMetricError: If the validation labels cannot support the metric.
    """
    if not train_samples or not val_samples:
        raise ContractError(
            f"training needs nonempty folds, got {len(train_samples)} train / {len(val_samples)} val"
        )
    limit = cfg.max_epochs if max_epochs is None else min(max_epochs, cfg.max_epochs)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(model.parameters())
    val_batch = Batch.from_samples(val_samples, model.task)

    if resume:
        if out is None:
            raise ContractError("resuming needs the run's output directory")
        progress = load_train_state(out / STATE_STEM, model, optimizer, cfg)
        logger.info(f"Resuming after epoch {progress.epoch} (best {progress.best_epoch})")
    else:
        progress = _Progress()

    metric_name = EARLY_STOP_METRIC[model.task].value
    stopped_early = progress.bad_epochs >= cfg.patience
    while not stopped_early and progress.epoch < limit:
        epoch = progress.epoch + 1
        train_loss, lr = run_epoch(model, optimizer, train_samples, cfg, epoch)
        score = validation_score(model, val_batch)
        if score > progress.best_metric:
            progress.best_metric, progress.best_epoch = score, epoch
            progress.best_state = model.state_dict()
            progress.bad_epochs = 0
        else:
            progress.bad_epochs += 1
        progress.epoch = epoch
        progress.history.append(
            HistoryRow(epoch=epoch, train_loss=train_loss, val_metric=score, lr=lr)
        )
        logger.info(
            f"epoch {epoch}: loss {train_loss:.4f}, val {metric_name} {score:.4f}, "
            f"lr {lr:.3g} (best {progress.best_metric:.4f} @ {progress.best_epoch})"
        )
        stopped_early = progress.bad_epochs >= cfg.patience
        if out is not None:
            save_train_state(out / STATE_STEM, model, optimizer, progress, cfg)
            write_history(out / HISTORY_FILE, progress.history)

    if stopped_early:
        logger.info(f"Early stop after epoch {progress.epoch}; best epoch {progress.best_epoch}")
    model.load_state_dict(progress.best_state)
    checkpoint = None
    if out is not None:
        checkpoint = save_model(
            model,
            out / MODEL_STEM,
            meta={
                "seed": cfg.seed,
                "best_epoch": progress.best_epoch,
                "best_metric": progress.best_metric,
                "metric": metric_name,
            },
        )
    return TrainResult(
        model=model,
        best_state=progress.best_state,
        best_epoch=progress.best_epoch,
        best_metric=progress.best_metric,
        history=progress.history,
        stopped_early=stopped_early,
        checkpoint=checkpoint,
    )
