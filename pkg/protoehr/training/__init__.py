"""Optimizer, training loop and grid search."""

from protoehr.training.grid import grid_search, rank_trials
from protoehr.training.optim import Adam, AdamState, adam_step, lr_schedule
from protoehr.training.trainer import TrainResult, train

__all__ = [
    "Adam",
    "AdamState",
    "TrainResult",
    "adam_step",
    "grid_search",
    "lr_schedule",
    "rank_trials",
    "train",
]
