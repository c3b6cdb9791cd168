"""Encoders, fusion, the full model and checkpoint files."""

from protoehr.model.checkpoint import load_arrays, load_model, save_arrays, save_model
from protoehr.model.encoders import (
    CompGCN,
    PrototypeBank,
    VisitTransformer,
    encode_patient,
    level_encode,
    pool_visit,
    pool_visits,
    prototype_infuse,
    prototype_learn,
)
from protoehr.model.fusion import Fusion, FusionTrace, TaskHead, predict, task_loss
from protoehr.model.protoehr import Batch, ProtoEHRModel

__all__ = [
    "Batch",
    "CompGCN",
    "Fusion",
    "FusionTrace",
    "PrototypeBank",
    "ProtoEHRModel",
    "TaskHead",
    "VisitTransformer",
    "encode_patient",
    "level_encode",
    "load_arrays",
    "load_model",
    "pool_visit",
    "pool_visits",
    "predict",
    "prototype_infuse",
    "prototype_learn",
    "save_arrays",
    "save_model",
    "task_loss",
]
