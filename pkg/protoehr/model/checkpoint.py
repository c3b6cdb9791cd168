"""Checkpoint files: a JSON manifest plus one little-endian float blob.

``<stem>.json``::

    {"format_version": 1, "dtype": "<f4", "total_bytes": 1234,
     "tensors": [{"name": "gcn.entity_emb", "shape": [61, 128],
                  "offset": 0, "nbytes": 31232}, ...],
     "meta": {...}}

``<stem>.bin`` holds the arrays back to back in manifest order. Exported
models use 32-bit floats; training state for resumption uses 64-bit floats
so that a resumed run matches an uninterrupted one exactly.

Examples:
    >>> save_model(model, "runs/exp/model", meta={"seed": 0})
    >>> model2 = load_model("runs/exp/model", kg)

Tests:
    - tests/unit/test_checkpoint.py
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from protoehr.config import Ablation, ModelConfig, Task
from protoehr.core.errors import CheckpointError
from protoehr.kg.graph import MedicalKG
from protoehr.model.protoehr import ProtoEHRModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
EXPORT_DTYPE = "<f4"
STATE_DTYPE = "<f8"
_DTYPES = (EXPORT_DTYPE, STATE_DTYPE)


def checkpoint_stem(path: str | Path) -> Path:
    """Strip a ``.json`` or ``.bin`` suffix."""
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def save_arrays(
    path: str | Path,
    arrays: Mapping[str, np.ndarray],
    meta: Mapping[str, Any] | None = None,
    dtype: str = EXPORT_DTYPE,
) -> Path:
    """Write arrays and metadata; returns the stem."""
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported checkpoint dtype {dtype}")
    stem = checkpoint_stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with stem.with_suffix(".bin").open("wb") as blob:
        for name, array in arrays.items():
            data = np.ascontiguousarray(np.asarray(array, dtype=np.float64).astype(dtype))
            raw = data.tobytes()
            blob.write(raw)
            entries.append(
                {"name": name, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)}
            )
            offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": dtype,
        "total_bytes": offset,
        "tensors": entries,
        "meta": dict(meta or {}),
    }
    stem.with_suffix(".json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return stem


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read arrays (as float64) and metadata.

    Raises:
        CheckpointError: On a missing file, unknown version or inconsistent layout.
    """
    stem = checkpoint_stem(path)
    manifest_path, blob_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"checkpoint not found: {stem}(.json|.bin)")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{manifest_path.name}: invalid JSON ({e.msg})") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    dtype = manifest.get("dtype")
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported checkpoint dtype {dtype}")
    itemsize = np.dtype(dtype).itemsize
    blob = blob_path.read_bytes()
    if len(blob) != manifest.get("total_bytes"):
        raise CheckpointError(
            f"{blob_path.name} holds {len(blob)} bytes, manifest says {manifest.get('total_bytes')}"
        )
    arrays: dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = itemsize * int(np.prod(shape, dtype=np.int64))
        if entry["offset"] != expected_offset or entry["nbytes"] != nbytes:
            raise CheckpointError(f"inconsistent layout for tensor {entry['name']}")
        chunk = blob[entry["offset"] : entry["offset"] + nbytes]
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).astype(np.float64)
        expected_offset += nbytes
    if expected_offset != len(blob):
        raise CheckpointError(f"{blob_path.name} has trailing bytes")
    return arrays, dict(manifest.get("meta", {}))


def save_model(
    model: ProtoEHRModel,
    path: str | Path,
    meta: Mapping[str, Any] | None = None,
    state: Mapping[str, np.ndarray] | None = None,
) -> Path:
    """Export model parameters as 32-bit floats.

    Args:
        model: Model whose config, task and KG fingerprint go in the manifest.
        path: Checkpoint stem.
        meta: Extra metadata (seed, epoch, metric...).
        state: Parameters to write instead of the model's current ones
            (e.g. the best epoch's state dict).
    """
    full_meta: dict[str, Any] = {
        "kind": "model",
        "task": model.task.value,
        "model_config": model.cfg.model_dump(mode="json"),
        "kg_fingerprint": model.kg.fingerprint() if model.kg.facts else None,
        "n_entities": model.kg.n_entities,
        "n_relations": model.kg.n_relations,
        **(meta or {}),
    }
    stem = save_arrays(path, state if state is not None else model.state_dict(), full_meta)
    logger.info(f"Saved model checkpoint {stem}")
    return stem


def load_model(path: str | Path, kg: MedicalKG) -> ProtoEHRModel:
    """Rebuild a model from an exported checkpoint and its KG.

    Raises:
        CheckpointError: If the checkpoint is not a model export or was
            trained on a different graph.
    """
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "model":
        raise CheckpointError(f"{checkpoint_stem(path)} is not a model checkpoint")
    cfg = ModelConfig.model_validate(meta["model_config"])
    if kg.n_entities != meta.get("n_entities") or kg.n_relations != meta.get("n_relations"):
        raise CheckpointError(
            f"KG shape ({kg.n_entities} entities, {kg.n_relations} relations) does not match "
            f"checkpoint ({meta.get('n_entities')}, {meta.get('n_relations')})"
        )
    effective = kg.with_facts([]) if cfg.ablation == Ablation.NO_KG else kg
    expected = meta.get("kg_fingerprint")
    if expected is not None and effective.facts and effective.fingerprint() != expected:
        raise CheckpointError("KG facts differ from the graph the model was trained on")
    model = ProtoEHRModel(kg, cfg, Task(meta["task"]), seed=int(meta.get("seed", 0)))
    model.load_state_dict(arrays)
    return model
