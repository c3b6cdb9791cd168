"""Test-set evaluation and fusion-trace files.

The whole evaluation fold is scored as one batch, like validation during
training, since visit- and patient-level prototypes are learned from the
batch they enhance.

Trace files hold one JSON object per sample::

    {"sample": "17:3", "patient_id": 17, "prefix_len": 3, "label": 1,
     "beta": [0.2, 0.5, 0.3], "proto_attn": {"code": [...], "visit": [...], "patient": [...]}}

Examples:
    >>> report, traces = evaluate(model, test_samples, n_bootstrap=100, seed=0)
    >>> write_traces("runs/exp/traces.jsonl", traces)

Tests:
    - tests/unit/test_eval_runner.py
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path

from pydantic import ValidationError

from protoehr.config import TASK_METRICS
from protoehr.core.errors import ContractError, ParseError
from protoehr.eval.metrics import bootstrap_metric
from protoehr.model.fusion import FusionTrace
from protoehr.model.protoehr import Batch, ProtoEHRModel
from protoehr.schemas.ehr import TaskSample
from protoehr.schemas.reports import EvalReport, FusionTraceRecord

logger = logging.getLogger(__name__)


def trace_records(batch: Batch, trace: FusionTrace) -> list[FusionTraceRecord]:
    records = []
    for i, sample_id in enumerate(batch.sample_ids):
        label = batch.raw_labels[i]
        records.append(
            FusionTraceRecord(
                sample=sample_id,
                patient_id=batch.patient_ids[i],
                prefix_len=batch.prefix_lens[i],
                label=list(label) if isinstance(label, tuple) else label,
                beta=[float(b) for b in trace.beta[i]],
                proto_attn={
                    level.value: [float(a) for a in attn[i]]
                    for level, attn in trace.attention.items()
                },
            )
        )
    return records


def evaluate(
    model: ProtoEHRModel,
    samples: Sequence[TaskSample],
    n_bootstrap: int = 100,
    seed: int = 0,
) -> tuple[EvalReport, list[FusionTraceRecord]]:
    """Bootstrap every metric of the model's task and collect fusion traces.

    Raises:
        ContractError: If there are no samples.
        UndefinedMetricError: If the labels cannot support a metric.
    """
    if not samples:
        raise ContractError("evaluation needs at least one sample")
    batch = Batch.from_samples(samples, model.task)
    probs, trace = model.predict_proba(batch)
    metrics = [
        bootstrap_metric(model.task, metric, probs, batch.labels, n=n_bootstrap, seed=seed)
        for metric in TASK_METRICS[model.task]
    ]
    report = EvalReport(task=model.task, n_samples=len(batch), metrics=metrics)
    summary = ", ".join(f"{m.metric.value} {m.mean:.4f}±{m.std:.4f}" for m in metrics)
    logger.info(f"Evaluated {len(batch)} {model.task.value} samples: {summary}")
    return report, trace_records(batch, trace)


def write_traces(path: str | Path, records: Sequence[FusionTraceRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(record.model_dump_json() + "\n")


def read_traces(path: str | Path) -> list[FusionTraceRecord]:
    """Read a trace file.

    Raises:
        ParseError: On a malformed line.
    """
    records = []
    with Path(path).open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                records.append(FusionTraceRecord.model_validate(json.loads(raw)))
            except (json.JSONDecodeError, ValidationError) as exc:
                raise ParseError(f"{Path(path).name}: invalid trace record", line=lineno) from exc
    return records
