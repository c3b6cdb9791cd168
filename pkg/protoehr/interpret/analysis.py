"""Interpretability analyses over fusion traces.

- level_importance: mean fusion weight per hierarchy level
- prototype_heatmap: mean prototype attention per task label, top-k prototypes,
  with a Spearman trend of importance against the label
- top_codes_per_prototype: most frequent last-visit diagnoses and procedures
  among the patients a prototype attends to most
- prototype_cluster_eval: k-means + silhouette of per-sample attention vectors
- jaccard_diagnostic: overlap between earlier visits and the label visit

All functions are pure in (traces, dataset).

Examples:
    >>> summary = level_importance(traces, Task.MORTALITY)
    >>> summary.beta_code + summary.beta_visit + summary.beta_patient
    1.0
    >>> heatmap = prototype_heatmap(traces, Level.PATIENT, top_k=5)

Tests:
    - tests/unit/test_interpret.py
"""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from collections.abc import Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from protoehr.config import LEVELS, Level, Task, is_multilabel
from protoehr.core.errors import ContractError, EmptyDatasetError
from protoehr.ehr.tasks import LabelSpace
from protoehr.eval.metrics import jaccard, kmeans
from protoehr.schemas.ehr import CodeKind, EHRDataset
from protoehr.schemas.reports import (
    CodeCount,
    FusionTraceRecord,
    LevelClusterReport,
    LevelImportanceSummary,
    PrototypeHeatmap,
    PrototypeTopCodes,
)

logger = logging.getLogger(__name__)

TOP_PATIENTS = 300
TOP_CODES = 5


def _attention_matrix(traces: Sequence[FusionTraceRecord], level: Level) -> np.ndarray:
    rows = [t.proto_attn.get(level.value) for t in traces]
    if any(r is None for r in rows):
        raise ContractError(f"traces carry no {level.value}-level prototype attention")
    matrix = np.asarray(rows, dtype=np.float64)
    if matrix.ndim != 2:
        raise ContractError(f"{level.value} attention vectors have different lengths")
    return matrix


def _int_labels(traces: Sequence[FusionTraceRecord]) -> np.ndarray:
    labels = [t.label for t in traces]
    if any(not isinstance(y, int) for y in labels):
        raise ContractError("per-label analyses need integer labels")
    return np.asarray(labels, dtype=np.int64)


def level_importance(traces: Sequence[FusionTraceRecord], task: Task) -> LevelImportanceSummary:
    """Mean β per level.

    Raises:
        ContractError: With no traces, or traces from a model without fusion.
    """
    if not traces:
        raise ContractError("level importance needs at least one trace")
    beta = np.asarray([t.beta for t in traces], dtype=np.float64)
    if not np.allclose(beta.sum(axis=1), 1.0, atol=1e-9):
        raise ContractError("traces carry no fusion weights (model trained without fusion?)")
    means = beta.mean(axis=0)
    return LevelImportanceSummary(
        task=task,
        n_samples=len(traces),
        beta_code=float(means[0]),
        beta_visit=float(means[1]),
        beta_patient=float(means[2]),
    )


def _trend(labels: np.ndarray, values: np.ndarray) -> float | None:
    if len(labels) < 2 or np.ptp(values) == 0 or np.ptp(labels) == 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = spearmanr(labels, values).statistic
    return None if np.isnan(rho) else float(rho)


def prototype_heatmap(
    traces: Sequence[FusionTraceRecord],
    level: Level,
    top_k: int = 5,
    labels: Sequence[int] | None = None,
) -> PrototypeHeatmap:
    """Mean attention per (label, prototype) for the ``top_k`` most attended prototypes.

    Prototypes are ordered by overall mean attention (ties by index). The
    trend of a prototype is Spearman's rho between label value and that
    prototype's per-label mean.

    Args:
        traces: Fusion traces.
        level: Prototype level.
        top_k: Prototypes kept (clamped to the bank size).
        labels: Per-trace labels; defaults to the traces' own integer labels.
    """
    if not traces:
        raise ContractError("a heatmap needs at least one trace")
    if top_k < 1:
        raise ContractError(f"top_k must be >= 1, got {top_k}")
    attn = _attention_matrix(traces, level)
    y = np.asarray(labels, dtype=np.int64) if labels is not None else _int_labels(traces)
    if len(y) != len(attn):
        raise ContractError(f"{len(y)} labels for {len(attn)} traces")

    overall = attn.mean(axis=0)
    order = sorted(range(attn.shape[1]), key=lambda j: (-overall[j], j))[:top_k]
    classes = sorted(int(c) for c in np.unique(y))
    matrix = np.stack([attn[y == c][:, order].mean(axis=0) for c in classes])
    trend = [_trend(np.asarray(classes), matrix[:, i]) for i in range(len(order))]
    return PrototypeHeatmap(
        level=level,
        labels=classes,
        prototypes=order,
        matrix=matrix.tolist(),
        trend=trend,
    )


def _last_input_visit(task: Task, prefix_len: int) -> int:
    # Mortality and readmission inputs stop before the label visit.
    return prefix_len - 2 if task in (Task.MORTALITY, Task.READMISSION) else prefix_len - 1


def _top(counter: Counter[int], names: Mapping[int, str], k: int) -> list[CodeCount]:
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [CodeCount(code=names[code], count=count) for code, count in ranked]


def top_codes_per_prototype(
    traces: Sequence[FusionTraceRecord],
    ds: EHRDataset,
    task: Task,
    level: Level = Level.PATIENT,
    top_patients: int = TOP_PATIENTS,
    top_codes: int = TOP_CODES,
) -> list[PrototypeTopCodes]:
    """Frequent last-visit codes among each prototype's most attending patients.

    Samples are ranked by the prototype's attention (ties by sample order);
    each patient counts once, through their highest-ranked sample. A code is
    counted at most once per patient; ties between codes go to the lower id.
    """
    if not traces:
        raise ContractError("top codes need at least one trace")
    attn = _attention_matrix(traces, level)
    by_id = {p.patient_id: p for p in ds.patients}
    kinds = ds.kinds
    names = {c.id: c.name for c in ds.codes}
    n_unique = len({t.patient_id for t in traces})
    if n_unique < top_patients:
        logger.warning(
            f"Only {n_unique} patients in the traces; using all of them instead of {top_patients}"
        )

    tables = []
    for j in range(attn.shape[1]):
        order = np.lexsort((np.arange(len(traces)), -attn[:, j]))
        seen: set[int] = set()
        diagnoses: Counter[int] = Counter()
        procedures: Counter[int] = Counter()
        for i in order:
            trace = traces[i]
            if trace.patient_id in seen:
                continue
            seen.add(trace.patient_id)
            visit = by_id[trace.patient_id].visits[_last_input_visit(task, trace.prefix_len)]
            for code in set(visit.codes):
                if kinds[code] == CodeKind.DIAGNOSIS.value:
                    diagnoses[code] += 1
                elif kinds[code] == CodeKind.PROCEDURE.value:
                    procedures[code] += 1
            if len(seen) == top_patients:
                break
        tables.append(
            PrototypeTopCodes(
                prototype=j,
                n_patients=len(seen),
                diagnoses=_top(diagnoses, names, top_codes),
                procedures=_top(procedures, names, top_codes),
            )
        )
    return tables


def default_cluster_count(traces: Sequence[FusionTraceRecord], task: Task) -> int:
    """Observed length-of-stay classes; 2 for the binary and multi-label tasks."""
    if task == Task.LENGTH_OF_STAY:
        return max(2, len({t.label for t in traces if isinstance(t.label, int)}))
    return 2


def prototype_cluster_eval(
    traces: Sequence[FusionTraceRecord],
    k_per_level: int | Mapping[Level, int],
    seed: int = 0,
) -> list[LevelClusterReport]:
    """Silhouette of k-means over per-sample attention vectors, one entry per level.

    A level missing from the traces (skipped by an ablation) or with a single
    trace gets a degenerate entry with silhouette 0.
    """
    reports = []
    for level in LEVELS:
        k = k_per_level if isinstance(k_per_level, int) else k_per_level.get(level, 2)
        if k < 1:
            raise ContractError(f"k must be >= 1, got {k} for {level.value}")
        if not traces or level.value not in traces[0].proto_attn:
            logger.warning(f"No {level.value}-level attention in the traces")
            reports.append(
                LevelClusterReport(level=level, k=k, silhouette=0.0, n_points=0, degenerate=True)
            )
            continue
        points = _attention_matrix(traces, level)
        k_eff = min(k, len(points))
        cluster = kmeans(points, k_eff, seed=seed)
        reports.append(
            LevelClusterReport(
                level=level,
                k=k_eff,
                silhouette=cluster.silhouette,
                n_points=len(points),
                degenerate=cluster.degenerate or k_eff < k,
            )
        )
        logger.info(f"{level.value}: k={k_eff}, silhouette {cluster.silhouette:.4f}")
    return reports


def jaccard_diagnostic(ds: EHRDataset, task: Task) -> float:
    """Mean Jaccard between earlier visits' label-space codes and the last visit's labels.

    Codes are mapped to drug slots (drug) or phenotype groups (phenotype).
    Per patient the Jaccard is averaged over earlier visits, then over
    patients with at least two visits.

    Raises:
        ContractError: For a task other than drug or phenotype.
        EmptyDatasetError: If no patient has two visits.
    """
    if not is_multilabel(task):
        raise ContractError(
            f"the Jaccard diagnostic is defined for drug and phenotype, not {task.value}"
        )
    space = LabelSpace.from_dataset(ds)
    mapping = space.drug_slot if task == Task.DRUG else space.phenotype_group

    def slots(codes: Sequence[int]) -> set[int]:
        return {mapping[c] for c in codes if c in mapping}

    per_patient = []
    for patient in ds.patients:
        if len(patient.visits) < 2:
            continue
        target = slots(patient.visits[-1].codes)
        scores = [jaccard(slots(v.codes), target) for v in patient.visits[:-1]]
        per_patient.append(float(np.mean(scores)))
    if not per_patient:
        raise EmptyDatasetError("no patient has two or more visits")
    return float(np.mean(per_patient))
