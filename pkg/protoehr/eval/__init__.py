"""Metrics, bootstrap summaries and the evaluation runner."""

from protoehr.eval.metrics import (
    auprc,
    auroc,
    bootstrap,
    bootstrap_metric,
    f1,
    jaccard,
    kmeans,
    silhouette,
    task_metric,
)
from protoehr.eval.runner import evaluate, read_traces, write_traces

__all__ = [
    "auprc",
    "auroc",
    "bootstrap",
    "bootstrap_metric",
    "evaluate",
    "f1",
    "jaccard",
    "kmeans",
    "read_traces",
    "silhouette",
    "task_metric",
    "write_traces",
]
