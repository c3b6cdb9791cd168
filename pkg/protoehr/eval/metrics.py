"""Evaluation metrics, bootstrap summaries and clustering statistics.

Per-task metric definitions:

- mortality / readmission: AUPRC (average precision), AUROC, binary F1 at 0.5
- length of stay: AUROC (one-vs-rest macro over classes with both outcomes
  observed), macro F1 of the argmax class
- drug / phenotype: samples-averaged AUPRC, AUROC and F1 at 0.5

Examples:
    >>> auroc([0.8, 0.7, 0.6, 0.2], [1, 0, 1, 0])
    0.75
    >>> jaccard({"a", "b"}, {"b", "c"})
    0.3333333333333333
    >>> report = bootstrap_metric(Task.MORTALITY, MetricName.AUPRC, probs, labels, n=100, seed=0)

Tests:
    - tests/unit/test_metrics.py
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import average_precision_score, f1_score, roc_auc_score, silhouette_score

from protoehr.config import MetricName, Task, is_binary, is_multilabel
from protoehr.core.errors import ContractError, UndefinedMetricError
from protoehr.core.seeding import derive_seed32, make_rng
from protoehr.schemas.reports import ClusterReport, MetricReport

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
KMEANS_RESTARTS = 20
KMEANS_TOL = 1e-8
MAX_REDRAW_FACTOR = 10

MetricFn = Callable[[np.ndarray, np.ndarray], float]


def _as_1d(
    scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.shape != y.shape:
        raise ContractError(f"{s.shape[0]} scores for {y.shape[0]} labels")
    if s.size == 0:
        raise UndefinedMetricError("no samples")
    return s, y


# =============================================================================
# Binary metrics
# =============================================================================


def auroc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Probability that a random positive outranks a random negative (ties count half).

    Raises:
        UndefinedMetricError: If only one class is present.
    """
    s, y = _as_1d(scores, labels)
    if len(np.unique(y)) < 2:
        raise UndefinedMetricError("AUROC needs both classes")
    return float(roc_auc_score(y, s))


def auprc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Average precision over descending-score thresholds.

    Raises:
        UndefinedMetricError: If there are no positives.
    """
    s, y = _as_1d(scores, labels)
    if not y.any():
        raise UndefinedMetricError("AUPRC needs at least one positive")
    return float(average_precision_score(y, s))


def f1(
    pred_labels: Sequence[int] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    averaging: str = "binary",
) -> float:
    """F1 with ``binary``, ``macro`` or ``samples`` averaging; empty denominators count 0."""
    if averaging not in ("binary", "macro", "samples"):
        raise ContractError(f"unknown F1 averaging {averaging!r}")
    pred = np.asarray(pred_labels)
    true = np.asarray(labels)
    if pred.shape != true.shape:
        raise ContractError(f"prediction shape {pred.shape} != label shape {true.shape}")
    if true.size == 0:
        raise UndefinedMetricError("no samples")
    return float(
        f1_score(true.astype(np.int64), pred.astype(np.int64), average=averaging, zero_division=0)
    )


# =============================================================================
# Task metrics
# =============================================================================


def _los_auroc(probs: np.ndarray, labels: np.ndarray) -> float:
    per_class = []
    for c in range(probs.shape[1]):
        y = (labels == c).astype(np.int64)
        if 0 < y.sum() < len(y):
            per_class.append(roc_auc_score(y, probs[:, c]))
    if not per_class:
        raise UndefinedMetricError("no length-of-stay class has both outcomes")
    return float(np.mean(per_class))


def task_metric(
    metric: MetricName, probs: np.ndarray, labels: np.ndarray, task: Task
) -> float:
    """One metric for a task's probabilities and labels.

    Args:
        metric: Metric to compute.
        probs: (N,1) or (N,) for binary tasks, (N,10) for LoS, (N,out) multi-label.
        labels: (N,) / (N,1) binary, (N,) LoS class ids, (N,out) multi-hot.

    Raises:
        UndefinedMetricError: If the labels cannot support the metric.
        ContractError: For a metric the task does not report.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if is_binary(task):
        if metric == MetricName.AUPRC:
            return auprc(probs, labels)
        if metric == MetricName.AUROC:
            return auroc(probs, labels)
        return f1((probs.reshape(-1) >= THRESHOLD).astype(np.int64), labels.reshape(-1))

    if task == Task.LENGTH_OF_STAY:
        classes = labels.reshape(-1).astype(np.int64)
        if metric == MetricName.AUROC:
            return _los_auroc(probs, classes)
        if metric == MetricName.F1:
            return f1(probs.argmax(axis=1), classes, averaging="macro")
        raise ContractError(f"{metric.value} is not reported for length of stay")

    assert is_multilabel(task)
    y = labels.astype(np.int64)
    if metric == MetricName.F1:
        return f1((probs >= THRESHOLD).astype(np.int64), y, averaging="samples")
    # Every multi-hot row holds a 1 (possibly the none-flag) and a 0, so
    # samples-averaged ranking metrics are always defined.
    if metric == MetricName.AUPRC:
        return float(average_precision_score(y, probs, average="samples"))
    return float(roc_auc_score(y, probs, average="samples"))


# =============================================================================
# Bootstrap
# =============================================================================


@dataclass
class BootstrapResult:
    """Metric values over resamples."""

    values: np.ndarray
    redrawn: int
    seed: int

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())

    def to_report(
        self, task: Task, metric: MetricName, point: float | None = None
    ) -> MetricReport:
        return MetricReport(
            task=task,
            metric=metric,
            mean=self.mean,
            std=self.std,
            n_resamples=len(self.values),
            seed=self.seed,
            point=point,
            redrawn=self.redrawn,
        )


def bootstrap(
    metric_fn: MetricFn,
    scores: np.ndarray,
    labels: np.ndarray,
    n: int = 100,
    seed: int = 0,
) -> BootstrapResult:
    """Resample (score, label) rows with replacement ``n`` times.

    Resample ``i`` draws from its own stream derived from ``(seed, i)``. A
    resample on which the metric is undefined is redrawn from the same stream.

    Raises:
        UndefinedMetricError: If more than ``10 * n`` redraws are needed.
    """
    if n < 1:
        raise ContractError(f"bootstrap needs n >= 1, got {n}")
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    size = len(labels)
    if size == 0 or len(scores) != size:
        raise ContractError(f"bootstrap over {len(scores)} scores and {size} labels")
    values = np.empty(n)
    redrawn = 0
    for i in range(n):
        rng = make_rng(seed, "bootstrap", i)
        while True:
            idx = rng.integers(0, size, size=size)
            try:
                values[i] = metric_fn(scores[idx], labels[idx])
                break
            except UndefinedMetricError:
                redrawn += 1
                if redrawn > MAX_REDRAW_FACTOR * n:
                    raise UndefinedMetricError(
                        f"metric undefined on {redrawn} resamples; labels lack a class"
                    ) from None
    if redrawn:
        logger.warning(f"Redrew {redrawn} bootstrap resamples lacking a class")
    return BootstrapResult(values=values, redrawn=redrawn, seed=seed)


def bootstrap_metric(
    task: Task,
    metric: MetricName,
    probs: np.ndarray,
    labels: np.ndarray,
    n: int = 100,
    seed: int = 0,
) -> MetricReport:
    """Bootstrap one task metric and include its value on the full sample."""
    point = task_metric(metric, probs, labels, task)
    result = bootstrap(lambda p, y: task_metric(metric, p, y, task), probs, labels, n, seed)
    return result.to_report(task, metric, point=point)


# =============================================================================
# Sets and clustering
# =============================================================================


def jaccard(a: Iterable[object], b: Iterable[object]) -> float:
    """|A∩B| / |A∪B|; two empty sets score 1."""
    set_a, set_b = set(a), set(b)
    union = set_a | set_b
    if not union:
        return 1.0
    return len(set_a & set_b) / len(union)


def silhouette(points: np.ndarray, assignments: Sequence[int] | np.ndarray) -> float:
    """Mean silhouette; 0 when there is one cluster or every point is its own cluster."""
    x = np.asarray(points, dtype=np.float64)
    labels = np.asarray(assignments)
    n_clusters = len(np.unique(labels))
    if n_clusters < 2 or n_clusters >= len(x):
        return 0.0
    return float(np.clip(silhouette_score(x, labels), -1.0, 1.0))


def kmeans(points: np.ndarray, k: int, seed: int = 0) -> ClusterReport:
    """k-means++ seeded Lloyd iterations with 20 restarts.

    Fewer distinct points than ``k`` yields a degenerate report (logged).

    Raises:
        ContractError: If ``k`` is not in 1..len(points).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ContractError(f"kmeans needs a nonempty 2-d point array, got shape {x.shape}")
    if not 1 <= k <= len(x):
        raise ContractError(f"k={k} outside 1..{len(x)}")
    distinct = len(np.unique(x, axis=0))
    degenerate = distinct < k
    if degenerate:
        logger.warning(f"kmeans: {distinct} distinct points for k={k}; clusters are degenerate")
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=KMEANS_RESTARTS,
        tol=KMEANS_TOL,
        random_state=derive_seed32(seed, "kmeans"),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        assignments = model.fit_predict(x)
    score = 0.0 if k == 1 else silhouette(x, assignments)
    return ClusterReport(
        k=k,
        assignments=[int(a) for a in assignments],
        centroids=model.cluster_centers_.tolist(),
        silhouette=score,
        inertia=float(model.inertia_),
        degenerate=degenerate,
    )
