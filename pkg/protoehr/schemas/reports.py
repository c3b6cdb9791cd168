"""Report schemas written by evaluation, training and analysis commands.

Examples:
    >>> MetricReport(task="mortality", metric="auroc", mean=0.91, std=0.01,
    ...              n_resamples=100, seed=0)

Tests:
    - tests/unit/test_schemas.py::TestReportSchemas
"""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator

from protoehr.config import Level, MetricName, Task


class DatasetStatistics(BaseModel):
    """Cohort summary (one column of a dataset-statistics table)."""

    n_patients: int
    n_visits: int
    n_diagnoses: int
    n_procedures: int
    n_medications: int
    visits_per_patient: float
    codes_per_visit: float
    diagnoses_per_visit: float
    procedures_per_visit: float
    medications_per_visit: float


class MetricReport(BaseModel):
    """Bootstrap summary of one metric."""

    task: Task
    metric: MetricName
    mean: float
    std: float = Field(..., ge=0.0)
    n_resamples: int = Field(..., ge=1)
    seed: int
    point: float | None = Field(default=None, description="Metric on the full sample")
    redrawn: int = Field(default=0, description="Resamples redrawn for lacking a class")


class EvalReport(BaseModel):
    """All metrics of one evaluation run."""

    task: Task
    n_samples: int
    metrics: list[MetricReport]

    def by_name(self) -> dict[str, MetricReport]:
        return {m.metric.value: m for m in self.metrics}


class ClusterReport(BaseModel):
    """K-means result with silhouette."""

    k: int
    assignments: list[int]
    centroids: list[list[float]]
    silhouette: float = Field(..., ge=-1.0, le=1.0)
    inertia: float = 0.0
    degenerate: bool = Field(default=False, description="Fewer distinct points than k")


class LevelClusterReport(BaseModel):
    """Silhouette of per-sample prototype-importance vectors at one level."""

    level: Level
    k: int
    silhouette: float = Field(..., ge=-1.0, le=1.0)
    n_points: int
    degenerate: bool = False


class FusionTraceRecord(BaseModel):
    """Per-sample fusion weights and prototype attention."""

    sample: str
    patient_id: int
    prefix_len: int
    label: int | list[int]
    beta: list[float] = Field(..., min_length=3, max_length=3)
    proto_attn: dict[str, list[float]]


class LevelImportanceSummary(BaseModel):
    """Mean fusion weight per level over a test set."""

    task: Task
    n_samples: int
    beta_code: float
    beta_visit: float
    beta_patient: float

    @model_validator(mode="after")
    def check_sum(self) -> LevelImportanceSummary:
        total = self.beta_code + self.beta_visit + self.beta_patient
        if self.n_samples and abs(total - 1.0) > 1e-9:
            raise ValueError(f"level weights sum to {total}, expected 1")
        return self


class PrototypeHeatmap(BaseModel):
    """Mean attention per (label, prototype) for the top-k prototypes."""

    level: Level
    labels: list[int]
    prototypes: list[int]
    matrix: list[list[float]]
    trend: list[float | None] = Field(
        default_factory=list, description="Spearman rho of label vs importance per prototype"
    )


class CodeCount(BaseModel):
    code: str
    count: int


class PrototypeTopCodes(BaseModel):
    """Most frequent last-visit codes among a prototype's top patients."""

    prototype: int
    n_patients: int
    diagnoses: list[CodeCount]
    procedures: list[CodeCount]


class HistoryRow(BaseModel):
    epoch: int
    train_loss: float
    val_metric: float
    lr: float


class TrialResult(BaseModel):
    """One grid-search trial."""

    trial: int
    point: dict[str, float | int]
    seed: int
    best_metric: float
    best_epoch: int
    epochs_run: int
    checkpoint: str
    rank: int = 0


class AblationArm(BaseModel):
    """Test metrics of one ablation arm over seeds."""

    arm: str
    seeds: list[int]
    metrics: dict[str, list[float]]
    mean: dict[str, float]
    std: dict[str, float]
    relative_delta: dict[str, float] = Field(
        default_factory=dict, description="(arm - full) / full per metric"
    )


class AblationReport(BaseModel):
    task: Task
    arms: list[AblationArm]
