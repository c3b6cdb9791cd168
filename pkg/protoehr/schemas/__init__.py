"""Pydantic schemas.

Re-exports all schemas for convenient imports.

Examples:
    >>> from protoehr.schemas import EHRDataset, Triplet, MetricReport
"""

from protoehr.schemas.ehr import (
    PADDING_ID,
    CodeKind,
    EHRDataset,
    MedicalCode,
    PatientRecord,
    TaskSample,
    Visit,
)
from protoehr.schemas.kg import EdgeKind, KGPipelineReport, ScoredTriplet, Triplet, TripletSource
from protoehr.schemas.reports import (
    AblationArm,
    AblationReport,
    ClusterReport,
    CodeCount,
    DatasetStatistics,
    EvalReport,
    FusionTraceRecord,
    HistoryRow,
    LevelClusterReport,
    LevelImportanceSummary,
    MetricReport,
    PrototypeHeatmap,
    PrototypeTopCodes,
    TrialResult,
)

__all__ = [
    # EHR
    "PADDING_ID",
    "CodeKind",
    "EHRDataset",
    "MedicalCode",
    "PatientRecord",
    "TaskSample",
    "Visit",
    # KG
    "EdgeKind",
    "KGPipelineReport",
    "ScoredTriplet",
    "Triplet",
    "TripletSource",
    # Reports
    "AblationArm",
    "AblationReport",
    "ClusterReport",
    "CodeCount",
    "DatasetStatistics",
    "EvalReport",
    "FusionTraceRecord",
    "HistoryRow",
    "LevelClusterReport",
    "LevelImportanceSummary",
    "MetricReport",
    "PrototypeHeatmap",
    "PrototypeTopCodes",
    "TrialResult",
]
