"""EHR data: synthetic cohorts, task samples, splits and persistence."""

from protoehr.ehr.generator import PlantedTruth, generate_synthetic_cohort
from protoehr.ehr.io import load_codes, load_dataset, save_dataset
from protoehr.ehr.split import split, split_patients
from protoehr.ehr.statistics import dataset_statistics
from protoehr.ehr.tasks import LabelSpace, derive_task_samples, los_bin, sliding_window_augment

__all__ = [
    "LabelSpace",
    "PlantedTruth",
    "dataset_statistics",
    "derive_task_samples",
    "generate_synthetic_cohort",
    "load_codes",
    "load_dataset",
    "los_bin",
    "save_dataset",
    "sliding_window_augment",
    "split",
    "split_patients",
]
