"""Cohort summary statistics."""

from __future__ import annotations

import numpy as np

from protoehr.core.errors import EmptyDatasetError
from protoehr.schemas.ehr import CodeKind, EHRDataset
from protoehr.schemas.reports import DatasetStatistics


def dataset_statistics(ds: EHRDataset) -> DatasetStatistics:
    """Patients, visits, code vocabulary and per-visit code counts by kind."""
    if not ds.patients:
        raise EmptyDatasetError("dataset has no patients")
    kinds = ds.kinds
    per_visit: dict[str, list[int]] = {"D": [], "P": [], "M": []}
    for patient in ds.patients:
        for visit in patient.visits:
            letters = kinds[list(visit.codes)]
            for kind in per_visit:
                per_visit[kind].append(int((letters == kind).sum()))
    n_visits = len(per_visit["D"])
    totals = np.add(np.add(per_visit["D"], per_visit["P"]), per_visit["M"])
    return DatasetStatistics(
        n_patients=len(ds.patients),
        n_visits=n_visits,
        n_diagnoses=len(ds.ids_of_kind(CodeKind.DIAGNOSIS)),
        n_procedures=len(ds.ids_of_kind(CodeKind.PROCEDURE)),
        n_medications=len(ds.ids_of_kind(CodeKind.MEDICATION)),
        visits_per_patient=n_visits / len(ds.patients),
        codes_per_visit=float(totals.mean()),
        diagnoses_per_visit=float(np.mean(per_visit["D"])),
        procedures_per_visit=float(np.mean(per_visit["P"])),
        medications_per_visit=float(np.mean(per_visit["M"])),
    )
