"""EHR data schemas: codes, visits, patients, datasets and task samples.

A patient is an ordered sequence of visits, a visit is a set of medical codes.
Code id 0 is reserved for padding and never appears in the code table.

Examples:
    >>> code = MedicalCode(id=1, name="DX001", kind=CodeKind.DIAGNOSIS)
    >>> visit = Visit(codes=[3, 1, 1], admit=0.0, discharge=2.5)
    >>> visit.codes
    (1, 3)
    >>> visit.duration
    2.5

Tests:
    - tests/unit/test_schemas.py
"""

from __future__ import annotations

from enum import Enum
from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from protoehr.config import TASK_OUTPUT_DIMS, Task, is_multilabel

PADDING_ID = 0


class CodeKind(str, Enum):
    """Medical code kinds, serialized as single letters."""

    DIAGNOSIS = "D"
    PROCEDURE = "P"
    MEDICATION = "M"


class MedicalCode(BaseModel):
    """One entry of the code table.

    Attributes:
        id: Dense id, 1-based (0 is padding)
        name: Unique code name
        kind: Diagnosis, procedure or medication
    """

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=1)
    name: str = Field(..., min_length=1)
    kind: CodeKind


class Visit(BaseModel):
    """One hospital admission.

    Attributes:
        codes: Sorted unique code ids
        admit_time: Admission time in days
        discharge_time: Discharge time in days
        died_during: Whether the patient died during or right after this stay
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    codes: tuple[int, ...] = Field(..., min_length=1)
    admit_time: float = Field(..., alias="admit")
    discharge_time: float = Field(..., alias="discharge")
    died_during: bool = Field(default=False, alias="died")

    @field_validator("codes", mode="before")
    @classmethod
    def normalize_codes(cls, v: object) -> tuple[int, ...]:
        if not isinstance(v, (list, tuple, set, frozenset)):
            raise ValueError("codes must be a list of ints")
        return tuple(sorted({int(c) for c in v}))

    @model_validator(mode="after")
    def check_times(self) -> Visit:
        if self.discharge_time < self.admit_time:
            raise ValueError("discharge precedes admit")
        if self.codes[0] <= PADDING_ID:
            raise ValueError("code ids must be >= 1")
        return self

    @property
    def duration(self) -> float:
        return self.discharge_time - self.admit_time


class PatientRecord(BaseModel):
    """A patient's ordered visit history."""

    model_config = ConfigDict(frozen=True)

    patient_id: int = Field(..., ge=0)
    visits: tuple[Visit, ...] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_order(self) -> PatientRecord:
        admits = [v.admit_time for v in self.visits]
        if any(b <= a for a, b in zip(admits, admits[1:])):
            raise ValueError(f"patient {self.patient_id}: visits must have increasing admit times")
        return self


class EHRDataset(BaseModel):
    """Code table plus patient records.

    Attributes:
        codes: Code table, ids dense in 1..len(codes)
        patients: Patient records with unique ids
    """

    codes: list[MedicalCode]
    patients: list[PatientRecord]

    @model_validator(mode="after")
    def check_integrity(self) -> EHRDataset:
        ids = [c.id for c in self.codes]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("code ids must be dense and ordered from 1")
        if len({c.name for c in self.codes}) != len(self.codes):
            raise ValueError("code names must be unique")
        seen: set[int] = set()
        n = len(self.codes)
        for patient in self.patients:
            if patient.patient_id in seen:
                raise ValueError(f"duplicate patient id {patient.patient_id}")
            seen.add(patient.patient_id)
            for visit in patient.visits:
                if visit.codes[-1] > n:
                    raise ValueError(
                        f"patient {patient.patient_id}: unknown code id {visit.codes[-1]}"
                    )
        return self

    @property
    def n_codes(self) -> int:
        """Embedding rows including the padding row."""
        return len(self.codes) + 1

    @cached_property
    def kinds(self) -> np.ndarray:
        """Kind letter per code id (index 0 is padding, marked '-')."""
        return np.array(["-"] + [c.kind.value for c in self.codes])

    @cached_property
    def name_to_id(self) -> dict[str, int]:
        return {c.name: c.id for c in self.codes}

    def ids_of_kind(self, kind: CodeKind) -> list[int]:
        return [c.id for c in self.codes if c.kind == kind]

    def patient(self, patient_id: int) -> PatientRecord:
        for p in self.patients:
            if p.patient_id == patient_id:
                return p
        raise KeyError(patient_id)


class TaskSample(BaseModel):
    """Model input + label for one (patient, prefix) pair.

    Attributes:
        patient_id: Source patient
        prefix_len: Number of the patient's visits this sample covers
            (label visit included)
        visits: Input visits as code-id tuples (masking already applied)
        task: Prediction task
        label: int for binary (0/1) and LoS (0..9), multi-hot list otherwise
    """

    model_config = ConfigDict(frozen=True)

    patient_id: int
    prefix_len: int = Field(..., ge=1)
    visits: tuple[tuple[int, ...], ...] = Field(..., min_length=1)
    task: Task
    label: int | tuple[int, ...]

    @model_validator(mode="after")
    def check_label(self) -> TaskSample:
        dim = TASK_OUTPUT_DIMS[self.task]
        if any(len(v) == 0 for v in self.visits):
            raise ValueError("input visits must be nonempty")
        if is_multilabel(self.task):
            if not isinstance(self.label, tuple) or len(self.label) != dim:
                raise ValueError(f"{self.task.value} label must be a multi-hot vector of length {dim}")
            if any(x not in (0, 1) for x in self.label):
                raise ValueError("multi-hot entries must be 0 or 1")
            if (sum(self.label[:-1]) > 0) == bool(self.label[-1]):
                raise ValueError("none-flag must be set iff no other label is set")
        else:
            upper = 1 if dim == 1 else dim - 1
            if not isinstance(self.label, int) or not 0 <= self.label <= upper:
                raise ValueError(f"{self.task.value} label must be an int in [0, {upper}]")
        return self

    @property
    def sample_id(self) -> str:
        return f"{self.patient_id}:{self.prefix_len}"

    def label_array(self) -> np.ndarray:
        return np.asarray(self.label, dtype=np.float64)
