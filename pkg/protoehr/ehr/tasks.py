"""Task label derivation for the five prediction tasks.

A sample covers the first ``k`` visits of a patient; the k-th visit is the
label visit:

- mortality / readmission: input = visits 1..k-1; label from visit k, with
  the 30-day clock measured from the discharge of visit k-1
- length of stay: input = visits 1..k; label = binned duration of visit k
- drug: input = visits 1..k with visit k's medications removed; label =
  multi-hot over 201 medication slots + a none-flag
- phenotype: input = visits 1..k with visit k's diagnoses removed; label =
  multi-hot over 25 diagnosis groups + a none-flag

If masking empties visit k it is dropped from the input; a sample whose
input ends up empty is skipped.

Examples:
    >>> los_bin(0.5), los_bin(3.2), los_bin(10.0), los_bin(20.0)
    (0, 3, 8, 9)

Tests:
    - tests/unit/test_tasks.py
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

from protoehr.config import DRUG_SLOTS, PHENOTYPE_GROUPS, TASK_MIN_VISITS, Task
from protoehr.core.errors import ContractError
from protoehr.schemas.ehr import CodeKind, EHRDataset, PatientRecord, TaskSample

logger = logging.getLogger(__name__)

THIRTY_DAYS = 30.0


def los_bin(days: float) -> int:
    """Length-of-stay class.

    0: t < 1; y in 1..7: y <= t < y+1; 8: 8 <= t <= 14; 9: t > 14.
    """
    if days < 0:
        raise ContractError(f"negative stay: {days}")
    if days < 1.0:
        return 0
    if days < 8.0:
        return int(days)
    if days <= 14.0:
        return 8
    return 9


@dataclass(frozen=True)
class LabelSpace:
    """Maps medication and diagnosis ids to drug slots and phenotype groups.

    Slot of a medication = its rank among medication ids modulo 201; group of
    a diagnosis = its rank among diagnosis ids modulo 25.
    """

    drug_slot: dict[int, int]
    phenotype_group: dict[int, int]
    medications: frozenset[int]
    diagnoses: frozenset[int]

    @classmethod
    def from_dataset(cls, ds: EHRDataset) -> LabelSpace:
        meds = ds.ids_of_kind(CodeKind.MEDICATION)
        diags = ds.ids_of_kind(CodeKind.DIAGNOSIS)
        return cls(
            drug_slot={code: rank % DRUG_SLOTS for rank, code in enumerate(meds)},
            phenotype_group={code: rank % PHENOTYPE_GROUPS for rank, code in enumerate(diags)},
            medications=frozenset(meds),
            diagnoses=frozenset(diags),
        )

    def multi_hot(self, codes: Sequence[int], task: Task) -> tuple[int, ...]:
        mapping, width = (
            (self.drug_slot, DRUG_SLOTS) if task == Task.DRUG else (self.phenotype_group, PHENOTYPE_GROUPS)
        )
        vector = [0] * (width + 1)
        for code in codes:
            if code in mapping:
                vector[mapping[code]] = 1
        if not any(vector):
            vector[width] = 1
        return tuple(vector)

    def masked_kind(self, task: Task) -> frozenset[int]:
        return self.medications if task == Task.DRUG else self.diagnoses


def sample_at(
    patient: PatientRecord, k: int, task: Task, space: LabelSpace | None = None
) -> TaskSample | None:
    """The sample covering the first ``k`` visits, or None if it has no input."""
    visits = patient.visits
    if not TASK_MIN_VISITS[task] <= k <= len(visits):
        return None
    target = visits[k - 1]

    label: int | tuple[int, ...]
    if task in (Task.MORTALITY, Task.READMISSION):
        inputs = [v.codes for v in visits[: k - 1]]
        previous = visits[k - 2]
        if task == Task.MORTALITY:
            label = int(target.died_during and target.discharge_time - previous.discharge_time <= THIRTY_DAYS)
        else:
            label = int(target.admit_time - previous.discharge_time <= THIRTY_DAYS)
    elif task == Task.LENGTH_OF_STAY:
        inputs = [v.codes for v in visits[:k]]
        label = los_bin(target.duration)
    else:
        if space is None:
            raise ContractError(f"{task.value} labels need a LabelSpace")
        masked = space.masked_kind(task)
        remaining = tuple(c for c in target.codes if c not in masked)
        inputs = [v.codes for v in visits[: k - 1]]
        if remaining:
            inputs.append(remaining)
        label = space.multi_hot([c for c in target.codes if c in masked], task)

    if not inputs:
        return None
    return TaskSample(
        patient_id=patient.patient_id,
        prefix_len=k,
        visits=tuple(inputs),
        task=task,
        label=label,
    )


def derive_task_samples(ds: EHRDataset, task: Task) -> list[TaskSample]:
    """One sample per eligible patient, covering all of their visits.

    Patients below the task's minimum visit count (or whose masked input is
    empty) are skipped and counted in the log.
    """
    space = LabelSpace.from_dataset(ds) if task in (Task.DRUG, Task.PHENOTYPE) else None
    samples: list[TaskSample] = []
    skipped = 0
    for patient in ds.patients:
        sample = sample_at(patient, len(patient.visits), task, space)
        if sample is None:
            skipped += 1
        else:
            samples.append(sample)
    logger.info(f"{task.value}: {len(samples)} samples, {skipped} patients skipped")
    return samples


def sliding_window_augment(
    samples: Sequence[TaskSample], task: Task, ds: EHRDataset
) -> list[TaskSample]:
    """Add a sample for every shorter valid visit prefix.

    Labels are re-derived on each prefix's own label visit. Mortality samples
    are returned unchanged.
    """
    if task == Task.MORTALITY:
        return list(samples)
    space = LabelSpace.from_dataset(ds) if task in (Task.DRUG, Task.PHENOTYPE) else None
    by_id = {p.patient_id: p for p in ds.patients}
    augmented: list[TaskSample] = []
    for sample in samples:
        patient = by_id[sample.patient_id]
        for k in range(TASK_MIN_VISITS[task], sample.prefix_len):
            extra = sample_at(patient, k, task, space)
            if extra is not None:
                augmented.append(extra)
        augmented.append(sample)
    logger.info(f"{task.value}: sliding window {len(samples)} -> {len(augmented)} samples")
    return augmented
