"""Unit tests for task label derivation.

Tests for protoehr/ehr/tasks.py.

Run with:
    pytest tests/unit/test_tasks.py -v -m fast
"""

from itertools import chain, combinations

import pytest

from protoehr.config import Task
from protoehr.core.errors import ContractError
from protoehr.ehr.tasks import (
    LabelSpace,
    derive_task_samples,
    los_bin,
    sample_at,
    sliding_window_augment,
)
from protoehr.schemas.ehr import EHRDataset


def subsets(items):
    return chain.from_iterable(combinations(items, r) for r in range(len(items) + 1))


@pytest.mark.fast
class TestLosBin:
    """Tests for the length-of-stay binning."""

    @pytest.mark.parametrize(
        "days,expected",
        [
            (0.0, 0),
            (0.5, 0),
            (0.999, 0),
            (1.0, 1),
            (3.2, 3),
            (7.0, 7),
            (7.99, 7),
            (8.0, 8),
            (10.0, 8),
            (14.0, 8),
            (14.0001, 9),
            (20.0, 9),
        ],
    )
    def test_bin_boundaries(self, days, expected):
        """Test each bin is left-closed and 8..14 days share a bin."""
        assert los_bin(days) == expected

    def test_negative_stay(self):
        """Test negative durations raise ContractError."""
        with pytest.raises(ContractError):
            los_bin(-0.1)


@pytest.mark.fast
class TestLabelSpace:
    """Tests for drug slots and phenotype groups."""

    def test_slots_by_rank(self, toy_dataset):
        """Test medications and diagnoses map by rank among their kind."""
        space = LabelSpace.from_dataset(toy_dataset)
        assert space.drug_slot == {6: 0, 7: 1}
        assert space.phenotype_group == {1: 0, 2: 1, 3: 2}

    def test_slots_wrap_modulo(self):
        """Test diagnosis ranks wrap modulo the 25 phenotype groups."""
        from protoehr.schemas.ehr import CodeKind, MedicalCode

        codes = [MedicalCode(id=i, name=f"DX{i:03d}", kind=CodeKind.DIAGNOSIS) for i in range(1, 28)]
        space = LabelSpace.from_dataset(EHRDataset(codes=codes, patients=[]))
        assert space.phenotype_group[26] == 0
        assert space.phenotype_group[27] == 1

    @pytest.mark.parametrize("task", [Task.DRUG, Task.PHENOTYPE])
    def test_none_flag_exhaustive(self, toy_dataset, task):
        """Test every subset of visit codes: the flag is set iff no label slot is."""
        space = LabelSpace.from_dataset(toy_dataset)
        mapping = space.drug_slot if task == Task.DRUG else space.phenotype_group
        for codes in subsets(range(1, 8)):
            vector = space.multi_hot(codes, task)
            hot = {mapping[c] for c in codes if c in mapping}
            assert {i for i, x in enumerate(vector[:-1]) if x} == hot
            assert vector[-1] == (0 if hot else 1)


@pytest.mark.fast
class TestDeriveSamples:
    """Tests for per-task sample derivation on the toy cohort."""

    def test_mortality_labels(self, toy_dataset):
        """Test mortality uses the last visit and skips single-visit patients."""
        samples = derive_task_samples(toy_dataset, Task.MORTALITY)
        assert [s.patient_id for s in samples] == [0, 1, 2, 4, 5]
        assert [s.label for s in samples] == [1, 0, 1, 0, 1]

    def test_mortality_input_excludes_label_visit(self, toy_dataset):
        """Test the label visit is not part of the input."""
        sample = derive_task_samples(toy_dataset, Task.MORTALITY)[2]
        assert sample.prefix_len == 3
        assert sample.visits == ((3, 4), (1, 3, 6, 7))

    def test_mortality_thirty_day_clock(self, patient_factory):
        """Test a death more than 30 days after the previous discharge is negative."""
        patient = patient_factory(
            0, [((1,), 0.0, 1.0, False), ((2,), 20.0, 41.5, True)]
        )
        assert sample_at(patient, 2, Task.MORTALITY).label == 0
        patient = patient_factory(
            0, [((1,), 0.0, 1.0, False), ((2,), 20.0, 31.0, True)]
        )
        assert sample_at(patient, 2, Task.MORTALITY).label == 1

    def test_readmission_labels(self, toy_dataset):
        """Test readmission within 30 days of the previous discharge."""
        samples = derive_task_samples(toy_dataset, Task.READMISSION)
        assert [s.label for s in samples] == [1, 0, 1, 0, 1]

    def test_los_labels(self, toy_dataset):
        """Test LoS includes single-visit patients and bins the last stay."""
        samples = derive_task_samples(toy_dataset, Task.LENGTH_OF_STAY)
        assert [s.label for s in samples] == [3, 4, 1, 3, 9, 2]
        assert samples[0].visits == ((1, 4, 6), (1, 2, 6))

    def test_drug_masks_label_medications(self, toy_dataset):
        """Test the label visit's medications are removed from the input."""
        samples = {s.patient_id: s for s in derive_task_samples(toy_dataset, Task.DRUG)}
        assert samples[0].visits == ((1, 4, 6), (1, 2))
        assert samples[0].label[0] == 1 and samples[0].label[-1] == 0
        assert samples[3].visits == ((2,),)
        assert samples[3].label[1] == 1

    def test_phenotype_masks_label_diagnoses(self, toy_dataset):
        """Test the label visit's diagnoses are removed from the input."""
        samples = {s.patient_id: s for s in derive_task_samples(toy_dataset, Task.PHENOTYPE)}
        assert samples[1].visits == ((2, 5), (7,))
        assert samples[1].label[1] == 1 and samples[1].label[2] == 1

    def test_empty_input_skipped(self, tiny_codes, patient_factory):
        """Test a single visit of only medications yields no drug sample."""
        ds = EHRDataset(
            codes=tiny_codes, patients=[patient_factory(0, [((6, 7), 0.0, 1.0, False)])]
        )
        assert derive_task_samples(ds, Task.DRUG) == []

    def test_multilabel_needs_space(self, toy_dataset):
        """Test drug labels without a LabelSpace raise ContractError."""
        with pytest.raises(ContractError):
            sample_at(toy_dataset.patients[0], 2, Task.DRUG)


@pytest.mark.fast
class TestSlidingWindow:
    """Tests for sliding-window augmentation."""

    def test_mortality_unchanged(self, toy_dataset):
        """Test mortality samples are not augmented."""
        samples = derive_task_samples(toy_dataset, Task.MORTALITY)
        assert sliding_window_augment(samples, Task.MORTALITY, toy_dataset) == samples

    def test_readmission_prefixes(self, toy_dataset):
        """Test only the three-visit patient gains a shorter prefix."""
        samples = derive_task_samples(toy_dataset, Task.READMISSION)
        augmented = sliding_window_augment(samples, Task.READMISSION, toy_dataset)
        assert len(augmented) == 6
        extra = [s for s in augmented if s.patient_id == 2]
        assert [s.prefix_len for s in extra] == [2, 3]
        assert extra[0].label == 1

    def test_los_every_prefix(self, toy_dataset):
        """Test LoS adds one sample per shorter prefix."""
        samples = derive_task_samples(toy_dataset, Task.LENGTH_OF_STAY)
        augmented = sliding_window_augment(samples, Task.LENGTH_OF_STAY, toy_dataset)
        assert len(augmented) == 12
        first = next(s for s in augmented if s.patient_id == 4)
        assert first.prefix_len == 1 and first.label == 3
