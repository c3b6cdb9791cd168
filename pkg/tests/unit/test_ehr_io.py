"""Unit tests for EHR persistence and cohort statistics.

Tests for protoehr/ehr/io.py and protoehr/ehr/statistics.py.

Run with:
    pytest tests/unit/test_ehr_io.py -v -m fast
"""

import json

import pytest

from protoehr.core.errors import EmptyDatasetError, ParseError
from protoehr.ehr.io import load_codes, load_dataset, save_dataset
from protoehr.ehr.statistics import dataset_statistics
from protoehr.schemas.ehr import EHRDataset


@pytest.fixture
def saved(toy_dataset, tmp_path):
    data, codes = tmp_path / "dataset.jsonl", tmp_path / "codes.jsonl"
    save_dataset(toy_dataset, data, codes)
    return data, codes


@pytest.mark.fast
class TestDatasetIO:
    """Tests for save_dataset / load_dataset."""

    def test_roundtrip(self, toy_dataset, saved):
        """Test a saved dataset loads back equal."""
        assert load_dataset(*saved) == toy_dataset

    def test_byte_stable(self, toy_dataset, saved, tmp_path):
        """Test saving the same dataset twice gives identical bytes."""
        again = tmp_path / "again.jsonl", tmp_path / "again_codes.jsonl"
        save_dataset(toy_dataset, *again)
        assert saved[0].read_bytes() == again[0].read_bytes()
        assert saved[1].read_bytes() == again[1].read_bytes()

    def test_record_format(self, saved):
        """Test one compact JSON object per line with the documented keys."""
        first = saved[0].read_text().splitlines()[0]
        assert ", " not in first
        record = json.loads(first)
        assert record["patient_id"] == 0
        assert set(record["visits"][0]) == {"admit", "discharge", "died", "codes"}
        code = json.loads(saved[1].read_text().splitlines()[5])
        assert code == {"id": 6, "name": "RX001", "kind": "M"}

    def test_blank_lines_ignored(self, toy_dataset, saved):
        """Test blank lines between records are skipped."""
        data = saved[0]
        data.write_text(data.read_text().replace("\n", "\n\n"))
        assert load_dataset(*saved) == toy_dataset

    def test_invalid_json_line(self, saved):
        """Test a broken line reports its line number."""
        data = saved[0]
        lines = data.read_text().splitlines()
        lines[2] = lines[2][:-1]
        data.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as info:
            load_dataset(*saved)
        assert info.value.line == 3

    def test_non_object_line(self, saved):
        """Test a JSON array is not a record."""
        saved[0].write_text("[1, 2]\n")
        with pytest.raises(ParseError, match="JSON object"):
            load_dataset(*saved)

    def test_unknown_code(self, saved):
        """Test a visit referencing an id beyond the table is rejected."""
        saved[0].write_text(
            '{"patient_id":9,"visits":[{"admit":0,"discharge":1,"died":false,"codes":[1,42]}]}\n'
        )
        with pytest.raises(ParseError, match="unknown code id 42"):
            load_dataset(*saved)

    def test_duplicate_patient(self, saved):
        """Test a repeated patient id is rejected on its second line."""
        line = saved[0].read_text().splitlines()[0]
        saved[0].write_text(line + "\n" + line + "\n")
        with pytest.raises(ParseError, match="duplicate patient id") as info:
            load_dataset(*saved)
        assert info.value.line == 2

    def test_validation_error_names_field(self, saved):
        """Test schema violations become ParseError naming the field."""
        saved[0].write_text(
            '{"patient_id":0,"visits":[{"admit":5,"discharge":1,"died":false,"codes":[1]}]}\n'
        )
        with pytest.raises(ParseError, match="discharge precedes admit"):
            load_dataset(*saved)

    def test_empty_dataset(self, saved):
        """Test a file with no patients raises EmptyDatasetError."""
        saved[0].write_text("")
        with pytest.raises(EmptyDatasetError):
            load_dataset(*saved)


@pytest.mark.fast
class TestCodeIO:
    """Tests for load_codes."""

    def test_ids_follow_line_order(self, tmp_path):
        """Test ids must be 1..n in file order."""
        path = tmp_path / "codes.jsonl"
        path.write_text(
            '{"id":1,"name":"A","kind":"D"}\n{"id":3,"name":"B","kind":"M"}\n'
        )
        with pytest.raises(ParseError, match="expected code id 2") as info:
            load_codes(path)
        assert info.value.line == 2

    def test_unknown_kind(self, tmp_path):
        """Test a kind outside D/P/M is rejected."""
        path = tmp_path / "codes.jsonl"
        path.write_text('{"id":1,"name":"A","kind":"X"}\n')
        with pytest.raises(ParseError):
            load_codes(path)

    def test_empty_codes(self, tmp_path):
        """Test an empty code table raises EmptyDatasetError."""
        path = tmp_path / "codes.jsonl"
        path.write_text("\n")
        with pytest.raises(EmptyDatasetError):
            load_codes(path)


@pytest.mark.fast
class TestStatistics:
    """Tests for dataset_statistics."""

    def test_toy_counts(self, toy_dataset):
        """Test counts and per-visit means on the toy cohort."""
        stats = dataset_statistics(toy_dataset)
        assert stats.n_patients == 6
        assert stats.n_visits == 12
        assert (stats.n_diagnoses, stats.n_procedures, stats.n_medications) == (3, 2, 2)
        assert stats.visits_per_patient == pytest.approx(2.0)
        assert stats.codes_per_visit == pytest.approx(32 / 12)
        assert stats.diagnoses_per_visit == pytest.approx(16 / 12)
        assert (
            stats.diagnoses_per_visit + stats.procedures_per_visit + stats.medications_per_visit
        ) == pytest.approx(stats.codes_per_visit)

    def test_empty(self, tiny_codes):
        """Test a cohort without patients raises EmptyDatasetError."""
        with pytest.raises(EmptyDatasetError):
            dataset_statistics(EHRDataset(codes=tiny_codes, patients=[]))
