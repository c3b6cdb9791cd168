"""JSON-lines persistence for EHR datasets.

Two UTF-8 files, one JSON object per line:

    codes:    {"id": 1, "name": "DX001", "kind": "D"}
    patients: {"patient_id": 0, "visits": [{"admit": 12.5, "discharge": 15.0,
               "died": false, "codes": [1, 7, 93]}, ...]}

Examples:
    >>> save_dataset(ds, "out/dataset.jsonl", "out/codes.jsonl")
    >>> load_dataset("out/dataset.jsonl", "out/codes.jsonl") == ds
    True

Tests:
    - tests/unit/test_ehr_io.py
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterator
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from protoehr.core.errors import EmptyDatasetError, ParseError
from protoehr.schemas.ehr import EHRDataset, MedicalCode, PatientRecord

logger = logging.getLogger(__name__)


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def _records(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path.name}: invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path.name}: expected a JSON object", line=lineno)
            yield lineno, record


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    where = ".".join(str(p) for p in err["loc"])
    return f"{where}: {err['msg']}" if where else err["msg"]


def load_codes(path: str | Path) -> list[MedicalCode]:
    """Read a code table file.

    Raises:
        ParseError: On malformed lines or unknown code kinds.
        EmptyDatasetError: If the file holds no codes.
    """
    path = Path(path)
    codes: list[MedicalCode] = []
    for lineno, record in _records(path):
        try:
            codes.append(MedicalCode.model_validate(record))
        except ValidationError as exc:
            raise ParseError(f"{path.name}: {_first_error(exc)}", line=lineno) from exc
        if codes[-1].id != len(codes):
            raise ParseError(f"{path.name}: expected code id {len(codes)}", line=lineno)
    if not codes:
        raise EmptyDatasetError(f"{path} contains no codes")
    return codes


def load_dataset(path: str | Path, codes_path: str | Path) -> EHRDataset:
    """Read a dataset from its patient and code files.

    Raises:
        ParseError: On a malformed record, with its line number.
        EmptyDatasetError: If either file is empty.
    """
    path = Path(path)
    codes = load_codes(codes_path)
    n_codes = len(codes)
    patients: list[PatientRecord] = []
    seen: set[int] = set()
    for lineno, record in _records(path):
        try:
            patient = PatientRecord.model_validate(record)
        except ValidationError as exc:
            raise ParseError(f"{path.name}: {_first_error(exc)}", line=lineno) from exc
        if patient.patient_id in seen:
            raise ParseError(f"{path.name}: duplicate patient id {patient.patient_id}", line=lineno)
        seen.add(patient.patient_id)
        for visit in patient.visits:
            if visit.codes[-1] > n_codes:
                raise ParseError(f"{path.name}: unknown code id {visit.codes[-1]}", line=lineno)
        patients.append(patient)
    if not patients:
        raise EmptyDatasetError(f"{path} contains no patients")
    logger.info(f"Loaded {len(patients)} patients and {n_codes} codes from {path}")
    return EHRDataset(codes=codes, patients=patients)


def save_dataset(ds: EHRDataset, path: str | Path, codes_path: str | Path) -> None:
    """Write the dataset as two JSON-lines files (byte-stable for equal datasets)."""
    path, codes_path = Path(path), Path(codes_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    codes_path.parent.mkdir(parents=True, exist_ok=True)
    with codes_path.open("w", encoding="utf-8", newline="\n") as handle:
        for code in ds.codes:
            handle.write(_dumps({"id": code.id, "name": code.name, "kind": code.kind.value}) + "\n")
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for patient in ds.patients:
            record = {
                "patient_id": patient.patient_id,
                "visits": [
                    {
                        "admit": v.admit_time,
                        "discharge": v.discharge_time,
                        "died": v.died_during,
                        "codes": list(v.codes),
                    }
                    for v in patient.visits
                ],
            }
            handle.write(_dumps(record) + "\n")
