"""Pytest configuration and shared fixtures for ProtoEHR.

Markers:
    fast: Fast unit tests (pure numerics, no training loops)
    integration: Integration tests (CLI, pipelines, short training runs)
    slow: Slow tests (learnability and ablation experiments)

Usage:
    pytest -m fast          # Run only fast tests
    pytest -m integration   # Run integration tests
    pytest -m slow          # Run the learnability experiments
"""

import os

import numpy as np
import pytest

# Keep provider settings out of the developer's environment
os.environ.setdefault("PROTOEHR_OFFLINE", "true")


# ============================================================================
# Pytest Configuration
# ============================================================================


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line("markers", "fast: Fast unit tests (no training loops)")
    config.addinivalue_line("markers", "integration: Integration tests")
    config.addinivalue_line("markers", "slow: Learnability and ablation experiments")


# ============================================================================
# Data Fixtures
# ============================================================================


@pytest.fixture
def tiny_codes():
    """Seven codes: three diagnoses, two procedures, two medications."""
    from protoehr.schemas.ehr import CodeKind, MedicalCode

    names = [
        ("DX001", CodeKind.DIAGNOSIS),
        ("DX002", CodeKind.DIAGNOSIS),
        ("DX003", CodeKind.DIAGNOSIS),
        ("PR001", CodeKind.PROCEDURE),
        ("PR002", CodeKind.PROCEDURE),
        ("RX001", CodeKind.MEDICATION),
        ("RX002", CodeKind.MEDICATION),
    ]
    return [MedicalCode(id=i + 1, name=n, kind=k) for i, (n, k) in enumerate(names)]


def _make_patient(patient_id, visits):
    """Build a PatientRecord from (codes, admit, discharge, died) tuples."""
    from protoehr.schemas.ehr import PatientRecord, Visit

    return PatientRecord(
        patient_id=patient_id,
        visits=tuple(
            Visit(codes=list(codes), admit=admit, discharge=discharge, died=died)
            for codes, admit, discharge, died in visits
        ),
    )


@pytest.fixture
def patient_factory():
    """Builds PatientRecords from (codes, admit, discharge, died) tuples."""
    return _make_patient


@pytest.fixture
def toy_dataset(tiny_codes):
    """Six patients with one to three visits and both mortality outcomes."""
    from protoehr.schemas.ehr import EHRDataset

    patients = [
        _make_patient(0, [((1, 4, 6), 0.0, 2.0, False), ((1, 2, 6), 10.0, 13.5, True)]),
        _make_patient(1, [((2, 5), 0.0, 0.5, False), ((2, 3, 7), 100.0, 104.0, False)]),
        _make_patient(
            2,
            [
                ((3, 4), 0.0, 1.0, False),
                ((1, 3, 6, 7), 20.0, 29.0, False),
                ((1, 6), 40.0, 41.2, True),
            ],
        ),
        _make_patient(3, [((2, 7), 5.0, 8.0, False)]),
        _make_patient(4, [((1, 5, 6), 0.0, 3.0, False), ((2, 4), 200.0, 220.0, False)]),
        _make_patient(5, [((3, 7), 0.0, 1.5, False), ((1, 3, 5, 6), 15.0, 17.0, True)]),
    ]
    return EHRDataset(codes=tiny_codes, patients=patients)


@pytest.fixture
def toy_kg(tiny_codes):
    """Three facts over two relations."""
    from protoehr.kg.graph import MedicalKG

    return MedicalKG.from_names(
        tiny_codes,
        [
            ("DX001", "is treated with", "RX001"),
            ("DX002", "is treated with", "RX002"),
            ("DX001", "is a subtype of", "DX003"),
        ],
    )


@pytest.fixture
def toy_model_config():
    """Smallest model that still has every component."""
    from protoehr.config import ModelConfig

    return ModelConfig(
        dim=8,
        compgcn_layers=1,
        transformer_depth=1,
        heads=2,
        ffn_mult=2,
        code_protos=2,
        visit_protos=2,
        patient_protos=2,
        dropout=0.0,
        max_visits=8,
    )


@pytest.fixture
def small_generator_config():
    """A cohort small enough for second-scale training runs."""
    from protoehr.config import GeneratorConfig

    return GeneratorConfig(
        n_patients=80,
        n_diagnoses=10,
        n_procedures=5,
        n_medications=6,
        n_clusters=2,
        signature_size=3,
        max_visits=5,
    )


@pytest.fixture
def rng():
    """Deterministic numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def run_dir(tmp_path):
    """Fresh output directory."""
    out = tmp_path / "run"
    out.mkdir()
    return out
