"""Unit tests for grid search.

Tests for protoehr/training/grid.py.

Run with:
    pytest tests/unit/test_grid.py -v -m fast
"""

import csv

import pytest

from protoehr.config import ExperimentConfig, GeneratorConfig, GridSpec, Task, TrainConfig
from protoehr.core.errors import ConfigError
from protoehr.core.seeding import derive_seed32
from protoehr.ehr.tasks import derive_task_samples
from protoehr.experiment import ExperimentData
from protoehr.schemas.reports import TrialResult
from protoehr.training.grid import (
    TRIALS_FILE,
    grid_search,
    rank_trials,
    trial_configs,
    write_trials,
)


def tiny_grid(**overrides):
    axes = {
        "compgcn_layers": [1],
        "transformer_depth": [1],
        "code_protos": [2],
        "visit_protos": [2],
        "patient_protos": [2],
        "dropout": [0.0],
        "lr": [1e-2, 5e-2],
    }
    axes.update(overrides)
    return GridSpec(**axes)


def trial(index, metric):
    return TrialResult(
        trial=index,
        point={"lr": 0.01},
        seed=index,
        best_metric=metric,
        best_epoch=1,
        epochs_run=2,
        checkpoint=f"trial_{index:03d}/model",
    )


@pytest.fixture
def data(toy_dataset, toy_kg):
    samples = derive_task_samples(toy_dataset, Task.MORTALITY)
    return ExperimentData(
        dataset=toy_dataset,
        truth=None,
        kg=toy_kg,
        kg_report=None,
        task=Task.MORTALITY,
        train=samples,
        val=samples,
        test=samples,
    )


@pytest.fixture
def experiment_config(toy_model_config):
    return ExperimentConfig(
        generator=GeneratorConfig(),
        model=toy_model_config,
        train=TrainConfig(max_epochs=2, patience=5, batch_size=5, seed=11),
    )


@pytest.mark.fast
class TestTrialConfigs:
    """Tests for applying grid points to base configs."""

    def test_point_split_between_configs(self, toy_model_config):
        """Test lr goes to training and every other axis to the model."""
        model, training = trial_configs(
            {"dropout": 0.3, "visit_protos": 4, "lr": 5e-4},
            toy_model_config,
            TrainConfig(max_epochs=7),
            seed=99,
        )
        assert model.dropout == 0.3
        assert model.visit_protos == 4
        assert model.dim == toy_model_config.dim
        assert training.lr == 5e-4
        assert training.max_epochs == 7
        assert training.seed == 99

    def test_invalid_point(self, toy_model_config):
        """Test a point that breaks validation raises ConfigError."""
        with pytest.raises(ConfigError, match="grid point"):
            trial_configs({"dropout": 1.5}, toy_model_config, TrainConfig(), seed=0)


@pytest.mark.fast
class TestRanking:
    """Tests for ranking and the trials table."""

    def test_descending_with_index_ties(self):
        """Test higher metrics rank first and ties keep trial order."""
        ranked = rank_trials([trial(0, 0.5), trial(1, 0.9), trial(2, 0.5)])
        assert [r.trial for r in ranked] == [1, 0, 2]
        assert [r.rank for r in ranked] == [1, 2, 3]

    def test_trials_table_columns(self, tmp_path):
        """Test the CSV holds rank, trial, axes and outcome columns in order."""
        path = tmp_path / TRIALS_FILE
        write_trials(path, rank_trials([trial(0, 0.4), trial(1, 0.6)]), ["lr"])
        with path.open() as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == [
            "rank",
            "trial",
            "lr",
            "seed",
            "best_metric",
            "best_epoch",
            "epochs_run",
            "checkpoint",
        ]
        assert [row["trial"] for row in rows] == ["1", "0"]
        assert rows[0]["lr"] == "0.01"


@pytest.mark.fast
class TestGridSearch:
    """Tests for grid_search() on the toy cohort."""

    def test_runs_every_point(self, data, experiment_config, run_dir):
        """Test one trial per point, each in its own directory with a derived seed."""
        results = grid_search(tiny_grid(), data, experiment_config, run_dir)
        assert sorted(r.trial for r in results) == [0, 1]
        assert [r.rank for r in results] == [1, 2]
        for r in results:
            assert r.seed == derive_seed32(11, "trial", r.trial)
            assert (run_dir / f"trial_{r.trial:03d}").is_dir()
            assert r.epochs_run <= 2
        assert (run_dir / TRIALS_FILE).exists()
        assert results[0].best_metric >= results[1].best_metric

    def test_trials_reproducible(self, data, experiment_config, tmp_path):
        """Test rerunning the grid gives the same metrics."""
        first = grid_search(tiny_grid(lr=[1e-2]), data, experiment_config, tmp_path / "a")
        second = grid_search(tiny_grid(lr=[1e-2]), data, experiment_config, tmp_path / "b")
        assert first[0].best_metric == second[0].best_metric

    def test_invalid_point_fails_before_training(self, data, experiment_config, run_dir):
        """Test a bad axis value is rejected before any trial runs."""
        with pytest.raises(ConfigError):
            grid_search(tiny_grid(visit_protos=[0]), data, experiment_config, run_dir)
        assert not list(run_dir.glob("trial_*"))

    def test_parallel_must_be_positive(self, data, experiment_config, run_dir):
        """Test parallel < 1 raises ConfigError."""
        with pytest.raises(ConfigError):
            grid_search(tiny_grid(), data, experiment_config, run_dir, parallel=0)
