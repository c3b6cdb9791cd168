"""Unit tests for configuration module.

Tests for protoehr/config.py - Settings, experiment configs and task tables.

Run with:
    pytest tests/unit/test_config.py -v
    pytest tests/unit/test_config.py -v -m fast
"""

import pytest
from pydantic import ValidationError

from protoehr.config import (
    DEFAULT_GRID,
    EARLY_STOP_METRIC,
    TASK_OUTPUT_DIMS,
    Ablation,
    GridSpec,
    KGBuildConfig,
    MetricName,
    ModelConfig,
    Settings,
    SplitSpec,
    Task,
    apply_overrides,
    get_settings,
    load_experiment_config,
    parse_experiment_config,
)
from protoehr.core.errors import ConfigError

EXPERIMENT_INI = """
[experiment]
task = readmission
seeds = 0, 1, 2

[generator]
n_patients = 50
seed = 4

[model]
dim = 16
heads = 4

[train]
lr = 5e-4
max_epochs = 30

[grid]
lr = 1e-3, 5e-4
dropout = 0.1
"""


@pytest.mark.fast
class TestTaskTables:
    """Tests for the task constant tables."""

    def test_output_dims(self):
        """Test output widths include the none-flag for multi-label tasks."""
        assert TASK_OUTPUT_DIMS[Task.MORTALITY] == 1
        assert TASK_OUTPUT_DIMS[Task.LENGTH_OF_STAY] == 10
        assert TASK_OUTPUT_DIMS[Task.DRUG] == 202
        assert TASK_OUTPUT_DIMS[Task.PHENOTYPE] == 26

    def test_early_stop_metric(self):
        """Test LoS stops on AUROC and every other task on AUPRC."""
        assert EARLY_STOP_METRIC[Task.LENGTH_OF_STAY] == MetricName.AUROC
        assert EARLY_STOP_METRIC[Task.MORTALITY] == MetricName.AUPRC

    def test_ablation_values(self):
        """Test ablation names used on the command line."""
        assert {a.value for a in Ablation} == {
            "full", "kg", "code-proto", "visit-proto", "patient-proto", "hf"
        }


@pytest.mark.fast
class TestSettings:
    """Tests for Settings class."""

    def test_settings_default_values(self):
        """Test settings default to offline mode."""
        settings = Settings(_env_file=None)
        assert settings.OFFLINE is True
        assert settings.LOG_LEVEL == "INFO"
        assert settings.PROVIDER_RETRIES == 3

    def test_settings_url_validation(self):
        """Test provider URL must be http(s) and loses its trailing slash."""
        assert Settings(PROVIDER_URL="https://api.example.com/v1/").PROVIDER_URL == (
            "https://api.example.com/v1"
        )
        with pytest.raises(ValidationError, match="PROVIDER_URL"):
            Settings(PROVIDER_URL="ftp://example.com")

    def test_settings_timeout_positive(self):
        """Test non-positive timeouts are rejected."""
        with pytest.raises(ValidationError):
            Settings(PROVIDER_TIMEOUT=0)

    def test_settings_log_level_normalized(self):
        """Test log level is upper-cased and validated."""
        assert Settings(LOG_LEVEL="debug").LOG_LEVEL == "DEBUG"
        with pytest.raises(ValidationError, match="LOG_LEVEL"):
            Settings(LOG_LEVEL="chatty")

    def test_settings_from_env(self, monkeypatch):
        """Test PROTOEHR_ environment variables are read."""
        monkeypatch.setenv("PROTOEHR_PROVIDER_MODEL", "local-model")
        monkeypatch.setenv("PROTOEHR_OFFLINE", "false")
        settings = Settings(_env_file=None)
        assert settings.PROVIDER_MODEL == "local-model"
        assert settings.OFFLINE is False

    def test_get_settings_from_env_file(self, tmp_path):
        """Test an explicit env file is loaded."""
        env = tmp_path / "provider.env"
        env.write_text("PROTOEHR_PROVIDER_KEY=sk-test\nPROTOEHR_OFFLINE=false\n")
        settings = get_settings(str(env))
        assert settings.PROVIDER_KEY == "sk-test"
        assert settings.OFFLINE is False

    def test_get_settings_missing_env_file(self, tmp_path):
        """Test a missing env file raises ConfigError."""
        with pytest.raises(ConfigError, match="provider config not found"):
            get_settings(str(tmp_path / "absent.env"))

    def test_get_settings_invalid_env(self, monkeypatch):
        """Test a bad environment value raises ConfigError, not a pydantic error."""
        get_settings.cache_clear()
        monkeypatch.setenv("PROTOEHR_LOG_LEVEL", "chatty")
        try:
            with pytest.raises(ConfigError, match="LOG_LEVEL"):
                get_settings()
        finally:
            get_settings.cache_clear()

    def test_provider_concurrency_sets_default_workers(self):
        """Test provider builds take workers from settings when the config is silent."""
        settings = Settings(PROVIDER_MAX_CONCURRENCY=9, _env_file=None)
        assert KGBuildConfig().for_provider(settings).workers == 9

    def test_explicit_workers_win(self):
        """Test an explicit kg.workers is kept over the provider setting."""
        settings = Settings(PROVIDER_MAX_CONCURRENCY=9, _env_file=None)
        cfg = parse_experiment_config("[generator]\n[kg]\nworkers = 2\n").kg
        assert cfg.for_provider(settings).workers == 2


@pytest.mark.fast
class TestModelConfigs:
    """Tests for the validated config groups."""

    def test_model_defaults(self):
        """Test the default model width."""
        cfg = ModelConfig()
        assert cfg.dim == 128
        assert cfg.ablation == Ablation.FULL

    def test_heads_must_divide_dim(self):
        """Test dim must be divisible by the head count."""
        with pytest.raises(ValidationError, match="divisible"):
            ModelConfig(dim=10, heads=4)

    def test_dim_positive(self):
        """Test d > 0."""
        with pytest.raises(ValidationError):
            ModelConfig(dim=0)

    def test_split_must_sum_to_one(self):
        """Test split ratios must sum to 1."""
        with pytest.raises(ValidationError, match="sum to 1"):
            SplitSpec(train=0.5, val=0.2, test=0.2)


@pytest.mark.fast
class TestGridSpec:
    """Tests for GridSpec."""

    def test_default_axes(self):
        """Test every default search range is present."""
        grid = GridSpec()
        assert grid.lr == DEFAULT_GRID["lr"]
        assert grid.visit_protos == [4, 8, 16, 32]

    def test_points_cartesian_product(self):
        """Test points enumerate the product in declaration order."""
        grid = GridSpec(
            compgcn_layers=[1],
            transformer_depth=[1],
            code_protos=[32],
            visit_protos=[4],
            patient_protos=[2],
            dropout=[0.1, 0.3],
            lr=[1e-3, 1e-4],
        )
        points = grid.points()
        assert len(points) == 4
        assert [(p["dropout"], p["lr"]) for p in points] == [
            (0.1, 1e-3), (0.1, 1e-4), (0.3, 1e-3), (0.3, 1e-4)
        ]

    def test_empty_axis_rejected(self):
        """Test an empty axis is invalid."""
        with pytest.raises(ValidationError, match="empty grid axes"):
            GridSpec(lr=[])


@pytest.mark.fast
class TestExperimentConfig:
    """Tests for INI parsing and overrides."""

    def test_parse_sections(self):
        """Test every section lands in its config group."""
        cfg = parse_experiment_config(EXPERIMENT_INI)
        assert cfg.task == Task.READMISSION
        assert cfg.seeds == [0, 1, 2]
        assert cfg.generator.n_patients == 50
        assert cfg.generator.seed == 4
        assert cfg.model.dim == 16
        assert cfg.train.lr == 5e-4
        assert cfg.grid.lr == [1e-3, 5e-4]
        assert cfg.grid.dropout == [0.1]
        assert cfg.grid.compgcn_layers == DEFAULT_GRID["compgcn_layers"]

    def test_overrides_win(self):
        """Test section.key=value overrides replace file values."""
        cfg = parse_experiment_config(EXPERIMENT_INI, overrides=["train.lr=0.01", "model.dim=8"])
        assert cfg.train.lr == 0.01
        assert cfg.model.dim == 8

    def test_override_syntax(self):
        """Test malformed overrides raise ConfigError."""
        with pytest.raises(ConfigError, match="section.key=value"):
            parse_experiment_config(EXPERIMENT_INI, overrides=["lr=0.1"])

    def test_unknown_key(self):
        """Test unknown sections are rejected."""
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_experiment_config("[generator]\n[bogus]\nx = 1\n")

    def test_invalid_value_names_field(self):
        """Test validation errors name the offending field."""
        with pytest.raises(ConfigError, match="model.dim"):
            parse_experiment_config("[generator]\n[model]\ndim = -3\n")

    def test_exactly_one_data_source(self):
        """Test a config needs either a dataset or a generator, not both."""
        with pytest.raises(ConfigError, match="exactly one"):
            parse_experiment_config("[model]\ndim = 8\n")
        with pytest.raises(ConfigError, match="exactly one"):
            parse_experiment_config("[data]\ndataset = d.jsonl\ncodes = c.jsonl\n[generator]\n")

    def test_malformed_ini(self):
        """Test INI syntax errors raise ConfigError."""
        with pytest.raises(ConfigError, match="malformed"):
            parse_experiment_config("no section header\n")

    def test_load_resolves_relative_paths(self, tmp_path):
        """Test [data] paths resolve against the config file's directory."""
        path = tmp_path / "exp.ini"
        path.write_text("[data]\ndataset = data/d.jsonl\ncodes = data/c.jsonl\nkg = kg.tsv\n")
        cfg = load_experiment_config(path)
        assert cfg.dataset_path == tmp_path / "data" / "d.jsonl"
        assert cfg.kg_path == tmp_path / "kg.tsv"

    def test_load_missing_file(self, tmp_path):
        """Test a missing config file raises ConfigError."""
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(tmp_path / "absent.ini")

    def test_apply_overrides_fills_missing_section(self):
        """Test overrides create a section that was null."""
        tree = {"generator": None}
        apply_overrides(tree, ["generator.n_patients=10"])
        assert tree == {"generator": {"n_patients": "10"}}

    def test_fingerprint_tracks_content(self):
        """Test equal configs share a fingerprint and changed ones do not."""
        a = parse_experiment_config(EXPERIMENT_INI)
        b = parse_experiment_config(EXPERIMENT_INI)
        c = parse_experiment_config(EXPERIMENT_INI, overrides=["train.seed=9"])
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()
