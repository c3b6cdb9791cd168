"""Configuration: provider settings, experiment config groups and task tables.

Provider settings are loaded with pydantic-settings from ``PROTOEHR_*``
environment variables (and an optional env file). They supply the CLI's
default log level and, when a remote provider is requested, its endpoint
and retrieval concurrency. Experiment configuration is a flat
INI-style file with sections, validated into pydantic models.

Examples:
    >>> from protoehr.config import load_experiment_config, Task
    >>> cfg = load_experiment_config("experiment.ini", overrides=["train.lr=5e-4"])
    >>> cfg.task
    <Task.MORTALITY: 'mortality'>

    >>> TASK_OUTPUT_DIMS[Task.DRUG]
    202

Tests:
    - tests/unit/test_config.py::TestSettings
    - tests/unit/test_config.py::TestExperimentConfig
    - tests/unit/test_config.py::TestGridSpec
"""

from __future__ import annotations

import configparser
import hashlib
import itertools
from collections.abc import Sequence
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from protoehr.core.errors import ConfigError


class Task(str, Enum):
    """The five prediction tasks."""

    MORTALITY = "mortality"
    READMISSION = "readmission"
    LENGTH_OF_STAY = "los"
    DRUG = "drug"
    PHENOTYPE = "phenotype"


class Level(str, Enum):
    """Levels of the code-visit-patient hierarchy."""

    CODE = "code"
    VISIT = "visit"
    PATIENT = "patient"


class Ablation(str, Enum):
    """Model component ablations."""

    FULL = "full"
    NO_KG = "kg"
    NO_CODE_PROTO = "code-proto"
    NO_VISIT_PROTO = "visit-proto"
    NO_PATIENT_PROTO = "patient-proto"
    NO_HF = "hf"


class SignalMode(str, Enum):
    """How the synthetic generator plants outcome signal.

    - CLUSTER: outcomes depend on latent cluster + observed last-visit codes
    - KG_ALIAS: outcomes depend on rare alias diagnoses that are only linked
      to each other through a planted knowledge graph
    """

    CLUSTER = "cluster"
    KG_ALIAS = "kg_alias"


class SuggesterKind(str, Enum):
    """Offline relation suggesters."""

    COOCCURRENCE = "cooccurrence"
    LEXICON = "lexicon"


class MetricName(str, Enum):
    AUPRC = "auprc"
    AUROC = "auroc"
    F1 = "f1"


LEVELS: tuple[Level, ...] = (Level.CODE, Level.VISIT, Level.PATIENT)
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

LOS_CLASSES = 10
DRUG_SLOTS = 201
PHENOTYPE_GROUPS = 25

TASK_OUTPUT_DIMS: dict[Task, int] = {
    Task.MORTALITY: 1,
    Task.READMISSION: 1,
    Task.LENGTH_OF_STAY: LOS_CLASSES,
    Task.DRUG: DRUG_SLOTS + 1,  # last slot: no prescriptions
    Task.PHENOTYPE: PHENOTYPE_GROUPS + 1,  # last slot: no phenotype
}

# Minimum visits a patient needs to yield a sample
TASK_MIN_VISITS: dict[Task, int] = {
    Task.MORTALITY: 2,
    Task.READMISSION: 2,
    Task.LENGTH_OF_STAY: 1,
    Task.DRUG: 1,
    Task.PHENOTYPE: 1,
}

EARLY_STOP_METRIC: dict[Task, MetricName] = {
    Task.MORTALITY: MetricName.AUPRC,
    Task.READMISSION: MetricName.AUPRC,
    Task.LENGTH_OF_STAY: MetricName.AUROC,
    Task.DRUG: MetricName.AUPRC,
    Task.PHENOTYPE: MetricName.AUPRC,
}

TASK_METRICS: dict[Task, tuple[MetricName, ...]] = {
    Task.MORTALITY: (MetricName.AUPRC, MetricName.AUROC, MetricName.F1),
    Task.READMISSION: (MetricName.AUPRC, MetricName.AUROC, MetricName.F1),
    Task.LENGTH_OF_STAY: (MetricName.AUROC, MetricName.F1),
    Task.DRUG: (MetricName.AUPRC, MetricName.AUROC, MetricName.F1),
    Task.PHENOTYPE: (MetricName.AUPRC, MetricName.AUROC, MetricName.F1),
}

# Search ranges for grid search
DEFAULT_GRID: dict[str, list[Any]] = {
    "compgcn_layers": [1, 2, 3, 4],
    "transformer_depth": [1, 2, 4],
    "code_protos": [32, 64],
    "visit_protos": [4, 8, 16, 32],
    "patient_protos": [2, 4, 8, 16],
    "dropout": [0.1, 0.3, 0.5],
    "lr": [1e-4, 5e-4, 1e-3],
}


def is_binary(task: Task) -> bool:
    return task in (Task.MORTALITY, Task.READMISSION)


def is_multilabel(task: Task) -> bool:
    return task in (Task.DRUG, Task.PHENOTYPE)


class Settings(BaseSettings):
    """Remote provider settings and the CLI default log level.

    The offline mocks never read the provider fields.

    Attributes:
        PROVIDER_URL: Base URL of an OpenAI-compatible API
        PROVIDER_KEY: Bearer token for the provider
        PROVIDER_MODEL: Chat model used for relation suggestion, judging and splitting
        PROVIDER_EMBEDDING_MODEL: Embedding model for relation clustering
        PROVIDER_TIMEOUT: Request timeout in seconds
        PROVIDER_RETRIES: Attempts per request for retryable failures
        PROVIDER_MAX_CONCURRENCY: Retrieval workers for provider-backed builds
            (an explicit ``kg.workers`` wins)
        OFFLINE: Refuse any network access when true
        LOG_LEVEL: Default for the CLI --log-level option
    """

    model_config = SettingsConfigDict(
        env_prefix="PROTOEHR_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    PROVIDER_URL: str = Field(
        default="http://localhost:8000/v1",
        description="OpenAI-compatible API base URL",
    )
    PROVIDER_KEY: str | None = Field(default=None, description="Provider API key")
    PROVIDER_MODEL: str = Field(default="gpt-4o-mini", description="Chat model name")
    PROVIDER_EMBEDDING_MODEL: str = Field(
        default="text-embedding-3-small",
        description="Embedding model name",
    )
    PROVIDER_TIMEOUT: float = Field(default=60.0, gt=0, description="Request timeout (s)")
    PROVIDER_RETRIES: int = Field(default=3, ge=1, le=10, description="Attempts per request")
    PROVIDER_MAX_CONCURRENCY: int = Field(default=4, ge=1, le=32)
    OFFLINE: bool = Field(default=True, description="Disable all network access")
    LOG_LEVEL: str = Field(default="INFO", description="Logging level")

    @field_validator("PROVIDER_URL")
    @classmethod
    def validate_url(cls, v: str) -> str:
        """Validate provider URL scheme."""
        if not v.startswith(("http://", "https://")):
            raise ValueError("PROVIDER_URL must start with http:// or https://")
        return v.rstrip("/")

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        level = v.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"LOG_LEVEL must be one of {LOG_LEVELS}")
        return level


@lru_cache
def get_settings(env_file: str | None = None) -> Settings:
    """Get cached settings, optionally from a specific env file.

    Examples:
        >>> get_settings().OFFLINE
        True
    """
    if env_file is not None and not Path(env_file).exists():
        raise ConfigError(f"provider config not found: {env_file}")
    try:
        if env_file is None:
            return Settings()
        return Settings(_env_file=env_file)  # type: ignore[call-arg]
    except ValidationError as exc:
        raise ConfigError(f"invalid settings: {exc}") from exc


# =============================================================================
# Experiment configuration groups
# =============================================================================


class GeneratorConfig(BaseModel):
    """Synthetic cohort generator parameters.

    The default shape gives about 2.6 visits per patient.
    """

    n_patients: int = Field(default=1000, ge=2)
    n_diagnoses: int = Field(default=60, ge=1)
    n_procedures: int = Field(default=30, ge=1)
    n_medications: int = Field(default=40, ge=1)
    n_clusters: int = Field(default=4, ge=1, description="Latent phenotype clusters")
    mean_extra_visits: float = Field(
        default=1.63, ge=0.0, description="Poisson mean of visits beyond the first"
    )
    max_visits: int = Field(default=20, ge=1)
    diagnoses_per_visit: float = Field(default=4.0, gt=0.0)
    procedures_per_visit: float = Field(default=2.0, ge=0.0)
    medications_per_visit: float = Field(default=3.0, ge=0.0)
    signature_size: int = Field(default=6, ge=1, description="Signature codes per kind per cluster")
    signature_prob: float = Field(
        default=0.75, ge=0.0, le=1.0, description="Chance a drawn code comes from the signature"
    )
    effect_weight: float = Field(
        default=1.0, ge=0.0, description="Scale of cluster and code effects on outcomes"
    )
    cluster_effect_scale: float = Field(default=6.0, ge=0.0)
    code_effect_scale: float = Field(default=0.5, ge=0.0)
    mortality_base: float = Field(default=-2.0, description="Base mortality logit")
    readmission_base: float = Field(default=-1.0, description="Base readmission logit")
    signal_mode: SignalMode = SignalMode.CLUSTER
    aliases_per_cluster: int = Field(
        default=20, ge=1, description="Rare alias diagnoses per cluster (kg_alias mode)"
    )
    seed: int = Field(default=0, description="Cohort seed used by experiment configs")


class ModelConfig(BaseModel):
    """Model dimensions and architecture switches."""

    dim: int = Field(default=128, gt=0, description="Model dimension d")
    compgcn_layers: int = Field(default=2, ge=1)
    transformer_depth: int = Field(default=1, ge=1)
    heads: int = Field(default=2, ge=1)
    ffn_mult: int = Field(default=4, ge=1)
    code_protos: int = Field(default=32, ge=1)
    visit_protos: int = Field(default=8, ge=1)
    patient_protos: int = Field(default=4, ge=1)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    tau: float = Field(default=1.0, gt=0.0, description="Fusion temperature")
    max_visits: int = Field(default=32, ge=1, description="Positional table size")
    gcn_mean_norm: bool = Field(default=False, description="Average instead of sum neighbours")
    ablation: Ablation = Ablation.FULL

    @model_validator(mode="after")
    def check_heads(self) -> ModelConfig:
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        return self


class TrainConfig(BaseModel):
    """Optimization settings."""

    lr: float = Field(default=1e-3, ge=0.0)
    lr_decay_gamma: float = Field(default=0.98, gt=0.0, le=1.0)
    max_epochs: int = Field(default=200, ge=1)
    patience: int = Field(default=20, ge=1)
    batch_size: int = Field(default=64, ge=1)
    seed: int = 0
    pos_weight: float | None = Field(default=None, gt=0.0, description="BCE positive weight")


class GridSpec(BaseModel):
    """Hyperparameter grid; every axis must be nonempty."""

    compgcn_layers: list[int] = Field(default_factory=lambda: list(DEFAULT_GRID["compgcn_layers"]))
    transformer_depth: list[int] = Field(
        default_factory=lambda: list(DEFAULT_GRID["transformer_depth"])
    )
    code_protos: list[int] = Field(default_factory=lambda: list(DEFAULT_GRID["code_protos"]))
    visit_protos: list[int] = Field(default_factory=lambda: list(DEFAULT_GRID["visit_protos"]))
    patient_protos: list[int] = Field(
        default_factory=lambda: list(DEFAULT_GRID["patient_protos"])
    )
    dropout: list[float] = Field(default_factory=lambda: list(DEFAULT_GRID["dropout"]))
    lr: list[float] = Field(default_factory=lambda: list(DEFAULT_GRID["lr"]))

    @model_validator(mode="after")
    def check_axes(self) -> GridSpec:
        empty = [name for name, values in self.model_dump().items() if not values]
        if empty:
            raise ValueError(f"empty grid axes: {empty}")
        return self

    def points(self) -> list[dict[str, Any]]:
        """Cartesian product of the axes, in declaration order."""
        axes = self.model_dump()
        names = list(axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*axes.values())]


class SplitSpec(BaseModel):
    """Patient-level train/val/test ratios."""

    train: float = Field(default=0.6, gt=0.0, lt=1.0)
    val: float = Field(default=0.2, gt=0.0, lt=1.0)
    test: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def check_sum(self) -> SplitSpec:
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        return self


class KGBuildConfig(BaseModel):
    """Knowledge-graph construction pipeline settings."""

    suggester: SuggesterKind = SuggesterKind.COOCCURRENCE
    min_cooccurrence: int = Field(default=3, ge=1)
    label_fraction: float = Field(default=0.3, gt=0.0, le=1.0)
    label_budget: int | None = Field(default=None, ge=1, description="Overrides label_fraction")
    select_multiple: int = Field(default=5, ge=0)
    threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    distance_threshold: float = Field(default=1.0, ge=0.0, description="Ward merge distance")
    embed_dim: int = Field(default=64, ge=2)
    mlp_hidden: int = Field(default=64, ge=1)
    mlp_epochs: int = Field(default=200, ge=1)
    mlp_lr: float = Field(default=1e-3, gt=0.0)
    workers: int = Field(default=4, ge=1)
    seed: int = 0

    def for_provider(self, settings: Settings) -> KGBuildConfig:
        """Take the retrieval worker count from provider settings unless set explicitly."""
        if "workers" in self.model_fields_set:
            return self
        return self.model_copy(update={"workers": settings.PROVIDER_MAX_CONCURRENCY})


class ExperimentConfig(BaseModel):
    """One experiment: data source, KG source, task, model and training."""

    dataset_path: Path | None = None
    codes_path: Path | None = None
    generator: GeneratorConfig | None = None
    kg_path: Path | None = None
    kg: KGBuildConfig = Field(default_factory=KGBuildConfig)
    task: Task = Task.MORTALITY
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    grid: GridSpec | None = None
    split: SplitSpec = Field(default_factory=SplitSpec)
    seeds: list[int] = Field(default_factory=lambda: [0])
    sliding_window: bool = True
    bootstrap: int = Field(default=100, ge=1)
    output_dir: Path = Path("runs")

    @model_validator(mode="after")
    def check_data_source(self) -> ExperimentConfig:
        if (self.dataset_path is None) == (self.generator is None):
            raise ValueError("exactly one of [data] dataset or a [generator] section is required")
        if self.dataset_path is not None and self.codes_path is None:
            raise ValueError("[data] codes is required with [data] dataset")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        return self

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


# INI (section, key) -> ExperimentConfig path
_KEY_ALIASES: dict[tuple[str, str], tuple[str, ...]] = {
    ("data", "dataset"): ("dataset_path",),
    ("data", "codes"): ("codes_path",),
    ("data", "kg"): ("kg_path",),
    ("output", "dir"): ("output_dir",),
}
_TOP_LEVEL_SECTIONS = ("experiment",)
_NESTED_SECTIONS = ("generator", "kg", "model", "train", "grid", "split")
_LIST_KEYS = {("experiment", "seeds")} | {("grid", axis) for axis in DEFAULT_GRID}


def _coerce(section: str, key: str, raw: str) -> Any:
    value = raw.strip()
    if (section, key) in _LIST_KEYS:
        return [item.strip() for item in value.split(",") if item.strip()]
    if value.lower() in ("none", "null", ""):
        return None
    return value


def _apply(tree: dict[str, Any], section: str, key: str, raw: str) -> None:
    section, key = section.strip().lower(), key.strip().lower()
    value = _coerce(section, key, raw)
    if (section, key) in _KEY_ALIASES:
        tree[_KEY_ALIASES[section, key][0]] = value
    elif section in _TOP_LEVEL_SECTIONS:
        tree[key] = value
    elif section in _NESTED_SECTIONS:
        if tree.get(section) is None:
            tree[section] = {}
        tree[section][key] = value
    else:
        raise ConfigError(f"unknown config key {section}.{key}")


def apply_overrides(tree: dict[str, Any], overrides: Sequence[str]) -> None:
    """Apply ``section.key=value`` overrides to a raw config tree in place.

    Raises:
        ConfigError: On a malformed override or unknown key.
    """
    for override in overrides:
        dotted, sep, raw = override.partition("=")
        section, dot, key = dotted.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {override!r}")
        _apply(tree, section, key, raw)


def parse_experiment_config(
    text: str, overrides: Sequence[str] = (), base_dir: Path | None = None
) -> ExperimentConfig:
    """Parse INI text plus ``section.key=value`` overrides.

    Relative paths in ``[data]`` and ``[output]`` resolve against ``base_dir``.

    Raises:
        ConfigError: On syntax errors, unknown keys or invalid values.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    tree: dict[str, Any] = {}
    for section in parser.sections():
        if section.lower() in _NESTED_SECTIONS:
            tree.setdefault(section.lower(), {})
        for key, raw in parser.items(section):
            _apply(tree, section, key, raw)
    apply_overrides(tree, overrides)

    if base_dir is not None:
        for name in ("dataset_path", "codes_path", "kg_path", "output_dir"):
            if tree.get(name) and not Path(tree[name]).is_absolute():
                tree[name] = str(base_dir / tree[name])
    return validate_experiment_config(tree)


def validate_experiment_config(tree: dict[str, Any]) -> ExperimentConfig:
    """Validate a raw config tree.

    Raises:
        ConfigError: Naming the first invalid field.
    """
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"{where}: {first['msg']}") from exc


def load_experiment_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Load an experiment config file.

    Raises:
        ConfigError: If the file is missing or invalid.
    """
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    return parse_experiment_config(
        config_path.read_text(encoding="utf-8"), overrides, base_dir=config_path.parent
    )
