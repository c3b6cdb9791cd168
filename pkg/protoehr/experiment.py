"""Assemble the inputs of an experiment from its config.

Resolves the cohort (file or generator) and the KG (file or the offline
construction pipeline), derives task samples, applies the sliding
window and splits by patient. Every training arm of an experiment reuses the
same :class:`ExperimentData`, so arms differ only in model and seed.

Examples:
    >>> cfg = load_experiment_config("experiment.ini")
    >>> data = prepare_experiment(cfg)
    >>> model = build_model(data, cfg.model, seed=0)

Tests:
    - tests/unit/test_experiment.py
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from protoehr.config import ExperimentConfig, KGBuildConfig, ModelConfig, SuggesterKind, Task
from protoehr.core.errors import ConfigError
from protoehr.ehr.generator import PlantedTruth, generate_synthetic_cohort
from protoehr.ehr.io import load_dataset
from protoehr.ehr.split import split
from protoehr.ehr.tasks import derive_task_samples, sliding_window_augment
from protoehr.kg.graph import MedicalKG
from protoehr.kg.io import load_kg
from protoehr.kg.pipeline import build_kg
from protoehr.kg.providers import (
    CooccurrenceSuggester,
    HashingEmbedder,
    KeywordJudge,
    LexiconSuggester,
    NegationSplitter,
    RelationSuggester,
)
from protoehr.model.protoehr import ProtoEHRModel
from protoehr.schemas.ehr import EHRDataset, TaskSample
from protoehr.schemas.kg import KGPipelineReport

logger = logging.getLogger(__name__)


@dataclass
class ExperimentData:
    """Cohort, graph and folds shared by all arms of an experiment."""

    dataset: EHRDataset
    truth: PlantedTruth | None
    kg: MedicalKG
    kg_report: KGPipelineReport | None
    task: Task
    train: list[TaskSample]
    val: list[TaskSample]
    test: list[TaskSample]


def load_cohort(cfg: ExperimentConfig) -> tuple[EHRDataset, PlantedTruth | None]:
    if cfg.generator is not None:
        return generate_synthetic_cohort(cfg.generator, cfg.generator.seed)
    assert cfg.dataset_path is not None and cfg.codes_path is not None
    return load_dataset(cfg.dataset_path, cfg.codes_path), None


def offline_suggester(
    ds: EHRDataset,
    cfg: KGBuildConfig,
    lexicon: list[tuple[str, str, str]] | None = None,
) -> RelationSuggester:
    """The mock suggester the config asks for.

    Raises:
        ConfigError: If the lexicon suggester is chosen without lexicon facts.
    """
    if cfg.suggester == SuggesterKind.LEXICON:
        if not lexicon:
            raise ConfigError("the lexicon suggester needs lexicon facts")
        return LexiconSuggester(lexicon)
    return CooccurrenceSuggester(ds, min_count=cfg.min_cooccurrence)


def build_offline_kg(
    ds: EHRDataset,
    cfg: KGBuildConfig,
    suggester: RelationSuggester | None = None,
) -> tuple[MedicalKG, KGPipelineReport]:
    """Run the construction pipeline with the deterministic mocks."""
    return build_kg(
        ds.codes,
        cfg,
        suggester=suggester or offline_suggester(ds, cfg),
        judge=KeywordJudge(),
        embedder=HashingEmbedder(dim=cfg.embed_dim, seed=cfg.seed),
        splitter=NegationSplitter(),
    )


def resolve_kg(
    cfg: ExperimentConfig, ds: EHRDataset, truth: PlantedTruth | None
) -> tuple[MedicalKG, KGPipelineReport | None]:
    """The configured KG file, else the offline pipeline.

    The lexicon suggester draws its facts from the generator's planted graph.
    """
    if cfg.kg_path is not None:
        return load_kg(cfg.kg_path, ds.codes), None
    lexicon = truth.planted_facts if truth is not None else None
    return build_offline_kg(ds, cfg.kg, offline_suggester(ds, cfg.kg, lexicon))


def task_samples(ds: EHRDataset, task: Task, sliding_window: bool) -> list[TaskSample]:
    samples = derive_task_samples(ds, task)
    return sliding_window_augment(samples, task, ds) if sliding_window else samples


def prepare_experiment(cfg: ExperimentConfig, task: Task | None = None) -> ExperimentData:
    """Load or generate everything an experiment trains and evaluates on."""
    task = task or cfg.task
    ds, truth = load_cohort(cfg)
    kg, report = resolve_kg(cfg, ds, truth)
    train, val, test = split(task_samples(ds, task, cfg.sliding_window), cfg.split)
    return ExperimentData(
        dataset=ds,
        truth=truth,
        kg=kg,
        kg_report=report,
        task=task,
        train=train,
        val=val,
        test=test,
    )


def build_model(data: ExperimentData, model_cfg: ModelConfig, seed: int) -> ProtoEHRModel:
    """Fresh model for the experiment's KG and task.

    Raises:
        ConfigError: If a sample has more visits than the positional table.
    """
    longest = max(len(s.visits) for s in (*data.train, *data.val, *data.test))
    if longest > model_cfg.max_visits:
        raise ConfigError(
            f"samples have up to {longest} visits but model.max_visits is {model_cfg.max_visits}"
        )
    return ProtoEHRModel(data.kg, model_cfg, data.task, seed=seed)
