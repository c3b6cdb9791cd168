"""ProtoEHR command line.

Every command writes its outputs under ``--out`` together with a
``run_manifest.json`` (command, parameters, config fingerprint, seeds,
package versions and SHA-256 of every output file). Failures exit nonzero
with one JSON line on stderr::

    {"error": "config_error", "message": "config file not found: exp.ini"}

Examples:
    $ protoehr gen-data --seed 7 --out runs/data
    $ protoehr build-kg --codes runs/data/codes.jsonl --data runs/data/dataset.jsonl \\
          --mock cooccurrence --out runs/kg
    $ protoehr train --config experiment.ini --task mortality --out runs/train
    $ protoehr evaluate --checkpoint runs/train/model --out runs/eval
    $ protoehr ablate --config experiment.ini --what kg --what edges:DD,DM --out runs/ablate
    $ protoehr interpret --traces runs/eval/traces.jsonl --config experiment.ini --out runs/interp

Tests:
    - tests/integration/test_cli.py
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import sys
from collections.abc import Sequence
from importlib import metadata
from pathlib import Path
from typing import Any, NoReturn

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from protoehr import __version__
from protoehr.config import (
    LOG_LEVELS,
    TASK_METRICS,
    Ablation,
    ExperimentConfig,
    GeneratorConfig,
    Level,
    SuggesterKind,
    Task,
    apply_overrides,
    get_settings,
    is_multilabel,
    load_experiment_config,
    parse_experiment_config,
    validate_experiment_config,
)
from protoehr.core.errors import ConfigError, ProtoEHRError
from protoehr.ehr.generator import generate_synthetic_cohort
from protoehr.ehr.io import load_codes, load_dataset, save_dataset
from protoehr.ehr.statistics import dataset_statistics
from protoehr.eval.metrics import task_metric
from protoehr.eval.runner import evaluate, read_traces, write_traces
from protoehr.experiment import (
    ExperimentData,
    build_model,
    build_offline_kg,
    load_cohort,
    offline_suggester,
    prepare_experiment,
)
from protoehr.interpret.analysis import (
    default_cluster_count,
    jaccard_diagnostic,
    level_importance,
    prototype_cluster_eval,
    prototype_heatmap,
    top_codes_per_prototype,
)
from protoehr.kg.graph import MedicalKG
from protoehr.kg.io import load_kg, save_kg
from protoehr.kg.pipeline import build_kg
from protoehr.kg.providers import ChatCompletionsProvider
from protoehr.model.checkpoint import checkpoint_stem, load_arrays, load_model
from protoehr.model.protoehr import Batch
from protoehr.schemas.ehr import EHRDataset, MedicalCode, TaskSample
from protoehr.schemas.kg import EdgeKind
from protoehr.schemas.reports import (
    AblationArm,
    AblationReport,
    LevelClusterReport,
    LevelImportanceSummary,
    PrototypeHeatmap,
)
from protoehr.training.grid import grid_search
from protoehr.training.trainer import train as train_model

logger = logging.getLogger(__name__)

console = Console()

MANIFEST_FILE = "run_manifest.json"
EXPERIMENT_FILE = "experiment.json"
KG_FILE = "kg.tsv"
DATASET_FILE = "dataset.jsonl"
CODES_FILE = "codes.jsonl"
TRACES_FILE = "traces.jsonl"
VERSIONED_PACKAGES = ("numpy", "scipy", "scikit-learn", "pydantic")
EDGE_ARM_PREFIX = "edges:"


# =============================================================================
# Error reporting
# =============================================================================


def _fail(code: str, message: str, status: int) -> NoReturn:
    click.echo(json.dumps({"error": code, "message": message}), err=True)
    sys.exit(status)


class ProtoEHRGroup(click.Group):
    """Command group that reports every failure as one JSON line on stderr."""

    def main(  # type: ignore[override]
        self,
        args: Sequence[str] | None = None,
        prog_name: str | None = None,
        complete_var: str | None = None,
        standalone_mode: bool = True,
        **extra: Any,
    ) -> Any:
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.UsageError as exc:
            _fail("usage_error", exc.format_message(), 2)
        except click.ClickException as exc:
            _fail("usage_error", exc.format_message(), exc.exit_code)
        except click.Abort:
            _fail("aborted", "aborted by user", 1)
        except ProtoEHRError as exc:
            click.echo(json.dumps(exc.to_dict()), err=True)
            sys.exit(1)
        except OSError as exc:
            _fail("io_error", str(exc), 1)
        if not standalone_mode:
            return rv
        sys.exit(rv if isinstance(rv, int) else 0)


# =============================================================================
# Helpers
# =============================================================================


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _load_config(path: Path | None, overrides: Sequence[str]) -> ExperimentConfig:
    """Experiment config from INI, a saved ``experiment.json``, or the generator defaults."""
    if path is None:
        return parse_experiment_config("[generator]\n", overrides)
    if path.suffix == ".json":
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = ExperimentConfig.model_validate_json(path.read_text(encoding="utf-8"))
        return _with_overrides(cfg, overrides)
    return load_experiment_config(path.resolve(), overrides)


def _with_overrides(cfg: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    tree = cfg.model_dump(mode="json")
    apply_overrides(tree, overrides)
    return validate_experiment_config(tree)


def _with_sources(
    cfg: ExperimentConfig,
    data: Path | None = None,
    codes: Path | None = None,
    kg: Path | None = None,
    task: Task | None = None,
) -> ExperimentConfig:
    """Replace data, KG and task sources from command-line options."""
    tree = cfg.model_dump()
    if data is not None:
        if codes is None:
            raise ConfigError("--codes is required with --data")
        tree.update(dataset_path=data.resolve(), codes_path=codes.resolve(), generator=None)
    if kg is not None:
        tree["kg_path"] = kg.resolve()
    if task is not None:
        tree["task"] = task
    return validate_experiment_config(tree)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _versions() -> dict[str, str]:
    versions = {"protoehr": __version__}
    for package in VERSIONED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple | list):
        return [_jsonable(v) for v in value]
    if hasattr(value, "value"):
        return value.value
    return value


def write_manifest(
    out: Path,
    command: str,
    params: dict[str, Any],
    seeds: dict[str, Any],
    cfg: ExperimentConfig | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Record how the files under ``out`` were produced; no timestamps."""
    outputs = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST_FILE
    }
    manifest = {
        "command": command,
        "params": {k: _jsonable(v) for k, v in sorted(params.items())},
        "config_fingerprint": cfg.fingerprint() if cfg is not None else None,
        "seeds": seeds,
        "versions": _versions(),
        "outputs": outputs,
        **(extra or {}),
    }
    path = out / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _print_table(title: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    table = Table(title=title)
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row))
    console.print(table)


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
    help="Experiment config (INI or a saved experiment.json)",
)
set_option = click.option(
    "--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
    help="Override a config value (repeatable)",
)
out_option = click.option(
    "--out", type=click.Path(file_okay=False, path_type=Path), required=True,
    help="Output directory",
)
task_option = click.option(
    "--task", type=click.Choice([t.value for t in Task]), default=None,
    help="Prediction task (defaults to the config's)",
)


def _task(value: str | None) -> Task | None:
    return Task(value) if value is not None else None


# =============================================================================
# Commands
# =============================================================================


@click.group(cls=ProtoEHRGroup)
@click.version_option(__version__, prog_name="protoehr")
@click.option(
    "--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None,
    help="Logging level [default: PROTOEHR_LOG_LEVEL or INFO]",
)
def cli(log_level: str | None) -> None:
    """Hierarchical prototype learning for EHR prediction."""
    _setup_logging((log_level or get_settings().LOG_LEVEL).upper())


@cli.command("gen-data")
@config_option
@click.option("--seed", type=int, default=None, help="Cohort seed (overrides generator.seed)")
@out_option
@set_option
def gen_data(
    config_path: Path | None, seed: int | None, out: Path, overrides: tuple[str, ...]
) -> None:
    """Generate a synthetic cohort with planted signal."""
    cfg = _load_config(config_path, overrides)
    if cfg.generator is None:
        raise ConfigError("gen-data needs a [generator] section")
    generator: GeneratorConfig = cfg.generator
    seed = generator.seed if seed is None else seed
    ds, truth = generate_synthetic_cohort(generator, seed)

    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / DATASET_FILE, out / CODES_FILE)
    (out / "truth.json").write_text(truth.model_dump_json(indent=2) + "\n", encoding="utf-8")
    stats = dataset_statistics(ds)
    _write_json(out / "stats.json", stats.model_dump())
    if truth.planted_facts:
        save_kg(MedicalKG.from_names(ds.codes, truth.planted_facts), out / KG_FILE)

    _print_table("Cohort", ["statistic", "value"], list(stats.model_dump().items()))
    write_manifest(
        out,
        "gen-data",
        {"config": config_path, "overrides": overrides},
        {"generator": seed},
        cfg,
        extra={"statistics": stats.model_dump()},
    )


def _code_kinds(codes: Sequence[MedicalCode]) -> dict[str, str]:
    return {c.name: c.kind.value for c in codes}


@cli.command("build-kg")
@click.option("--codes", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@click.option(
    "--data", type=click.Path(dir_okay=False, exists=True, path_type=Path), default=None,
    help="Cohort used by the co-occurrence suggester",
)
@click.option(
    "--mock", type=click.Choice([k.value for k in SuggesterKind]), default=None,
    help="Build offline with the deterministic mocks",
)
@click.option(
    "--provider-config", type=click.Path(dir_okay=False, path_type=Path), default=None,
    help="Env file for an OpenAI-compatible provider",
)
@click.option(
    "--lexicon", type=click.Path(dir_okay=False, exists=True, path_type=Path), default=None,
    help="KG file whose facts seed the lexicon suggester",
)
@out_option
@config_option
@set_option
def build_kg_cmd(
    codes: Path,
    data: Path | None,
    mock: str | None,
    provider_config: Path | None,
    lexicon: Path | None,
    out: Path,
    config_path: Path | None,
    overrides: tuple[str, ...],
) -> None:
    """Construct a medical KG over a code table."""
    if (mock is None) == (provider_config is None):
        raise click.UsageError("give exactly one of --mock or --provider-config")
    kg_cfg = _load_config(config_path, overrides).kg
    code_table = load_codes(codes)

    if mock is not None:
        kg_cfg = kg_cfg.model_copy(update={"suggester": SuggesterKind(mock)})
        if kg_cfg.suggester == SuggesterKind.COOCCURRENCE:
            if data is None:
                raise click.UsageError("--mock cooccurrence needs --data")
            ds = load_dataset(data, codes)
        else:
            ds = EHRDataset(codes=code_table, patients=[])
        facts = load_kg(lexicon, code_table).named_facts() if lexicon is not None else None
        kg, report = build_offline_kg(ds, kg_cfg, offline_suggester(ds, kg_cfg, facts))
    else:
        assert provider_config is not None
        settings = get_settings(str(provider_config))
        kg_cfg = kg_cfg.for_provider(settings)
        with ChatCompletionsProvider.from_settings(settings, _code_kinds(code_table)) as provider:
            kg, report = build_kg(
                code_table,
                kg_cfg,
                suggester=provider,
                judge=provider,
                embedder=provider,
                splitter=provider,
            )

    out.mkdir(parents=True, exist_ok=True)
    save_kg(kg, out / KG_FILE)
    _write_json(out / "kg_report.json", report.model_dump())
    _print_table("KG construction", ["stage", "count"], list(report.model_dump().items()))
    write_manifest(
        out,
        "build-kg",
        {"codes": codes, "data": data, "mock": mock, "provider": provider_config is not None},
        {"kg": kg_cfg.seed},
        extra={"kg_fingerprint": kg.fingerprint(), "kg_config": kg_cfg.model_dump(mode="json")},
    )


def _persist_experiment(out: Path, cfg: ExperimentConfig, data: ExperimentData) -> ExperimentConfig:
    """Save the KG and a config pinned to it, so the run can be re-evaluated."""
    out.mkdir(parents=True, exist_ok=True)
    save_kg(data.kg, out / KG_FILE)
    if data.kg_report is not None:
        _write_json(out / "kg_report.json", data.kg_report.model_dump())
    pinned = _with_sources(cfg, kg=out / KG_FILE, task=data.task)
    (out / EXPERIMENT_FILE).write_text(pinned.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return pinned


@cli.command("train")
@config_option
@task_option
@click.option("--kg", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--data", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--codes", type=click.Path(dir_okay=False, path_type=Path), default=None)
@out_option
@click.option("--seed", type=int, default=None, help="Training seed (overrides train.seed)")
@click.option("--resume", is_flag=True, help="Continue from the training state under --out")
@click.option("--max-epochs", type=int, default=None, help="Stop after this many epochs in total")
@set_option
def train_cmd(
    config_path: Path | None,
    task: str | None,
    kg: Path | None,
    data: Path | None,
    codes: Path | None,
    out: Path,
    seed: int | None,
    resume: bool,
    max_epochs: int | None,
    overrides: tuple[str, ...],
) -> None:
    """Train one model with early stopping."""
    cfg = _with_sources(_load_config(config_path, overrides), data, codes, kg, _task(task))
    if seed is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"seed": seed})})
    experiment = prepare_experiment(cfg)
    pinned = _persist_experiment(out, cfg, experiment)

    model = build_model(experiment, cfg.model, cfg.train.seed)
    result = train_model(
        model, experiment.train, experiment.val, cfg.train, out, resume=resume, max_epochs=max_epochs
    )
    _print_table(
        f"Training ({experiment.task.value})",
        ["best epoch", "best val metric", "epochs run", "early stop"],
        [[result.best_epoch, result.best_metric, result.epochs_run, result.stopped_early]],
    )
    write_manifest(
        out,
        "train",
        {"config": config_path, "overrides": overrides, "resume": resume, "max_epochs": max_epochs},
        {"train": cfg.train.seed, "split": cfg.split.seed, "kg": cfg.kg.seed},
        pinned,
        extra={"best_epoch": result.best_epoch, "best_metric": result.best_metric},
    )


@cli.command("gridsearch")
@config_option
@click.option("--parallel", type=int, default=1, show_default=True, help="Worker processes")
@task_option
@out_option
@set_option
def gridsearch_cmd(
    config_path: Path | None,
    parallel: int,
    task: str | None,
    out: Path,
    overrides: tuple[str, ...],
) -> None:
    """Train every point of the config's grid and rank the trials."""
    cfg = _with_sources(_load_config(config_path, overrides), task=_task(task))
    if cfg.grid is None:
        raise ConfigError("gridsearch needs a [grid] section")
    experiment = prepare_experiment(cfg)
    pinned = _persist_experiment(out, cfg, experiment)
    results = grid_search(cfg.grid, experiment, pinned, out, parallel=parallel)

    axes = list(results[0].point)
    _print_table(
        f"Grid search ({experiment.task.value})",
        ["rank", "trial", *axes, "best metric", "best epoch"],
        [[r.rank, r.trial, *(r.point[a] for a in axes), r.best_metric, r.best_epoch] for r in results],
    )
    write_manifest(
        out,
        "gridsearch",
        {"config": config_path, "overrides": overrides, "parallel": parallel},
        {"train": cfg.train.seed, "trials": [r.seed for r in sorted(results, key=lambda r: r.trial)]},
        pinned,
    )


def _fold(experiment: ExperimentData, fold: str) -> list[TaskSample]:
    return {"train": experiment.train, "val": experiment.val, "test": experiment.test}[fold]


@cli.command("evaluate")
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@config_option
@click.option("--data", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--codes", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--kg", type=click.Path(dir_okay=False, path_type=Path), default=None)
@task_option
@click.option(
    "--fold", type=click.Choice(["train", "val", "test"]), default="test", show_default=True
)
@click.option("--bootstrap", "n_bootstrap", type=int, default=None, help="Bootstrap resamples")
@click.option("--seed", type=int, default=0, show_default=True, help="Bootstrap seed")
@out_option
def evaluate_cmd(
    checkpoint: Path,
    config_path: Path | None,
    data: Path | None,
    codes: Path | None,
    kg: Path | None,
    task: str | None,
    fold: str,
    n_bootstrap: int | None,
    seed: int,
    out: Path,
) -> None:
    """Bootstrap test metrics and write fusion traces."""
    stem = checkpoint_stem(checkpoint)
    run_dir = stem.parent
    config_path = config_path or run_dir / EXPERIMENT_FILE
    kg = kg or (run_dir / KG_FILE if (run_dir / KG_FILE).exists() else None)
    cfg = _with_sources(_load_config(config_path, ()), data, codes, kg)
    _, meta = load_arrays(stem)
    trained_task = Task(meta["task"])
    if task is not None and Task(task) != trained_task:
        raise ConfigError(f"checkpoint was trained for {trained_task.value}, not {task}")
    cfg = _with_sources(cfg, task=trained_task)

    experiment = prepare_experiment(cfg)
    model = load_model(stem, experiment.kg)
    n = n_bootstrap if n_bootstrap is not None else cfg.bootstrap
    report, traces = evaluate(model, _fold(experiment, fold), n_bootstrap=n, seed=seed)

    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", report.model_dump(mode="json"))
    write_traces(out / TRACES_FILE, traces)
    _print_table(
        f"Evaluation ({trained_task.value}, {fold})",
        ["metric", "mean", "std", "point"],
        [[m.metric.value, m.mean, m.std, m.point] for m in report.metrics],
    )
    write_manifest(
        out,
        "evaluate",
        {"checkpoint": stem, "fold": fold, "bootstrap": n},
        {"bootstrap": seed, "split": cfg.split.seed},
        cfg,
    )


# -----------------------------------------------------------------------------
# Ablation
# -----------------------------------------------------------------------------


def parse_arm(arm: str) -> tuple[Ablation, list[EdgeKind]]:
    """``kg``/``code-proto``/... or ``edges:DD,DM`` into (component, edge kinds).

    Raises:
        ConfigError: On an unknown component or edge kind.
    """
    if arm.startswith(EDGE_ARM_PREFIX):
        names = [n.strip().upper() for n in arm[len(EDGE_ARM_PREFIX) :].split(",") if n.strip()]
        try:
            kinds = [EdgeKind(n) for n in names]
        except ValueError as exc:
            raise ConfigError(f"unknown edge kind in {arm!r}") from exc
        if not kinds:
            raise ConfigError(f"{arm!r} names no edge kinds")
        return Ablation.FULL, kinds
    try:
        component = Ablation(arm)
    except ValueError as exc:
        raise ConfigError(f"unknown ablation {arm!r}") from exc
    if component == Ablation.FULL:
        raise ConfigError("the full model is always trained; do not list it")
    return component, []


def _test_point_metrics(
    experiment: ExperimentData, cfg: ExperimentConfig, component: Ablation, seed: int, out: Path
) -> dict[str, float]:
    model_cfg = cfg.model.model_copy(update={"ablation": component})
    train_cfg = cfg.train.model_copy(update={"seed": seed})
    model = build_model(experiment, model_cfg, seed)
    result = train_model(model, experiment.train, experiment.val, train_cfg, out)
    batch = Batch.from_samples(experiment.test, experiment.task)
    probs, _ = result.model.predict_proba(batch)
    return {
        metric.value: task_metric(metric, probs, batch.labels, experiment.task)
        for metric in TASK_METRICS[experiment.task]
    }


def summarize_arm(arm: str, seeds: Sequence[int], runs: Sequence[dict[str, float]]) -> AblationArm:
    metrics = {name: [run[name] for run in runs] for name in runs[0]}
    return AblationArm(
        arm=arm,
        seeds=list(seeds),
        metrics=metrics,
        mean={name: float(np.mean(v)) for name, v in metrics.items()},
        std={name: float(np.std(v)) for name, v in metrics.items()},
    )


def with_deltas(full: AblationArm, arm: AblationArm) -> AblationArm:
    """Relative change of each mean metric against the full model."""
    deltas = {
        name: (arm.mean[name] - base) / base if base != 0 else 0.0
        for name, base in full.mean.items()
    }
    return arm.model_copy(update={"relative_delta": deltas})


@cli.command("ablate")
@config_option
@click.option(
    "--what", "arms", multiple=True, required=True,
    help="kg, code-proto, visit-proto, patient-proto, hf or edges:DD,DP,... (repeatable)",
)
@task_option
@out_option
@click.option("--max-epochs", type=int, default=None, help="Cap epochs per run")
@set_option
def ablate_cmd(
    config_path: Path | None,
    arms: tuple[str, ...],
    task: str | None,
    out: Path,
    max_epochs: int | None,
    overrides: tuple[str, ...],
) -> None:
    """Train the full model and each ablation over the config's seeds."""
    parsed = {arm: parse_arm(arm) for arm in arms}
    cfg = _with_sources(_load_config(config_path, overrides), task=_task(task))
    if max_epochs is not None:
        cfg = cfg.model_copy(
            update={"train": cfg.train.model_copy(update={"max_epochs": max_epochs})}
        )
    experiment = prepare_experiment(cfg)
    pinned = _persist_experiment(out, cfg, experiment)

    summaries: list[AblationArm] = []
    for arm, (component, kinds) in [("full", (Ablation.FULL, [])), *parsed.items()]:
        arm_data = experiment
        if kinds:
            arm_data = dataclasses.replace(experiment, kg=experiment.kg.ablate_edges(kinds))
        runs = []
        for seed in cfg.seeds:
            logger.info(f"Ablation arm {arm}, seed {seed}")
            run_dir = out / arm.replace(":", "_").replace(",", "-") / f"seed_{seed}"
            runs.append(_test_point_metrics(arm_data, cfg, component, seed, run_dir))
        summaries.append(summarize_arm(arm, cfg.seeds, runs))

    full = summaries[0]
    report = AblationReport(
        task=experiment.task, arms=[full, *(with_deltas(full, a) for a in summaries[1:])]
    )
    _write_json(out / "ablation.json", report.model_dump(mode="json"))
    names = list(full.mean)
    _print_table(
        f"Ablation ({experiment.task.value})",
        ["arm", *names, *(f"Δ{n}" for n in names)],
        [
            [a.arm, *(a.mean[n] for n in names), *(a.relative_delta.get(n, 0.0) for n in names)]
            for a in report.arms
        ],
    )
    write_manifest(
        out,
        "ablate",
        {"config": config_path, "overrides": overrides, "arms": arms, "max_epochs": max_epochs},
        {"seeds": cfg.seeds, "split": cfg.split.seed, "kg": cfg.kg.seed},
        pinned,
    )


# -----------------------------------------------------------------------------
# Interpretability
# -----------------------------------------------------------------------------


def _write_heatmap_csv(path: Path, heatmap: PrototypeHeatmap) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["label", *(f"prototype_{j}" for j in heatmap.prototypes)])
        for label, row in zip(heatmap.labels, heatmap.matrix, strict=True):
            writer.writerow([label, *(repr(v) for v in row)])
        writer.writerow(["trend", *("" if t is None else repr(t) for t in heatmap.trend)])


def _write_importance_csv(path: Path, importance: LevelImportanceSummary) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["level", "mean_beta", "n_samples"])
        for level, beta in (
            (Level.CODE, importance.beta_code),
            (Level.VISIT, importance.beta_visit),
            (Level.PATIENT, importance.beta_patient),
        ):
            writer.writerow([level.value, repr(beta), importance.n_samples])


def _write_clusters_csv(path: Path, clusters: Sequence[LevelClusterReport]) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["level", "k", "silhouette", "n_points", "degenerate"])
        for c in clusters:
            writer.writerow([c.level.value, c.k, repr(c.silhouette), c.n_points, c.degenerate])


@cli.command("interpret")
@click.option("--traces", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@config_option
@click.option("--data", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--codes", type=click.Path(dir_okay=False, path_type=Path), default=None)
@task_option
@click.option("--top-k", type=int, default=5, show_default=True, help="Prototypes per heatmap")
@click.option("--top-patients", type=int, default=300, show_default=True)
@click.option("--top-codes", type=int, default=5, show_default=True)
@click.option("--k", "n_clusters", type=int, default=None, help="K-means clusters per level")
@click.option("--seed", type=int, default=0, show_default=True, help="K-means seed")
@out_option
def interpret_cmd(
    traces: Path,
    config_path: Path | None,
    data: Path | None,
    codes: Path | None,
    task: str | None,
    top_k: int,
    top_patients: int,
    top_codes: int,
    n_clusters: int | None,
    seed: int,
    out: Path,
) -> None:
    """Fusion weights, prototype heatmaps, top codes, clusters and Jaccard overlap."""
    if config_path is None and data is None:
        raise click.UsageError("give --config or --data/--codes")
    cfg = None
    if config_path is not None:
        cfg = _with_sources(_load_config(config_path, ()), data, codes, task=_task(task))
        ds, _ = load_cohort(cfg)
        resolved_task = cfg.task
    else:
        if codes is None or task is None:
            raise click.UsageError("--data needs --codes and --task")
        assert data is not None
        ds = load_dataset(data, codes)
        resolved_task = Task(task)
    records = read_traces(traces)
    if not records:
        raise ConfigError(f"{traces} holds no traces")
    levels = [Level(name) for name in records[0].proto_attn]
    out.mkdir(parents=True, exist_ok=True)

    try:
        importance = level_importance(records, resolved_task)
    except ProtoEHRError as exc:
        logger.warning(f"Skipping level importance: {exc.message}")
    else:
        _write_json(out / "level_importance.json", importance.model_dump(mode="json"))
        _write_importance_csv(out / "level_importance.csv", importance)
        _print_table(
            "Level importance",
            ["code", "visit", "patient"],
            [[importance.beta_code, importance.beta_visit, importance.beta_patient]],
        )

    if is_multilabel(resolved_task):
        logger.warning(f"Skipping heatmaps: {resolved_task.value} labels are multi-label")
    else:
        heatmaps = [prototype_heatmap(records, level, top_k=top_k) for level in levels]
        for heatmap in heatmaps:
            _write_heatmap_csv(out / f"heatmap_{heatmap.level.value}.csv", heatmap)
        _write_json(out / "heatmaps.json", [h.model_dump(mode="json") for h in heatmaps])

    if Level.PATIENT in levels:
        tables = top_codes_per_prototype(
            records, ds, resolved_task, top_patients=top_patients, top_codes=top_codes
        )
        _write_json(out / "top_codes.json", [t.model_dump() for t in tables])
    else:
        logger.warning("Skipping top codes: no patient-level attention in the traces")

    k = n_clusters if n_clusters is not None else default_cluster_count(records, resolved_task)
    clusters = prototype_cluster_eval(records, k, seed=seed)
    _write_json(out / "clusters.json", [c.model_dump(mode="json") for c in clusters])
    _write_clusters_csv(out / "clusters.csv", clusters)
    _print_table(
        "Prototype clusters",
        ["level", "k", "silhouette", "points"],
        [[c.level.value, c.k, c.silhouette, c.n_points] for c in clusters],
    )

    if is_multilabel(resolved_task):
        overlap = jaccard_diagnostic(ds, resolved_task)
        _write_json(out / "jaccard.json", {"task": resolved_task.value, "jaccard": overlap})

    write_manifest(
        out,
        "interpret",
        {"traces": traces, "task": resolved_task, "top_k": top_k, "k": k},
        {"kmeans": seed},
        cfg,
        extra={"traces_sha256": _sha256(traces)},
    )


if __name__ == "__main__":
    cli()
