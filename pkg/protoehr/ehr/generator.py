"""Synthetic EHR cohort generator with planted outcome signal.

Patients are drawn from latent phenotype clusters. Each cluster has signature
diagnoses, procedures and medications, and signature diagnoses come with a
planted treating medication. Outcomes follow logistic functions of the
patient's cluster and the codes of the visit that precedes the outcome:

    mortality logit   = mortality_base + w * (cluster_mort[c] + mean(code_mort[codes]))
    readmission logit = readmission_base + w * (cluster_readm[c] + mean(code_readm[codes]))
    log LoS           ~ N(log 3 + w * (cluster_los[c] + mean(code_los[codes])), 0.6)

where w = effect_weight. All generating parameters are returned as a
PlantedTruth so that learnability can be checked against the truth.

In ``kg_alias`` mode the signature codes carry no signal; instead each visit
contains one rare alias diagnosis of the patient's cluster. Aliases of a
cluster are tied together only by planted knowledge-graph facts linking each
alias to an unobserved hub diagnosis.

Examples:
    >>> from protoehr.config import GeneratorConfig
    >>> ds, truth = generate_synthetic_cohort(GeneratorConfig(n_patients=100), seed=7)
    >>> len(ds.patients)
    100

Tests:
    - tests/unit/test_generator.py
"""

from __future__ import annotations

import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from protoehr.config import GeneratorConfig, SignalMode
from protoehr.core.errors import ConfigError
from protoehr.core.seeding import make_rng
from protoehr.schemas.ehr import CodeKind, EHRDataset, MedicalCode, PatientRecord, Visit

logger = logging.getLogger(__name__)

ALIAS_RELATION = "is a subtype of"
BASE_LOG_LOS = math.log(3.0)
LOG_LOS_SIGMA = 0.6
TREAT_PROB = 0.8
ALIAS_PROB = 0.9


class PlantedTruth(BaseModel):
    """Generating parameters of a synthetic cohort.

    Per-code effect lists are indexed by code id (index 0 is padding, 0.0).
    """

    seed: int
    signal_mode: SignalMode
    effect_weight: float
    mortality_base: float
    readmission_base: float
    patient_cluster: dict[int, int]
    signatures: list[dict[str, list[int]]] = Field(
        ..., description="Per cluster: signature code ids by kind letter"
    )
    treats: list[tuple[int, int]] = Field(..., description="Planted (diagnosis, medication) pairs")
    cluster_mortality: list[float]
    cluster_readmission: list[float]
    cluster_los: list[float]
    code_mortality: list[float]
    code_readmission: list[float]
    code_los: list[float]
    alias_groups: list[list[int]] = Field(default_factory=list)
    hubs: list[int] = Field(default_factory=list)
    planted_facts: list[tuple[str, str, str]] = Field(
        default_factory=list, description="(head name, relation, tail name)"
    )

    def _code_mean(self, effects: list[float], codes: tuple[int, ...]) -> float:
        if self.signal_mode == SignalMode.KG_ALIAS:
            return 0.0
        return float(np.mean([effects[c] for c in codes])) if codes else 0.0

    def mortality_logit(self, cluster: int, codes: tuple[int, ...]) -> float:
        return self.mortality_base + self.effect_weight * (
            self.cluster_mortality[cluster] + self._code_mean(self.code_mortality, codes)
        )

    def readmission_logit(self, cluster: int, codes: tuple[int, ...]) -> float:
        return self.readmission_base + self.effect_weight * (
            self.cluster_readmission[cluster] + self._code_mean(self.code_readmission, codes)
        )

    def log_los_mean(self, cluster: int, codes: tuple[int, ...]) -> float:
        return BASE_LOG_LOS + self.effect_weight * (
            self.cluster_los[cluster] + self._code_mean(self.code_los, codes)
        )


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _build_code_table(cfg: GeneratorConfig) -> tuple[list[MedicalCode], dict[str, list[int]]]:
    """Codes grouped by kind with dense ids: diagnoses, then procedures, then medications."""
    names: list[tuple[str, CodeKind]] = []
    names += [(f"DX{i:03d}", CodeKind.DIAGNOSIS) for i in range(1, cfg.n_diagnoses + 1)]
    if cfg.signal_mode == SignalMode.KG_ALIAS:
        for c in range(cfg.n_clusters):
            names += [
                (f"DXA{c:02d}{j:03d}", CodeKind.DIAGNOSIS) for j in range(cfg.aliases_per_cluster)
            ]
        names += [(f"DXH{c:02d}", CodeKind.DIAGNOSIS) for c in range(cfg.n_clusters)]
    names += [(f"PR{i:03d}", CodeKind.PROCEDURE) for i in range(1, cfg.n_procedures + 1)]
    names += [(f"RX{i:03d}", CodeKind.MEDICATION) for i in range(1, cfg.n_medications + 1)]
    codes = [MedicalCode(id=i + 1, name=name, kind=kind) for i, (name, kind) in enumerate(names)]

    pools: dict[str, list[int]] = {"D": [], "P": [], "M": [], "alias": [], "hub": []}
    for code in codes:
        if code.name.startswith("DXA"):
            pools["alias"].append(code.id)
        elif code.name.startswith("DXH"):
            pools["hub"].append(code.id)
        else:
            pools[code.kind.value].append(code.id)
    return codes, pools


def _cluster_effects(n_clusters: int, scale: float, phase: int) -> list[float]:
    """Alternating +/- scale so clusters split into high- and low-risk halves."""
    return [scale if (c // (phase + 1)) % 2 == 0 else -scale for c in range(n_clusters)]


def _plant_truth(
    cfg: GeneratorConfig, seed: int, codes: list[MedicalCode], pools: dict[str, list[int]]
) -> PlantedTruth:
    rng = make_rng(seed, "truth")
    n_ids = len(codes) + 1

    signatures: list[dict[str, list[int]]] = []
    treats: list[tuple[int, int]] = []
    for _ in range(cfg.n_clusters):
        sig: dict[str, list[int]] = {}
        for kind in ("D", "P", "M"):
            pool = pools[kind]
            size = min(cfg.signature_size, len(pool))
            sig[kind] = sorted(int(x) for x in rng.choice(pool, size=size, replace=False))
        signatures.append(sig)
        for d in sig["D"]:
            treats.append((d, int(rng.choice(sig["M"]))))
    treats = sorted(set(treats))

    def code_effects(scale: float) -> list[float]:
        effects = rng.normal(0.0, scale, size=n_ids)
        effects[0] = 0.0
        return [float(e) for e in effects]

    alias_groups: list[list[int]] = []
    hubs: list[int] = []
    facts: list[tuple[str, str, str]] = []
    if cfg.signal_mode == SignalMode.KG_ALIAS:
        name_of = {c.id: c.name for c in codes}
        per = cfg.aliases_per_cluster
        alias_groups = [pools["alias"][c * per : (c + 1) * per] for c in range(cfg.n_clusters)]
        hubs = list(pools["hub"])
        for group, hub in zip(alias_groups, hubs):
            facts += [(name_of[a], ALIAS_RELATION, name_of[hub]) for a in group]

    los_effects = [float(x) for x in np.linspace(-0.8, 0.8, cfg.n_clusters)]
    if cfg.n_clusters == 1:
        los_effects = [0.0]
    return PlantedTruth(
        seed=seed,
        signal_mode=cfg.signal_mode,
        effect_weight=cfg.effect_weight,
        mortality_base=cfg.mortality_base,
        readmission_base=cfg.readmission_base,
        patient_cluster={},
        signatures=signatures,
        treats=treats,
        cluster_mortality=_cluster_effects(cfg.n_clusters, cfg.cluster_effect_scale, 0),
        cluster_readmission=_cluster_effects(cfg.n_clusters, cfg.cluster_effect_scale / 2, 1),
        cluster_los=los_effects,
        code_mortality=code_effects(cfg.code_effect_scale),
        code_readmission=code_effects(cfg.code_effect_scale),
        code_los=code_effects(cfg.code_effect_scale / 2),
        alias_groups=alias_groups,
        hubs=hubs,
        planted_facts=facts,
    )


def _draw_codes(
    rng: np.random.Generator,
    mean_count: float,
    pool: list[int],
    signature: list[int],
    signature_prob: float,
    at_least_one: bool,
) -> set[int]:
    count = int(rng.poisson(mean_count)) if mean_count > 0 else 0
    if at_least_one:
        count = max(count, 1)
    drawn: set[int] = set()
    for _ in range(count):
        source = signature if signature and rng.random() < signature_prob else pool
        drawn.add(int(rng.choice(source)))
    return drawn


def _draw_visit_codes(
    rng: np.random.Generator,
    cfg: GeneratorConfig,
    truth: PlantedTruth,
    pools: dict[str, list[int]],
    cluster: int,
    treat_of: dict[int, int],
) -> tuple[int, ...]:
    sig = truth.signatures[cluster]
    signature_prob = 0.0 if cfg.signal_mode == SignalMode.KG_ALIAS else cfg.signature_prob
    diagnoses = _draw_codes(rng, cfg.diagnoses_per_visit, pools["D"], sig["D"], signature_prob, True)
    procedures = _draw_codes(
        rng, cfg.procedures_per_visit, pools["P"], sig["P"], signature_prob, False
    )
    medications = _draw_codes(
        rng, cfg.medications_per_visit, pools["M"], sig["M"], signature_prob, False
    )
    for d in sorted(diagnoses):
        if d in treat_of and rng.random() < TREAT_PROB:
            medications.add(treat_of[d])
    if cfg.signal_mode == SignalMode.KG_ALIAS and rng.random() < ALIAS_PROB:
        diagnoses.add(int(rng.choice(truth.alias_groups[cluster])))
    return tuple(sorted(diagnoses | procedures | medications))


def _generate_patient(
    patient_id: int,
    seed: int,
    cfg: GeneratorConfig,
    truth: PlantedTruth,
    pools: dict[str, list[int]],
    treat_of: dict[int, int],
) -> tuple[PatientRecord, int]:
    rng = make_rng(seed, "patient", patient_id)
    cluster = int(rng.integers(cfg.n_clusters))
    n_visits = min(1 + int(rng.poisson(cfg.mean_extra_visits)), cfg.max_visits)
    code_sets = [_draw_visit_codes(rng, cfg, truth, pools, cluster, treat_of) for _ in range(n_visits)]

    # Mortality of the final visit is driven by the visit before it.
    dies = False
    if n_visits >= 2:
        dies = bool(rng.random() < _sigmoid(truth.mortality_logit(cluster, code_sets[-2])))

    visits: list[Visit] = []
    admit = float(rng.uniform(0.0, 365.0))
    for j, codes in enumerate(code_sets):
        stay = float(np.exp(rng.normal(truth.log_los_mean(cluster, codes), LOG_LOS_SIGMA)))
        last = j == n_visits - 1
        if last and dies:
            gap = admit - visits[-1].discharge_time
            stay = min(stay, max(30.0 - gap, 0.0))
        discharge = admit + stay
        visits.append(
            Visit(codes=codes, admit=admit, discharge=discharge, died=last and dies)
        )
        if last:
            break
        readmitted = rng.random() < _sigmoid(truth.readmission_logit(cluster, codes))
        gap = float(rng.uniform(1.0, 29.0)) if readmitted else 31.0 + float(rng.exponential(180.0))
        if j == n_visits - 2 and dies:
            gap = float(rng.uniform(1.0, 25.0))
        admit = visits[-1].discharge_time + gap
    return PatientRecord(patient_id=patient_id, visits=tuple(visits)), cluster


def generate_synthetic_cohort(cfg: GeneratorConfig, seed: int) -> tuple[EHRDataset, PlantedTruth]:
    """Generate a cohort and the truth that generated it.

    Args:
        cfg: Generator configuration.
        seed: Master seed; every patient uses a stream derived from it.

    Returns:
        (dataset, planted truth). Identical for identical (cfg, seed).

    Raises:
        ConfigError: If the configuration cannot be realized.
    """
    if cfg.n_clusters > cfg.n_patients:
        raise ConfigError(
            f"n_clusters ({cfg.n_clusters}) exceeds n_patients ({cfg.n_patients})"
        )
    if cfg.n_diagnoses + cfg.n_procedures + cfg.n_medications < 6:
        raise ConfigError("a cohort needs at least 6 codes")

    codes, pools = _build_code_table(cfg)
    truth = _plant_truth(cfg, seed, codes, pools)
    treat_of = dict(truth.treats)

    patients: list[PatientRecord] = []
    clusters: dict[int, int] = {}
    for pid in range(cfg.n_patients):
        record, cluster = _generate_patient(pid, seed, cfg, truth, pools, treat_of)
        patients.append(record)
        clusters[pid] = cluster
    truth.patient_cluster = clusters

    dataset = EHRDataset(codes=codes, patients=patients)
    n_visits = sum(len(p.visits) for p in patients)
    logger.info(
        f"Generated {len(patients)} patients, {n_visits} visits, "
        f"{len(codes)} codes ({cfg.signal_mode.value} signal)"
    )
    return dataset, truth
