"""Three-stage knowledge-graph construction.

1. Retrieval: ask a RelationSuggester about every unordered code pair.
2. Cleaning: a TripletJudge labels a random subset; a small perceptron over
   text embeddings learns from those labels and scores the rest. Judged-true
   triplets are kept as verified, plus the best-scoring classifier triplets
   up to ``select_multiple`` times the verified count.
3. Refinement: relation phrases are embedded and merged by ward-linkage
   agglomerative clustering; clusters holding contradictory phrases are
   split; each cluster is renamed to its lexicographically smallest member.

Examples:
    >>> kg, report = build_kg(
    ...     ds.codes, KGBuildConfig(),
    ...     suggester=CooccurrenceSuggester(ds), judge=KeywordJudge(),
    ...     embedder=HashingEmbedder(), splitter=NegationSplitter(),
    ... )
    >>> report.verified <= report.labelled
    True

Tests:
    - tests/unit/test_pipeline.py
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from sklearn.cluster import AgglomerativeClustering
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPClassifier

from protoehr.config import KGBuildConfig
from protoehr.core.errors import ContractError, InsufficientLabelsError
from protoehr.core.seeding import derive_seed32, make_rng
from protoehr.kg.graph import CandidatePool, MedicalKG
from protoehr.kg.providers.base import (
    ContradictionSplitter,
    RelationSuggester,
    TextEmbedder,
    TripletJudge,
)
from protoehr.schemas.ehr import MedicalCode
from protoehr.schemas.kg import KGPipelineReport, ScoredTriplet, Triplet, TripletSource

logger = logging.getLogger(__name__)

HOLDOUT_FRACTION = 0.2
MIN_HOLDOUT_LABELS = 10


# =============================================================================
# Retrieval
# =============================================================================


def retrieve_candidates(
    codes: Sequence[MedicalCode], suggester: RelationSuggester, workers: int = 1
) -> CandidatePool:
    """Query every unordered code pair once, lower id as head.

    A pair whose suggester call raises is logged and skipped.

    Raises:
        ContractError: With fewer than two codes.
    """
    if len(codes) < 2:
        raise ContractError(f"retrieval needs at least 2 codes, got {len(codes)}")
    ordered = sorted(codes, key=lambda c: c.id)
    pairs = list(combinations(ordered, 2))

    def ask(pair: tuple[MedicalCode, MedicalCode]) -> str | None | BaseException:
        head, tail = pair
        try:
            return suggester.suggest(head.name, tail.name)
        except Exception as e:
            return e

    with ThreadPoolExecutor(max_workers=workers) as pool_executor:
        answers = list(pool_executor.map(ask, pairs))

    pool = CandidatePool(codes=ordered, pairs_queried=len(pairs))
    for (head, tail), answer in zip(pairs, answers):
        if isinstance(answer, BaseException):
            pool.pairs_failed += 1
            logger.warning(f"Suggester failed on ({head.name}, {tail.name}): {answer}")
            continue
        if answer is None or not answer.strip():
            continue
        pool.add(head.id, answer, tail.id)
    logger.info(
        f"Retrieval: {len(pairs)} pairs queried, {len(pool)} candidates, "
        f"{len(pool.relations)} relations, {pool.pairs_failed} failures"
    )
    return pool


# =============================================================================
# Cleaning
# =============================================================================


@dataclass
class CleaningResult:
    """Output of the cleaning stage.

    ``scores`` holds the classifier probability of every unlabelled
    candidate, keyed by its index in the pool.
    """

    kept: list[ScoredTriplet]
    labelled: int
    verified: int
    classifier_positive: int
    selected: int
    scores: dict[int, float] = field(default_factory=dict)
    holdout_accuracy: float | None = None


def _fit_classifier(
    x: np.ndarray, y: np.ndarray, hidden: int, epochs: int, lr: float, seed: int
) -> MLPClassifier:
    clf = MLPClassifier(
        hidden_layer_sizes=(hidden,),
        max_iter=epochs,
        learning_rate_init=lr,
        random_state=seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(x, y)
    return clf


def _positive_proba(clf: MLPClassifier, x: np.ndarray) -> np.ndarray:
    column = list(clf.classes_).index(1)
    proba: np.ndarray = clf.predict_proba(x)[:, column]
    return proba


def _holdout_accuracy(
    x: np.ndarray, y: np.ndarray, cfg: KGBuildConfig, seed: int
) -> float | None:
    if len(y) < MIN_HOLDOUT_LABELS:
        return None
    order = make_rng(seed, "holdout").permutation(len(y))
    n_hold = max(1, int(round(HOLDOUT_FRACTION * len(y))))
    hold, fit = order[:n_hold], order[n_hold:]
    if len(np.unique(y[fit])) < 2:
        return None
    clf = _fit_classifier(
        x[fit], y[fit], cfg.mlp_hidden, cfg.mlp_epochs, cfg.mlp_lr, derive_seed32(seed, "holdout-mlp")
    )
    return float(np.mean((_positive_proba(clf, x[hold]) >= 0.5) == y[hold]))


def clean_candidates(
    pool: CandidatePool,
    judge: TripletJudge,
    embedder: TextEmbedder,
    label_budget: int,
    select_multiple: int = 5,
    cfg: KGBuildConfig | None = None,
) -> CleaningResult:
    """Label a random subset, learn from it, keep the trustworthy candidates.

    Args:
        pool: Retrieved candidates.
        judge: Labels the ``label_budget`` sampled candidates.
        embedder: Features for the classifier.
        label_budget: Number of candidates sent to the judge.
        select_multiple: Classifier selections per verified triplet.
        cfg: Classifier settings, threshold and seed (defaults if None).

    Raises:
        ContractError: If ``label_budget`` exceeds the candidate count.
        InsufficientLabelsError: If the judge accepts none of the sample.
    """
    cfg = cfg or KGBuildConfig()
    n = len(pool)
    if not 1 <= label_budget <= n:
        raise ContractError(f"label budget {label_budget} outside 1..{n} candidates")
    rng = make_rng(cfg.seed, "clean")
    labelled = np.sort(rng.choice(n, size=label_budget, replace=False))
    texts = [pool.text(t) for t in pool.triplets]

    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        verdicts = list(executor.map(judge.judge, [texts[i] for i in labelled]))
    y = np.array(verdicts, dtype=np.int64)
    n_verified = int(y.sum())
    if n_verified == 0:
        raise InsufficientLabelsError(
            f"judge accepted none of {label_budget} sampled candidates; "
            "increase label_budget or label_fraction"
        )
    kept = [
        ScoredTriplet(triplet=pool.triplets[i], source=TripletSource.VERIFIED, score=1.0)
        for i, ok in zip(labelled, verdicts)
        if ok
    ]

    unlabelled = np.setdiff1d(np.arange(n), labelled)
    scores: dict[int, float] = {}
    holdout: float | None = None
    if len(unlabelled):
        x = embedder.embed_many(texts)
        if len(np.unique(y)) < 2:
            logger.warning(
                f"All {label_budget} judged candidates share one label; "
                "scoring the rest with the labelled positive rate"
            )
            proba = np.full(len(unlabelled), float(y.mean()))
        else:
            clf = _fit_classifier(
                x[labelled], y, cfg.mlp_hidden, cfg.mlp_epochs, cfg.mlp_lr, derive_seed32(cfg.seed, "mlp")
            )
            proba = _positive_proba(clf, x[unlabelled])
            holdout = _holdout_accuracy(x[labelled], y, cfg, cfg.seed)
        scores = {int(i): float(p) for i, p in zip(unlabelled, proba)}

    positive = [i for i in scores if scores[i] >= cfg.threshold]
    positive.sort(key=lambda i: (-scores[i], i))
    chosen = positive[: select_multiple * n_verified]
    kept += [
        ScoredTriplet(
            triplet=pool.triplets[i],
            source=TripletSource.CLASSIFIER,
            score=min(1.0, max(0.0, scores[i])),
        )
        for i in chosen
    ]
    logger.info(
        f"Cleaning: {label_budget} labelled, {n_verified} verified, "
        f"{len(positive)} classifier-positive, {len(chosen)} selected"
    )
    return CleaningResult(
        kept=kept,
        labelled=label_budget,
        verified=n_verified,
        classifier_positive=len(positive),
        selected=len(chosen),
        scores=scores,
        holdout_accuracy=holdout,
    )


# =============================================================================
# Refinement
# =============================================================================


def _merge_round(
    names: list[str],
    embedder: TextEmbedder,
    distance_threshold: float,
    splitter: ContradictionSplitter,
) -> list[list[str]]:
    if len(names) < 2 or distance_threshold <= 0.0:
        return [[n] for n in names]
    vectors = embedder.embed_many(names)
    labels = AgglomerativeClustering(
        n_clusters=None, distance_threshold=distance_threshold, linkage="ward"
    ).fit(vectors).labels_
    clusters: dict[int, list[str]] = {}
    for name, label in zip(names, labels):
        clusters.setdefault(int(label), []).append(name)
    groups: list[list[str]] = []
    for members in clusters.values():
        groups.extend(splitter.split(members) if len(members) > 1 else [members])
    return groups


def canonical_relations(
    names: Sequence[str],
    embedder: TextEmbedder,
    distance_threshold: float,
    splitter: ContradictionSplitter,
) -> dict[str, str]:
    """Map each relation phrase to its cluster's canonical phrase.

    Clustering is repeated on the canonical phrases until a round merges
    nothing, so the result is a fixed point.
    """
    mapping = {n: n for n in names}
    current = sorted(set(names))
    while True:
        groups = _merge_round(current, embedder, distance_threshold, splitter)
        if all(len(g) == 1 for g in groups):
            return mapping
        renamed = {member: min(group) for group in groups for member in group}
        mapping = {n: renamed[c] for n, c in mapping.items()}
        current = sorted(set(renamed.values()))
        logger.debug(f"Refinement round merged down to {len(current)} relations")


def refine_relations(
    triplets: Sequence[Triplet],
    relations: Sequence[str],
    codes: Sequence[MedicalCode],
    embedder: TextEmbedder,
    distance_threshold: float,
    splitter: ContradictionSplitter,
) -> MedicalKG:
    """Merge synonymous relations and build the finalized graph.

    The new relation table holds the canonical phrases in lexicographic
    order. Facts that collapse onto the same (head, relation, tail) are
    stored once.

    Raises:
        ContractError: If ``triplets`` is empty.
    """
    if not triplets:
        raise ContractError("refinement needs at least one triplet")
    used = sorted({relations[t.relation] for t in triplets})
    mapping = canonical_relations(used, embedder, distance_threshold, splitter)
    final = sorted(set(mapping.values()))
    new_id = {name: i for i, name in enumerate(final)}
    facts = [
        Triplet(head=t.head, relation=new_id[mapping[relations[t.relation]]], tail=t.tail)
        for t in triplets
    ]
    kg = MedicalKG(codes, final, facts)
    logger.info(f"Refinement: {len(used)} -> {len(final)} relations, {len(kg.facts)} facts")
    return kg


# =============================================================================
# Full pipeline
# =============================================================================


def label_budget_for(n_candidates: int, cfg: KGBuildConfig) -> int:
    if cfg.label_budget is not None:
        return min(cfg.label_budget, n_candidates)
    return min(n_candidates, max(1, math.ceil(cfg.label_fraction * n_candidates)))


def build_kg(
    codes: Sequence[MedicalCode],
    cfg: KGBuildConfig,
    suggester: RelationSuggester,
    judge: TripletJudge,
    embedder: TextEmbedder,
    splitter: ContradictionSplitter,
) -> tuple[MedicalKG, KGPipelineReport]:
    """Run retrieval, cleaning and refinement.

    An empty candidate pool yields a graph without facts.
    """
    pool = retrieve_candidates(codes, suggester, workers=cfg.workers)
    report = KGPipelineReport(
        entities=len(codes) + 1,
        pairs_queried=pool.pairs_queried,
        pairs_failed=pool.pairs_failed,
        candidates=len(pool),
        relations_before=len(pool.relations),
    )
    if not len(pool):
        logger.warning("No candidate triplets retrieved; the graph has no facts")
        return MedicalKG.empty(codes), report

    cleaned = clean_candidates(
        pool,
        judge,
        embedder,
        label_budget=label_budget_for(len(pool), cfg),
        select_multiple=cfg.select_multiple,
        cfg=cfg,
    )
    kept = [s.triplet for s in cleaned.kept]
    kg = refine_relations(
        kept, pool.relations, codes, embedder, cfg.distance_threshold, splitter
    )
    report = report.model_copy(
        update={
            "labelled": cleaned.labelled,
            "verified": cleaned.verified,
            "classifier_positive": cleaned.classifier_positive,
            "selected": cleaned.selected,
            "relations_before": len({t.relation for t in kept}),
            "relations_after": kg.n_relations,
            "facts": len(kg.facts),
            "facts_with_inverses": 2 * len(kg.facts),
            "classifier_holdout_accuracy": cleaned.holdout_accuracy,
        }
    )
    logger.info(
        f"KG built: {report.entities} entities, {report.facts} facts, "
        f"{report.relations_before} -> {report.relations_after} relations"
    )
    return kg, report
