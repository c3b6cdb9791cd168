"""Deterministic offline implementations of the provider roles.

- CooccurrenceSuggester: relation phrases from visit co-occurrence lift
- LexiconSuggester: relation lookup in a fixed fact list
- KeywordJudge: accept/reject by relation tokens
- HashingEmbedder: seeded random projection of character n-gram counts
- NegationSplitter: separates negated relation phrases from affirmative ones

All are pure: equal inputs give equal outputs across runs and machines.

Examples:
    >>> emb = HashingEmbedder(dim=16, seed=0)
    >>> bool(np.isclose(np.linalg.norm(emb.embed("treats")), 1.0))
    True
    >>> NegationSplitter().split(["treats", "does not treat"])
    [['treats'], ['does not treat']]

Tests:
    - tests/unit/test_providers.py
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from itertools import combinations

import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

from protoehr.core.seeding import make_rng
from protoehr.kg.providers.base import (
    ContradictionSplitter,
    RelationSuggester,
    TextEmbedder,
    TripletJudge,
)
from protoehr.schemas.ehr import EHRDataset
from protoehr.schemas.kg import EdgeKind

logger = logging.getLogger(__name__)

NEGATION_TOKENS = ("not", "no", "never")
WEAK_TOKENS = ("occasionally", "sometimes")

# (strong phrases, weak phrases) per edge kind, head kind first
RELATION_PHRASES: dict[EdgeKind, tuple[tuple[str, ...], tuple[str, ...]]] = {
    EdgeKind.DD: (
        ("co-occurs with", "frequently co-occurs with", "is comorbid with"),
        ("occasionally co-occurs with", "sometimes co-occurs with"),
    ),
    EdgeKind.DP: (
        ("is managed with", "is frequently managed with", "is commonly managed with"),
        ("is occasionally managed with", "is sometimes managed with"),
    ),
    EdgeKind.DM: (
        ("is treated with", "is frequently treated with", "is commonly treated with"),
        ("is occasionally treated with", "is sometimes treated with"),
    ),
    EdgeKind.PP: (
        ("is performed with", "is frequently performed with"),
        ("is occasionally performed with",),
    ),
    EdgeKind.PM: (
        ("is followed by", "is frequently followed by"),
        ("is occasionally followed by",),
    ),
    EdgeKind.MM: (
        ("is co-prescribed with", "is frequently co-prescribed with"),
        ("is occasionally co-prescribed with",),
    ),
}
NEGATED_PHRASE = "is not associated with"


def _tokens(text: str) -> set[str]:
    return set(text.lower().replace(",", " ").split())


def _stable_index(key: str, n: int) -> int:
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") % n


class CooccurrenceSuggester(RelationSuggester):
    """Suggests relations for code pairs that share visits.

    Pairs seen together in fewer than ``min_count`` visits are unrelated.
    The phrase depends on the edge kind and on the pair's lift
    ``count * n_visits / (freq_a * freq_b)``: strong (lift >= strong_lift),
    weak (lift >= 1) or negated (lift < 1). Synonymous variants within a
    tier are picked by a hash of the pair.
    """

    def __init__(self, ds: EHRDataset, min_count: int = 3, strong_lift: float = 2.0) -> None:
        self.min_count = min_count
        self.strong_lift = strong_lift
        self._kind_of = {c.name: c.kind.value for c in ds.codes}
        self._id_of = ds.name_to_id
        self._freq: Counter[int] = Counter()
        self._pairs: Counter[tuple[int, int]] = Counter()
        self._n_visits = 0
        for patient in ds.patients:
            for visit in patient.visits:
                self._n_visits += 1
                self._freq.update(visit.codes)
                self._pairs.update(combinations(visit.codes, 2))
        logger.debug(f"Co-occurrence index: {len(self._pairs)} pairs over {self._n_visits} visits")

    def lift(self, head_name: str, tail_name: str) -> float:
        a, b = sorted((self._id_of[head_name], self._id_of[tail_name]))
        count = self._pairs.get((a, b), 0)
        if count == 0:
            return 0.0
        return count * self._n_visits / (self._freq[a] * self._freq[b])

    def suggest(self, head_name: str, tail_name: str) -> str | None:
        a, b = sorted((self._id_of[head_name], self._id_of[tail_name]))
        if self._pairs.get((a, b), 0) < self.min_count:
            return None
        lift = self.lift(head_name, tail_name)
        if lift < 1.0:
            return NEGATED_PHRASE
        kind = EdgeKind.of(self._kind_of[head_name], self._kind_of[tail_name])
        strong, weak = RELATION_PHRASES[kind]
        phrases = strong if lift >= self.strong_lift else weak
        return phrases[_stable_index(f"{head_name}|{tail_name}", len(phrases))]


class LexiconSuggester(RelationSuggester):
    """Looks pairs up in a fixed list of (head, relation, tail) names.

    Lookups are directional; the first relation listed for a pair wins.
    """

    def __init__(self, facts: Iterable[tuple[str, str, str]]) -> None:
        self._lexicon: dict[tuple[str, str], str] = {}
        for head, relation, tail in facts:
            self._lexicon.setdefault((head, tail), relation)

    def suggest(self, head_name: str, tail_name: str) -> str | None:
        return self._lexicon.get((head_name, tail_name))


class KeywordJudge(TripletJudge):
    """Accepts a triplet text unless it contains a rejected token.

    With ``accept`` set, the text must also contain one of those tokens.
    """

    def __init__(
        self,
        accept: Sequence[str] | None = None,
        reject: Sequence[str] = NEGATION_TOKENS + WEAK_TOKENS,
    ) -> None:
        self.accept = frozenset(t.lower() for t in accept) if accept is not None else None
        self.reject = frozenset(t.lower() for t in reject)

    def judge(self, text: str) -> bool:
        tokens = _tokens(text)
        if tokens & self.reject:
            return False
        return self.accept is None or bool(tokens & self.accept)


class HashingEmbedder(TextEmbedder):
    """Character n-gram counts projected by a seeded Gaussian matrix.

    Texts without any n-gram map to the first basis vector.
    """

    def __init__(
        self,
        dim: int = 64,
        seed: int = 0,
        ngram_range: tuple[int, int] = (2, 4),
        n_features: int = 2**12,
    ) -> None:
        self.dim = dim
        self._vectorizer = HashingVectorizer(
            analyzer="char_wb",
            ngram_range=ngram_range,
            n_features=n_features,
            alternate_sign=False,
            norm=None,
        )
        rng = make_rng(seed, "hashing-embedder")
        self._projection = rng.standard_normal((n_features, dim)) / np.sqrt(dim)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        counts = self._vectorizer.transform(list(texts))
        dense = np.asarray(counts @ self._projection, dtype=np.float64)
        norms = np.linalg.norm(dense, axis=1)
        empty = norms == 0.0
        dense[empty, 0] = 1.0
        norms[empty] = 1.0
        return dense / norms[:, None]


class NegationSplitter(ContradictionSplitter):
    """Separates phrases containing a negation token from the rest."""

    def __init__(self, tokens: Sequence[str] = NEGATION_TOKENS) -> None:
        self.tokens = frozenset(tokens)

    def split(self, relations: Sequence[str]) -> list[list[str]]:
        affirmative = [r for r in relations if not _tokens(r) & self.tokens]
        negated = [r for r in relations if _tokens(r) & self.tokens]
        return [group for group in (affirmative, negated) if group]
