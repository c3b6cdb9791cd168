"""Provider roles for knowledge-graph construction.

Each pipeline stage talks to one role. Offline mocks implement the roles
deterministically; the HTTP provider implements all four against an
OpenAI-compatible API.

Examples:
    >>> from protoehr.kg.providers import CooccurrenceSuggester, KeywordJudge
    >>> judge = KeywordJudge(reject=("never",))
    >>> judge.judge("DX001 is never treated with RX003")
    False

Tests:
    - tests/unit/test_providers.py
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Sequence

import numpy as np

__all__ = [
    "ContradictionSplitter",
    "RelationSuggester",
    "TextEmbedder",
    "TripletJudge",
]


class RelationSuggester(ABC):
    """Proposes a relation between two codes, or None if unrelated."""

    @abstractmethod
    def suggest(self, head_name: str, tail_name: str) -> str | None:
        """Relation phrase linking ``head_name`` to ``tail_name``.

        Raises:
            ProviderError: If the backing service fails for this pair.
        """
        ...


class TripletJudge(ABC):
    """Decides whether a rendered triplet is a valid fact."""

    @abstractmethod
    def judge(self, text: str) -> bool: ...


class TextEmbedder(ABC):
    """Maps text to a fixed-length unit vector."""

    dim: int

    @abstractmethod
    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        """Stack of embeddings, shape (len(texts), dim)."""
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(t) for t in texts])


class ContradictionSplitter(ABC):
    """Splits a relation cluster into mutually consistent groups."""

    @abstractmethod
    def split(self, relations: Sequence[str]) -> list[list[str]]:
        """Partition ``relations``; every input appears in exactly one group."""
        ...
