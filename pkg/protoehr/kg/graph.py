"""Medical knowledge graph over the code table.

Facts are stored forward only. Inverse edges are derived when the graph is
handed to the code encoder: a fact ``(h, r, t)`` contributes the reversed
edge ``(t, r + n_relations, h)``, and every entity gets a self-loop with
relation id ``2 * n_relations``.

Examples:
    >>> kg = MedicalKG.from_names(codes, [("DX001", "treated by", "RX001")])
    >>> kg.n_relations, len(kg.facts)
    (1, 1)
    >>> heads, rels, tails = kg.edge_index()
    >>> len(heads) == 2 * len(kg.facts) + kg.n_entities - 1
    True

Tests:
    - tests/unit/test_kg.py
"""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from protoehr.core.errors import ContractError, KGLoadError
from protoehr.schemas.ehr import MedicalCode
from protoehr.schemas.kg import EdgeKind, Triplet

logger = logging.getLogger(__name__)


@dataclass
class CandidatePool:
    """Retrieved candidate triplets with their interned relation strings."""

    codes: list[MedicalCode]
    relations: list[str] = field(default_factory=list)
    triplets: list[Triplet] = field(default_factory=list)
    pairs_queried: int = 0
    pairs_failed: int = 0
    _relation_ids: dict[str, int] = field(default_factory=dict, repr=False)

    def intern(self, relation: str) -> int:
        """Relation id for a string, adding it on first sight."""
        relation = " ".join(relation.split())
        if relation not in self._relation_ids:
            self._relation_ids[relation] = len(self.relations)
            self.relations.append(relation)
        return self._relation_ids[relation]

    def add(self, head: int, relation: str, tail: int) -> Triplet:
        triplet = Triplet(head=head, relation=self.intern(relation), tail=tail)
        self.triplets.append(triplet)
        return triplet

    def text(self, triplet: Triplet) -> str:
        """Natural-language rendering used for judging and embedding."""
        head = self.codes[triplet.head - 1].name
        tail = self.codes[triplet.tail - 1].name
        return f"{head} {self.relations[triplet.relation]} {tail}"

    def __len__(self) -> int:
        return len(self.triplets)


class MedicalKG:
    """Entities (the code table), relation names and forward facts.

    Instances are immutable: ``with_facts`` and ``ablate_edges`` return new
    graphs.
    """

    def __init__(
        self,
        codes: Sequence[MedicalCode],
        relations: Sequence[str],
        facts: Iterable[Triplet],
    ) -> None:
        self.codes: tuple[MedicalCode, ...] = tuple(codes)
        self.relations: tuple[str, ...] = tuple(relations)
        unique = sorted({f.key() for f in facts})
        n_entities = len(self.codes) + 1
        for head, relation, tail in unique:
            if not (1 <= head < n_entities and 1 <= tail < n_entities):
                raise ContractError(f"fact ({head}, {relation}, {tail}) references an unknown code")
            if relation >= len(self.relations):
                raise ContractError(f"fact ({head}, {relation}, {tail}) has an unknown relation")
        self.facts: tuple[Triplet, ...] = tuple(
            Triplet(head=h, relation=r, tail=t) for h, r, t in unique
        )

    @classmethod
    def from_names(
        cls, codes: Sequence[MedicalCode], named_facts: Iterable[tuple[str, str, str]]
    ) -> MedicalKG:
        """Build from (head_name, relation, tail_name) triples.

        Relations are numbered in order of first appearance.

        Raises:
            KGLoadError: If a name is not in the code table.
        """
        by_name = {c.name: c.id for c in codes}
        pool = CandidatePool(codes=list(codes))
        for head, relation, tail in named_facts:
            for name in (head, tail):
                if name not in by_name:
                    raise KGLoadError(f"unknown code name: {name!r}")
            pool.add(by_name[head], relation, by_name[tail])
        return cls(codes, pool.relations, pool.triplets)

    @classmethod
    def empty(cls, codes: Sequence[MedicalCode]) -> MedicalKG:
        return cls(codes, [], [])

    @property
    def n_entities(self) -> int:
        """Entity count including the padding row."""
        return len(self.codes) + 1

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def self_loop_relation(self) -> int:
        return 2 * self.n_relations

    @cached_property
    def _kinds(self) -> str:
        return "-" + "".join(c.kind.value for c in self.codes)

    def edge_kind(self, triplet: Triplet) -> EdgeKind:
        return EdgeKind.of(self._kinds[triplet.head], self._kinds[triplet.tail])

    def named_facts(self) -> list[tuple[str, str, str]]:
        return [
            (self.codes[f.head - 1].name, self.relations[f.relation], self.codes[f.tail - 1].name)
            for f in self.facts
        ]

    def inverse_facts(self) -> list[Triplet]:
        """Reversed counterparts tagged with inverse relation ids."""
        return [
            Triplet(head=f.tail, relation=f.relation + self.n_relations, tail=f.head)
            for f in self.facts
        ]

    def edge_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Message-passing edges: forward facts, their inverses, then self-loops.

        Returns:
            (source, relation, target) integer arrays. A message flows from
            ``source`` to ``target``; the padding entity has no edges.
        """
        forward = np.array([f.key() for f in self.facts], dtype=np.int64).reshape(-1, 3)
        inverse = np.array([f.key() for f in self.inverse_facts()], dtype=np.int64).reshape(-1, 3)
        nodes = np.arange(1, self.n_entities, dtype=np.int64)
        loops = np.stack([nodes, np.full_like(nodes, self.self_loop_relation), nodes], axis=1)
        edges = np.concatenate([forward, inverse, loops], axis=0)
        return edges[:, 0], edges[:, 1], edges[:, 2]

    def with_facts(self, facts: Iterable[Triplet]) -> MedicalKG:
        return MedicalKG(self.codes, self.relations, facts)

    def ablate_edges(self, kinds: Iterable[EdgeKind | str]) -> MedicalKG:
        """Copy without the facts (and so the inverses) of the given edge kinds.

        Raises:
            ContractError: If ``kinds`` is empty.
        """
        drop = {EdgeKind(k) for k in kinds}
        if not drop:
            raise ContractError("ablate_edges needs at least one edge kind")
        kept = [f for f in self.facts if self.edge_kind(f) not in drop]
        logger.info(
            f"Removed {len(self.facts) - len(kept)} facts of kinds "
            f"{','.join(sorted(k.value for k in drop))}"
        )
        return self.with_facts(kept)

    def kind_counts(self) -> dict[str, int]:
        counts = {k.value: 0 for k in EdgeKind}
        for fact in self.facts:
            counts[self.edge_kind(fact).value] += 1
        return counts

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for head, relation, tail in self.named_facts():
            digest.update(f"{head}\t{relation}\t{tail}\n".encode())
        return digest.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MedicalKG):
            return NotImplemented
        return (
            self.codes == other.codes
            and self.relations == other.relations
            and self.facts == other.facts
        )

    def __repr__(self) -> str:
        return (
            f"MedicalKG(entities={self.n_entities}, relations={self.n_relations}, "
            f"facts={len(self.facts)})"
        )
