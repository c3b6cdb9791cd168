"""Knowledge-graph schemas.

Examples:
    >>> Triplet(head=1, relation=0, tail=4)
    Triplet(head=1, relation=0, tail=4)
    >>> EdgeKind.of("M", "D")
    <EdgeKind.DM: 'DM'>

Tests:
    - tests/unit/test_schemas.py::TestKGSchemas
"""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

_KIND_ORDER = "DPM"


class EdgeKind(str, Enum):
    """Unordered pair of endpoint code kinds."""

    DD = "DD"
    DP = "DP"
    DM = "DM"
    PP = "PP"
    PM = "PM"
    MM = "MM"

    @classmethod
    def of(cls, head_kind: str, tail_kind: str) -> EdgeKind:
        pair = sorted((head_kind, tail_kind), key=_KIND_ORDER.index)
        return cls("".join(pair))


class TripletSource(str, Enum):
    """How a triplet survived cleaning."""

    VERIFIED = "verified"  # judged true
    CLASSIFIER = "classifier"  # scored by the cleaning classifier


class Triplet(BaseModel):
    """A directed fact (head, relation, tail) over code ids."""

    model_config = ConfigDict(frozen=True)

    head: int = Field(..., ge=1)
    relation: int = Field(..., ge=0)
    tail: int = Field(..., ge=1)

    @model_validator(mode="after")
    def check_endpoints(self) -> Triplet:
        if self.head == self.tail:
            raise ValueError("head and tail must differ")
        return self

    def key(self) -> tuple[int, int, int]:
        return (self.head, self.relation, self.tail)


class ScoredTriplet(BaseModel):
    """A cleaned candidate with provenance and probability."""

    model_config = ConfigDict(frozen=True)

    triplet: Triplet
    source: TripletSource
    score: float = Field(..., ge=0.0, le=1.0)

    @model_validator(mode="after")
    def check_verified(self) -> ScoredTriplet:
        if self.source == TripletSource.VERIFIED and self.score != 1.0:
            raise ValueError("verified triplets carry score 1.0")
        return self


class KGPipelineReport(BaseModel):
    """Stage counts of one KG construction run."""

    entities: int = Field(..., description="Entity count including padding")
    pairs_queried: int = 0
    pairs_failed: int = 0
    candidates: int = 0
    labelled: int = 0
    verified: int = 0
    classifier_positive: int = 0
    selected: int = 0
    relations_before: int = 0
    relations_after: int = 0
    facts: int = Field(default=0, description="Forward facts in the final KG")
    facts_with_inverses: int = 0
    classifier_holdout_accuracy: float | None = None
