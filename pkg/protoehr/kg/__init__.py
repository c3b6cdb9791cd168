"""Medical knowledge graph: model, construction pipeline and TSV files."""

from protoehr.kg.graph import CandidatePool, MedicalKG
from protoehr.kg.io import load_kg, save_kg
from protoehr.kg.pipeline import (
    CleaningResult,
    build_kg,
    clean_candidates,
    refine_relations,
    retrieve_candidates,
)

__all__ = [
    "CandidatePool",
    "CleaningResult",
    "MedicalKG",
    "build_kg",
    "clean_candidates",
    "load_kg",
    "refine_relations",
    "retrieve_candidates",
    "save_kg",
]
