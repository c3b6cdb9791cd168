"""TSV persistence for medical knowledge graphs.

One fact per line, ``head_name<TAB>relation<TAB>tail_name``, UTF-8. Lines
starting with ``#`` are comments, except ``#relation<TAB>name`` which
declares a relation so that relation ids (and relations without facts)
survive a round trip.

Examples:
    >>> save_kg(kg, "out/kg.tsv")
    >>> load_kg("out/kg.tsv", kg.codes) == kg
    True

Tests:
    - tests/unit/test_kg.py::TestKGFiles
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

from protoehr.core.errors import KGLoadError
from protoehr.kg.graph import CandidatePool, MedicalKG
from protoehr.schemas.ehr import MedicalCode

logger = logging.getLogger(__name__)

RELATION_DIRECTIVE = "#relation\t"


def save_kg(kg: MedicalKG, path: str | Path) -> None:
    """Write relation declarations followed by the forward facts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"# {kg.n_entities} entities, {kg.n_relations} relations, {len(kg.facts)} facts\n")
        for relation in kg.relations:
            handle.write(f"{RELATION_DIRECTIVE}{relation}\n")
        for head, relation, tail in kg.named_facts():
            handle.write(f"{head}\t{relation}\t{tail}\n")
    logger.info(f"Saved {kg!r} to {path}")


def load_kg(path: str | Path, codes: Sequence[MedicalCode]) -> MedicalKG:
    """Read a KG file against a code table.

    Duplicate facts are dropped with a warning.

    Raises:
        KGLoadError: If the file is missing, a line is malformed, or a code
            name is not in the table.
    """
    path = Path(path)
    if not path.exists():
        raise KGLoadError(f"KG file not found: {path}")
    by_name = {c.name: c.id for c in codes}
    pool = CandidatePool(codes=list(codes))
    seen: set[tuple[int, int, int]] = set()
    duplicates = 0
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if line.startswith(RELATION_DIRECTIVE):
                pool.intern(line[len(RELATION_DIRECTIVE) :])
                continue
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(f.strip() for f in fields):
                raise KGLoadError(f"{path.name}:{lineno}: expected head<TAB>relation<TAB>tail")
            head, relation, tail = (f.strip() for f in fields)
            for name in (head, tail):
                if name not in by_name:
                    raise KGLoadError(f"{path.name}:{lineno}: unknown code name {name!r}")
            if by_name[head] == by_name[tail]:
                raise KGLoadError(f"{path.name}:{lineno}: self-referencing fact on {head!r}")
            key = (by_name[head], pool.intern(relation), by_name[tail])
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            pool.add(key[0], relation, key[2])
    if duplicates:
        logger.warning(f"{path.name}: dropped {duplicates} duplicate facts")
    return MedicalKG(codes, pool.relations, pool.triplets)
