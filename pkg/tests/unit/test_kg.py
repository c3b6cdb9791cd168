"""Unit tests for the knowledge graph and its TSV files.

Tests for protoehr/kg/graph.py and protoehr/kg/io.py.

Run with:
    pytest tests/unit/test_kg.py -v -m fast
"""

import numpy as np
import pytest

from protoehr.core.errors import ContractError, KGLoadError
from protoehr.kg.graph import CandidatePool, MedicalKG
from protoehr.kg.io import load_kg, save_kg
from protoehr.schemas.kg import EdgeKind, Triplet


@pytest.mark.fast
class TestMedicalKG:
    """Tests for MedicalKG construction and derived edges."""

    def test_from_names(self, toy_kg):
        """Test relations are numbered by first appearance and facts sorted."""
        assert toy_kg.relations == ("is treated with", "is a subtype of")
        assert [f.key() for f in toy_kg.facts] == [(1, 0, 6), (1, 1, 3), (2, 0, 7)]
        assert toy_kg.n_entities == 8
        assert toy_kg.self_loop_relation == 4

    def test_unknown_name(self, tiny_codes):
        """Test a name outside the code table raises KGLoadError."""
        with pytest.raises(KGLoadError, match="DX999"):
            MedicalKG.from_names(tiny_codes, [("DX999", "r", "DX001")])

    def test_duplicates_collapse(self, tiny_codes):
        """Test a repeated fact is stored once."""
        kg = MedicalKG.from_names(tiny_codes, [("DX001", "r", "PR001")] * 3)
        assert len(kg.facts) == 1

    def test_rejects_out_of_range_facts(self, tiny_codes):
        """Test facts must reference known codes and relations."""
        with pytest.raises(ContractError, match="unknown code"):
            MedicalKG(tiny_codes, ["r"], [Triplet(head=1, relation=0, tail=42)])
        with pytest.raises(ContractError, match="unknown relation"):
            MedicalKG(tiny_codes, ["r"], [Triplet(head=1, relation=3, tail=2)])

    def test_inverse_relation_ids(self, toy_kg):
        """Test inverses swap endpoints and offset relation ids."""
        inverse = [f.key() for f in toy_kg.inverse_facts()]
        assert inverse == [(6, 2, 1), (3, 3, 1), (7, 2, 2)]

    def test_edge_index_layout(self, toy_kg):
        """Test forward edges, then inverses, then one self-loop per real code."""
        src, rel, dst = toy_kg.edge_index()
        assert len(src) == 2 * 3 + 7
        np.testing.assert_array_equal(src[:3], [1, 1, 2])
        np.testing.assert_array_equal(dst[3:6], [1, 1, 2])
        np.testing.assert_array_equal(src[6:], np.arange(1, 8))
        np.testing.assert_array_equal(dst[6:], np.arange(1, 8))
        assert set(rel[6:]) == {4}
        assert 0 not in src and 0 not in dst

    def test_empty_graph_has_only_loops(self, tiny_codes):
        """Test an empty KG still yields self-loops."""
        src, rel, _ = MedicalKG.empty(tiny_codes).edge_index()
        assert len(src) == 7
        assert set(rel) == {0}

    def test_edge_kinds(self, toy_kg):
        """Test facts are classified by unordered endpoint kinds."""
        assert [toy_kg.edge_kind(f) for f in toy_kg.facts] == [EdgeKind.DM, EdgeKind.DD, EdgeKind.DM]
        counts = toy_kg.kind_counts()
        assert counts["DM"] == 2 and counts["DD"] == 1 and counts["PP"] == 0

    def test_ablate_edges(self, toy_kg):
        """Test ablation removes facts of the named kinds and keeps relations."""
        ablated = toy_kg.ablate_edges([EdgeKind.DM])
        assert [f.key() for f in ablated.facts] == [(1, 1, 3)]
        assert ablated.relations == toy_kg.relations
        assert len(toy_kg.facts) == 3
        assert toy_kg.ablate_edges(["DD", "DM"]).facts == ()

    def test_ablate_needs_kinds(self, toy_kg):
        """Test an empty ablation raises ContractError."""
        with pytest.raises(ContractError):
            toy_kg.ablate_edges([])

    def test_fingerprint(self, toy_kg, tiny_codes):
        """Test equal facts share a fingerprint regardless of input order."""
        shuffled = MedicalKG.from_names(tiny_codes, list(reversed(toy_kg.named_facts())))
        assert shuffled.fingerprint() == toy_kg.fingerprint()
        assert toy_kg.fingerprint() != toy_kg.ablate_edges(["DD"]).fingerprint()


@pytest.mark.fast
class TestCandidatePool:
    """Tests for relation interning."""

    def test_intern_normalizes_whitespace(self, tiny_codes):
        """Test relation strings are interned after collapsing whitespace."""
        pool = CandidatePool(codes=tiny_codes)
        assert pool.intern("is  treated\twith") == pool.intern("is treated with") == 0
        t = pool.add(1, "is treated with", 6)
        assert pool.text(t) == "DX001 is treated with RX001"
        assert len(pool) == 1


@pytest.mark.fast
class TestKGFiles:
    """Tests for save_kg / load_kg."""

    def test_roundtrip(self, toy_kg, tiny_codes, tmp_path):
        """Test a saved graph loads back equal, relation ids included."""
        path = tmp_path / "kg.tsv"
        save_kg(toy_kg, path)
        assert load_kg(path, tiny_codes) == toy_kg

    def test_file_layout(self, toy_kg, tmp_path):
        """Test header, relation directives and tab-separated facts."""
        path = tmp_path / "kg.tsv"
        save_kg(toy_kg, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# 8 entities, 2 relations, 3 facts")
        assert lines[1:3] == ["#relation\tis treated with", "#relation\tis a subtype of"]
        assert lines[3] == "DX001\tis treated with\tRX001"

    def test_relation_without_facts_survives(self, tiny_codes, tmp_path):
        """Test declared relations keep their ids with no facts."""
        kg = MedicalKG(tiny_codes, ["a", "b"], [Triplet(head=1, relation=1, tail=2)])
        path = tmp_path / "kg.tsv"
        save_kg(kg, path)
        loaded = load_kg(path, tiny_codes)
        assert loaded.relations == ("a", "b")
        assert loaded.facts[0].relation == 1

    def test_comments_blanks_and_duplicates(self, tiny_codes, tmp_path, caplog):
        """Test comments and blank lines are skipped and duplicates dropped."""
        path = tmp_path / "kg.tsv"
        path.write_text(
            "# hand-written\n\nDX001\ttreats\tRX001\nDX001\ttreats\tRX001\n"
        )
        kg = load_kg(path, tiny_codes)
        assert len(kg.facts) == 1
        assert "dropped 1 duplicate" in caplog.text

    def test_missing_file(self, tiny_codes, tmp_path):
        """Test a missing file raises KGLoadError."""
        with pytest.raises(KGLoadError, match="not found"):
            load_kg(tmp_path / "absent.tsv", tiny_codes)

    @pytest.mark.parametrize(
        "line,message",
        [
            ("DX001\tRX001", "expected head"),
            ("DX001\tr\tXX", "unknown code name"),
            ("DX001\tr\tDX001", "self-referencing"),
        ],
    )
    def test_bad_lines(self, tiny_codes, tmp_path, line, message):
        """Test malformed lines name the file and line number."""
        path = tmp_path / "kg.tsv"
        path.write_text(f"# header\n{line}\n")
        with pytest.raises(KGLoadError, match=message) as info:
            load_kg(path, tiny_codes)
        assert "kg.tsv:2" in info.value.message
