"""Unit tests for the hierarchical encoders.

Tests for protoehr/model/encoders.py - CompGCN, visit pooling, the visit
transformer and prototype banks, checked against explicit loops.

Run with:
    pytest tests/unit/test_encoders.py -v -m fast
"""

import numpy as np
import pytest

from protoehr.core.errors import ConfigError, ContractError
from protoehr.core.gradcheck import check_gradients
from protoehr.core.seeding import make_rng
from protoehr.core.tensors import Tensor
from protoehr.model.encoders import (
    CompGCN,
    MultiHeadAttention,
    PrototypeBank,
    VisitTransformer,
    block_causal_mask,
    encode_patient,
    pool_visit,
    pool_visits,
    sequence_layout,
)


def correlate(a, b):
    d = len(a)
    return np.array([sum(a[i] * b[(i + k) % d] for i in range(d)) for k in range(d)])


def softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@pytest.mark.fast
class TestCompGCN:
    """Tests for the code-level graph encoder."""

    def test_layer_matches_edge_loop(self, toy_kg):
        """Test one layer equals tanh((Σ_edges corr(e_src, r_rel)) W)."""
        gcn = CompGCN(toy_kg.n_entities, toy_kg.n_relations, 6, 1, make_rng(0, "gcn"))
        edges = toy_kg.edge_index()
        out = gcn.forward(edges).data

        ent, rel = gcn.entity_emb.data, gcn.relation_emb.data
        summed = np.zeros_like(ent)
        for s, r, t in zip(*edges):
            summed[t] += correlate(ent[s], rel[r])
        np.testing.assert_allclose(out, np.tanh(summed @ gcn.layers[0].w_ent.data), atol=1e-10)

    def test_padding_row_stays_zero(self, toy_kg):
        """Test entity 0 has no edges and stays zero through every layer."""
        gcn = CompGCN(toy_kg.n_entities, toy_kg.n_relations, 8, 3, make_rng(1, "gcn"))
        out = gcn.forward(toy_kg.edge_index()).data
        np.testing.assert_array_equal(out[0], np.zeros(8))
        assert np.abs(out[1:]).sum() > 0

    def test_relation_table_size(self, toy_kg):
        """Test forward, inverse and self-loop relations each get a row."""
        gcn = CompGCN(toy_kg.n_entities, toy_kg.n_relations, 4, 1, make_rng(0, "gcn"))
        assert gcn.relation_emb.shape == (2 * 2 + 1, 4)

    def test_mean_norm_divides_by_degree(self, toy_kg):
        """Test mean normalization divides each row's message sum by its in-degree."""
        gcn = CompGCN(
            toy_kg.n_entities,
            toy_kg.n_relations,
            4,
            1,
            make_rng(2, "gcn"),
            activation="identity",
            mean_norm=True,
        )
        edges = toy_kg.edge_index()
        out = gcn.forward(edges).data
        gcn.mean_norm = False
        raw = gcn.forward(edges).data
        degree = np.bincount(edges[2], minlength=toy_kg.n_entities)
        np.testing.assert_allclose(out[1:], raw[1:] / degree[1:, None], atol=1e-12)

    def test_unknown_activation(self):
        """Test only tanh and identity activations exist."""
        with pytest.raises(ConfigError):
            CompGCN(3, 1, 4, 1, make_rng(0), activation="gelu")

    def test_gradients(self, toy_kg):
        """Test backprop through two layers matches finite differences."""
        gcn = CompGCN(toy_kg.n_entities, toy_kg.n_relations, 4, 2, make_rng(3, "gcn"))
        edges = toy_kg.edge_index()
        weights = Tensor(make_rng(4).normal(size=(toy_kg.n_entities, 4)))
        params = gcn.parameters()
        report = check_gradients(lambda: (gcn.forward(edges) * weights).sum(), params)
        assert report.passed, report.max_rel_error


@pytest.mark.fast
class TestPooling:
    """Tests for visit pooling."""

    def test_pool_visits_is_mean(self, rng):
        """Test each visit is the mean of its code rows."""
        table = Tensor(rng.normal(size=(8, 5)))
        visits = [(1, 4, 6), (2,), (3, 5, 6, 7)]
        out = pool_visits(table, visits).data
        for row, visit in zip(out, visits):
            np.testing.assert_allclose(row, table.data[list(visit)].mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(pool_visit(Tensor(table.data[[1, 4, 6]])).data, out[0])

    def test_empty_visit(self, rng):
        """Test pooling an empty visit is a contract violation."""
        table = Tensor(rng.normal(size=(4, 2)))
        with pytest.raises(ContractError):
            pool_visits(table, [(1,), ()])
        with pytest.raises(ContractError):
            pool_visit(Tensor(np.zeros((0, 2))))


@pytest.mark.fast
class TestVisitTransformer:
    """Tests for the patient-level sequence encoder."""

    def test_sequence_layout(self):
        """Test positions restart per sequence and last rows are found."""
        positions, owner, last = sequence_layout([2, 3])
        np.testing.assert_array_equal(positions, [0, 1, 0, 1, 2])
        np.testing.assert_array_equal(owner, [0, 0, 1, 1, 1])
        np.testing.assert_array_equal(last, [1, 4])

    def test_block_causal_mask(self):
        """Test no attention across sequences or to later positions."""
        positions, owner, _ = sequence_layout([2, 2])
        mask = block_causal_mask(positions, owner)
        expected = np.array(
            [[1, 0, 0, 0], [1, 1, 0, 0], [0, 0, 1, 0], [0, 0, 1, 1]], dtype=bool
        )
        np.testing.assert_array_equal(mask, expected)
        full = block_causal_mask(positions, owner, causal=False)
        assert full[0, 1] and not full[0, 2]

    def test_sequences_independent(self, rng):
        """Test batching two patients equals encoding each alone."""
        tr = VisitTransformer(8, 2, 2, 2, max_visits=4, rng=make_rng(0, "tr"))
        x = rng.normal(size=(5, 8))
        both = tr.forward(Tensor(x), [2, 3]).data
        np.testing.assert_allclose(both[0], encode_patient(Tensor(x[:2]), tr).data, atol=1e-10)
        np.testing.assert_allclose(both[1], encode_patient(Tensor(x[2:]), tr).data, atol=1e-10)

    def test_causal(self, rng):
        """Test later visits do not change earlier positions."""
        tr = VisitTransformer(8, 1, 2, 2, max_visits=4, rng=make_rng(0, "tr"))
        x = rng.normal(size=(3, 8))
        before = tr.encode(Tensor(x), [3]).data
        x[2] += 5.0
        after = tr.encode(Tensor(x), [3]).data
        np.testing.assert_allclose(before[:2], after[:2], atol=1e-12)
        assert not np.allclose(before[2], after[2])

    def test_too_many_visits(self, rng):
        """Test sequences beyond the positional table are rejected."""
        tr = VisitTransformer(4, 1, 1, 2, max_visits=2, rng=make_rng(0, "tr"))
        with pytest.raises(ConfigError, match="max_visits"):
            tr.forward(Tensor(rng.normal(size=(3, 4))), [3])

    def test_length_mismatch(self, rng):
        """Test the row count must match the sequence lengths."""
        tr = VisitTransformer(4, 1, 1, 2, max_visits=4, rng=make_rng(0, "tr"))
        with pytest.raises(ContractError):
            tr.forward(Tensor(rng.normal(size=(3, 4))), [2, 2])

    def test_heads_divide_dim(self):
        """Test attention heads must split the model dimension evenly."""
        with pytest.raises(ConfigError, match="divisible"):
            MultiHeadAttention(6, 4, make_rng(0))

    def test_gradients(self, rng):
        """Test backprop through attention and layer norm matches finite differences."""
        tr = VisitTransformer(4, 1, 2, 2, max_visits=3, rng=make_rng(5, "tr"))
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        weights = Tensor(rng.normal(size=(2, 4)))
        params = {"x": x, **tr.parameters()}
        report = check_gradients(lambda: (tr.forward(x, [2, 3]) * weights).sum(), params)
        assert report.passed, report.max_rel_error


@pytest.mark.fast
class TestPrototypeBank:
    """Tests for prototype learning and infusion."""

    def test_learn_matches_formula(self, rng):
        """Test Ĥ = softmax((H W_Q)(X W_K)^T / sqrt(d)) (X W_V)."""
        bank = PrototypeBank(3, 4, make_rng(0, "bank"))
        x = rng.normal(size=(5, 4))
        enhanced, attention = bank.learn(Tensor(x))
        h, wq, wk, wv = (p.data for p in (bank.h, bank.w_q, bank.w_k, bank.w_v))
        attn = softmax_rows((h @ wq) @ (x @ wk).T / 2.0)
        np.testing.assert_allclose(attention.data, attn, atol=1e-12)
        np.testing.assert_allclose(enhanced.data, attn @ (x @ wv), atol=1e-12)

    def test_infuse_matches_formula(self, rng):
        """Test x_i = x_i + (1/m) Σ_j α_ij (ĥ_j W_I) with cosine α."""
        bank = PrototypeBank(3, 4, make_rng(0, "bank"))
        x, protos = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
        infused, alpha = bank.infuse(Tensor(x), Tensor(protos))
        cos = (x / np.linalg.norm(x, axis=1, keepdims=True)) @ (
            protos / np.linalg.norm(protos, axis=1, keepdims=True)
        ).T
        expected_alpha = softmax_rows(cos)
        np.testing.assert_allclose(alpha.data, expected_alpha, atol=1e-12)
        expected = x + expected_alpha @ (protos @ bank.w_i.data) / 3
        np.testing.assert_allclose(infused.data, expected, atol=1e-12)

    def test_level_encode_shapes(self, rng):
        """Test shapes and that both attention maps are row-stochastic."""
        out = PrototypeBank(4, 8, make_rng(1)).level_encode(Tensor(rng.normal(size=(6, 8))))
        assert out.objects.shape == (6, 8)
        assert out.prototypes.shape == (4, 8)
        assert out.learn_attention.shape == (4, 6)
        np.testing.assert_allclose(out.learn_attention.sum(axis=1), 1.0)
        np.testing.assert_allclose(out.infuse_attention.sum(axis=1), 1.0)

    def test_bank_needs_prototypes_and_objects(self):
        """Test empty banks and empty object sets are rejected."""
        with pytest.raises(ConfigError):
            PrototypeBank(0, 4, make_rng(0))
        with pytest.raises(ContractError):
            PrototypeBank(2, 4, make_rng(0)).learn(Tensor(np.zeros((0, 4))))

    def test_gradients(self, rng):
        """Test backprop through learn-then-infuse matches finite differences."""
        bank = PrototypeBank(2, 3, make_rng(2, "bank"))
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        weights = Tensor(rng.normal(size=(4, 3)))
        params = {"x": x, **bank.parameters()}
        report = check_gradients(lambda: (bank.level_encode(x).objects * weights).sum(), params)
        assert report.passed, report.max_rel_error
