"""Hierarchical encoders: code graph, visit pooling, visit sequence, prototypes.

Shapes (row-vector convention, d = model dim):

    CompGCN         entity table N×d -> code representations N×d
    pool_visits     codes per visit  -> one d-vector per visit (mean)
    VisitTransformer visits per patient -> one d-vector per patient (last visit)
    PrototypeBank   objects n×d -> enhanced prototypes m×d, infused objects n×d

Prototype learning (cross-attention of prototypes over objects)::

    Ĥ = softmax_n((H W_Q)(X' W_K)^T / sqrt(d)) (X' W_V)

Prototype infusion (cosine similarity, softmax over prototypes)::

    α_ij = softmax_j(cos(x'_i, ĥ_j));  x_i = x'_i + (1/m) Σ_j α_ij (ĥ_j W_I)

Examples:
    >>> bank = PrototypeBank(m=4, dim=8, rng=make_rng(0, "bank"))
    >>> out = bank.level_encode(Tensor(np.random.randn(5, 8)))
    >>> out.objects.shape, out.prototypes.shape
    ((5, 8), (4, 8))

Tests:
    - tests/unit/test_encoders.py
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from protoehr.core import ops
from protoehr.core.errors import ConfigError, ContractError
from protoehr.core.module import Module, Parameter, normal_init, ones, xavier_uniform, zeros
from protoehr.core.tensors import Tensor

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "identity")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x W (+ b)`` for an n×d_in input."""
    out = x @ w
    if b is not None:
        out = out + ops.expand_rows(b, x.shape[0])
    return out


# =============================================================================
# Code level: CompGCN
# =============================================================================


class CompGCNLayer(Module):
    """One multi-relational graph convolution with circular-correlation composition."""

    def __init__(self, dim: int, rng: np.random.Generator, activation: str = "tanh") -> None:
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.activation = activation
        self.w_ent = xavier_uniform(rng, dim, dim)
        self.w_rel = xavier_uniform(rng, dim, dim)

    def forward(
        self,
        entities: Tensor,
        relations: Tensor,
        edges: tuple[np.ndarray, np.ndarray, np.ndarray],
        inv_degree: np.ndarray | None = None,
    ) -> tuple[Tensor, Tensor]:
        src, rel, dst = edges
        messages = ops.circular_correlation(
            ops.gather_rows(entities, src), ops.gather_rows(relations, rel)
        )
        summed = ops.scatter_add_rows(messages, dst, entities.shape[0])
        if inv_degree is not None:
            summed = ops.scale_rows(summed, Tensor(inv_degree))
        # W Σφ evaluated as (Σφ) W
        updated = summed @ self.w_ent
        if self.activation == "tanh":
            updated = ops.tanh(updated)
        return updated, relations @ self.w_rel


class CompGCN(Module):
    """Entity and relation embedding tables plus a stack of CompGCN layers.

    Relation table rows: ``0..R-1`` forward relations, ``R..2R-1`` inverses,
    ``2R`` the self-loop. Entity row 0 is padding: it starts at zero, has no
    edges and so stays zero through every layer.
    """

    def __init__(
        self,
        n_entities: int,
        n_relations: int,
        dim: int,
        n_layers: int,
        rng: np.random.Generator,
        activation: str = "tanh",
        mean_norm: bool = False,
    ) -> None:
        super().__init__()
        if n_layers < 1:
            raise ConfigError("CompGCN needs at least one layer")
        table = rng.normal(0.0, 0.02, size=(n_entities, dim))
        table[0] = 0.0
        self.entity_emb = Parameter(table)
        self.relation_emb = normal_init(rng, 2 * n_relations + 1, dim)
        self.layers = [CompGCNLayer(dim, rng, activation) for _ in range(n_layers)]
        self.mean_norm = mean_norm

    def forward(self, edges: tuple[np.ndarray, np.ndarray, np.ndarray]) -> Tensor:
        inv_degree = None
        if self.mean_norm:
            degree = np.bincount(edges[2], minlength=self.entity_emb.shape[0]).astype(np.float64)
            inv_degree = np.where(degree > 0, 1.0 / np.maximum(degree, 1.0), 0.0)
        entities: Tensor = self.entity_emb
        relations: Tensor = self.relation_emb
        for layer in self.layers:
            entities, relations = layer.forward(entities, relations, edges, inv_degree)
        return entities


# =============================================================================
# Visit level: pooling
# =============================================================================


def pool_visit(code_reps: Tensor) -> Tensor:
    """Mean of one visit's k×d code representations."""
    if code_reps.ndim != 2 or code_reps.shape[0] == 0:
        raise ContractError("pool_visit needs a nonempty k×d matrix")
    return ops.mean(code_reps, axis=0)


def pool_visits(code_table: Tensor, visits: Sequence[Sequence[int]]) -> Tensor:
    """Mean code representation of every visit, stacked into n_visits×d.

    Raises:
        ContractError: If a visit has no codes.
    """
    counts = np.array([len(v) for v in visits], dtype=np.int64)
    if len(counts) == 0 or counts.min() == 0:
        raise ContractError("cannot pool an empty visit")
    flat = np.concatenate([np.asarray(v, dtype=np.int64) for v in visits])
    owner = np.repeat(np.arange(len(visits)), counts)
    summed = ops.scatter_add_rows(ops.gather_rows(code_table, flat), owner, len(visits))
    return ops.scale_rows(summed, Tensor(1.0 / counts))


# =============================================================================
# Patient level: transformer over visits
# =============================================================================


def sequence_layout(lengths: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positions, owner ids and last-row indices of flattened sequences."""
    lengths_arr = np.asarray(lengths, dtype=np.int64)
    owner = np.repeat(np.arange(len(lengths_arr)), lengths_arr)
    starts = np.concatenate([[0], np.cumsum(lengths_arr)[:-1]])
    positions = np.arange(int(lengths_arr.sum())) - np.repeat(starts, lengths_arr)
    last = starts + lengths_arr - 1
    return positions, owner, last


def block_causal_mask(positions: np.ndarray, owner: np.ndarray, causal: bool = True) -> np.ndarray:
    """Attention mask of flattened sequences: same sequence, and no peeking ahead."""
    mask = owner[:, None] == owner[None, :]
    if causal:
        mask &= positions[None, :] <= positions[:, None]
    return mask


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with h heads and an output projection."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.w_q = xavier_uniform(rng, dim, dim)
        self.w_k = xavier_uniform(rng, dim, dim)
        self.w_v = xavier_uniform(rng, dim, dim)
        self.w_o = xavier_uniform(rng, dim, dim)
        self.b_o = zeros(dim)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        dim = x.shape[1]
        dh = dim // self.heads
        q, k, v = x @ self.w_q, x @ self.w_k, x @ self.w_v
        outs = []
        for h in range(self.heads):
            cols = (slice(None), slice(h * dh, (h + 1) * dh))
            scores = (q[cols] @ k[cols].T) * (1.0 / math.sqrt(dh))
            outs.append(ops.softmax(scores, axis=1, mask=mask) @ v[cols])
        joined = outs[0] if len(outs) == 1 else ops.concat(outs, axis=1)
        return linear(joined, self.w_o, self.b_o)


class TransformerLayer(Module):
    """Post-norm encoder layer: attention and feed-forward sub-layers."""

    def __init__(self, dim: int, heads: int, ffn_mult: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.w1 = xavier_uniform(rng, dim, ffn_mult * dim)
        self.b1 = zeros(ffn_mult * dim)
        self.w2 = xavier_uniform(rng, ffn_mult * dim, dim)
        self.b2 = zeros(dim)
        self.ln1_g, self.ln1_b = ones(dim), zeros(dim)
        self.ln2_g, self.ln2_b = ones(dim), zeros(dim)

    def forward(
        self, x: Tensor, mask: np.ndarray, p: float, rng: np.random.Generator | None
    ) -> Tensor:
        attended = ops.dropout(self.attn.forward(x, mask), p, self.training, rng)
        h = ops.layer_norm(x + attended, self.ln1_g, self.ln1_b)
        ffn = linear(ops.relu(linear(h, self.w1, self.b1)), self.w2, self.b2)
        ffn = ops.dropout(ffn, p, self.training, rng)
        return ops.layer_norm(h + ffn, self.ln2_g, self.ln2_b)


class VisitTransformer(Module):
    """Learned positions plus a stack of transformer layers; returns last-visit rows."""

    def __init__(
        self,
        dim: int,
        depth: int,
        heads: int,
        ffn_mult: int,
        max_visits: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        causal: bool = True,
    ) -> None:
        super().__init__()
        self.pos_emb = normal_init(rng, max_visits, dim)
        self.layers = [TransformerLayer(dim, heads, ffn_mult, rng) for _ in range(depth)]
        self.max_visits = max_visits
        self.dropout = dropout
        self.causal = causal

    def encode(
        self,
        visit_reps: Tensor,
        lengths: Sequence[int],
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """All positions, flattened like ``visit_reps`` (sum(lengths)×d).

        Raises:
            ConfigError: If a sequence exceeds the positional table.
        """
        if max(lengths) > self.max_visits:
            raise ConfigError(
                f"sequence of {max(lengths)} visits exceeds max_visits={self.max_visits}"
            )
        if visit_reps.shape[0] != sum(lengths):
            raise ContractError("visit representations do not match the sequence lengths")
        positions, owner, _ = sequence_layout(lengths)
        mask = block_causal_mask(positions, owner, self.causal)
        x = visit_reps + ops.gather_rows(self.pos_emb, positions)
        for layer in self.layers:
            x = layer.forward(x, mask, self.dropout, rng)
        return x

    def forward(
        self,
        visit_reps: Tensor,
        lengths: Sequence[int],
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """One d-vector per sequence: the final position's output."""
        _, _, last = sequence_layout(lengths)
        return ops.gather_rows(self.encode(visit_reps, lengths, rng), last)


def encode_patient(visit_reps: Tensor, transformer: VisitTransformer) -> Tensor:
    """Single-patient convenience: t×d visit representations -> d-vector."""
    return transformer.forward(visit_reps, [visit_reps.shape[0]])[0]


# =============================================================================
# Prototypes
# =============================================================================


@dataclass
class LevelOutput:
    """Prototype-infused objects, enhanced prototypes and both attention maps."""

    objects: Tensor
    prototypes: Tensor
    learn_attention: np.ndarray  # m×n, rows sum to 1
    infuse_attention: np.ndarray  # n×m, rows sum to 1


class PrototypeBank(Module):
    """m learnable prototypes with their attention and infusion projections."""

    def __init__(self, m: int, dim: int, rng: np.random.Generator) -> None:
        super().__init__()
        if m < 1:
            raise ConfigError("a prototype bank needs at least one prototype")
        self.h = normal_init(rng, m, dim)
        self.w_q = xavier_uniform(rng, dim, dim)
        self.w_k = xavier_uniform(rng, dim, dim)
        self.w_v = xavier_uniform(rng, dim, dim)
        self.w_i = xavier_uniform(rng, dim, dim)

    @property
    def m(self) -> int:
        return self.h.shape[0]

    def learn(self, objects: Tensor) -> tuple[Tensor, Tensor]:
        """Enhanced prototypes (m×d) and the m×n attention over objects."""
        if objects.ndim != 2 or objects.shape[0] == 0:
            raise ContractError("prototype learning needs at least one object")
        dim = objects.shape[1]
        scores = ((self.h @ self.w_q) @ (objects @ self.w_k).T) * (1.0 / math.sqrt(dim))
        attention = ops.softmax(scores, axis=1)
        return attention @ (objects @ self.w_v), attention

    def infuse(self, objects: Tensor, prototypes: Tensor) -> tuple[Tensor, Tensor]:
        """Objects plus their similarity-weighted prototype summary (n×d), and α (n×m)."""
        alpha = ops.softmax(ops.cosine_similarity(objects, prototypes), axis=1)
        summary = (alpha @ (prototypes @ self.w_i)) * (1.0 / prototypes.shape[0])
        return objects + summary, alpha

    def level_encode(self, objects: Tensor) -> LevelOutput:
        enhanced, learn_attn = self.learn(objects)
        infused, alpha = self.infuse(objects, enhanced)
        return LevelOutput(
            objects=infused,
            prototypes=enhanced,
            learn_attention=learn_attn.data,
            infuse_attention=alpha.data,
        )


def prototype_learn(objects: Tensor, bank: PrototypeBank) -> Tensor:
    return bank.learn(objects)[0]


def prototype_infuse(objects: Tensor, prototypes: Tensor, bank: PrototypeBank) -> Tensor:
    return bank.infuse(objects, prototypes)[0]


def level_encode(objects: Tensor, bank: PrototypeBank) -> LevelOutput:
    return bank.level_encode(objects)
