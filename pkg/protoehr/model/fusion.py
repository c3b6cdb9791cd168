"""Hierarchical fusion, task head and task losses.

For each level t with enhanced prototypes Ĥ^t (m_t×d), the patient vector p
attends over the prototypes::

    p^t = softmax((p W_Q^t)(Ĥ^t W_K^t)^T / sqrt(d)) (Ĥ^t W_V^t)
    β_t = softmax_t(p^t · w_F / τ)
    p_final = Σ_t β_t p^t

Examples:
    >>> fusion = Fusion(dim=8, rng=make_rng(0, "fusion"))
    >>> p_final, trace = fusion.fuse(p, {Level.CODE: hc, Level.VISIT: hv, Level.PATIENT: hp})
    >>> trace.beta.sum(axis=1)
    array([1., 1.])

Tests:
    - tests/unit/test_fusion.py
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from protoehr.config import LEVELS, TASK_OUTPUT_DIMS, Level, Task, is_binary, is_multilabel
from protoehr.core import ops
from protoehr.core.errors import ConfigError, ContractError
from protoehr.core.module import Module, normal_init, xavier_uniform, zeros
from protoehr.core.tensors import Tensor
from protoehr.model.encoders import linear


@dataclass
class FusionTrace:
    """Per-sample fusion weights and prototype attention.

    ``beta`` is B×3 in code/visit/patient order; a level left out of fusion
    has weight 0 and no attention entry.
    """

    beta: np.ndarray
    attention: dict[Level, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.beta.shape[0])


class Fusion(Module):
    """Cross-attention of the patient vector against each level's prototypes."""

    def __init__(
        self,
        dim: int,
        rng: np.random.Generator,
        tau: float = 1.0,
        levels: Sequence[Level] = LEVELS,
    ) -> None:
        super().__init__()
        if tau <= 0:
            raise ConfigError(f"fusion temperature must be positive, got {tau}")
        if not levels:
            raise ConfigError("fusion needs at least one level")
        self.tau = tau
        self.levels = tuple(levels)
        self.w_q = {lvl.value: xavier_uniform(rng, dim, dim) for lvl in self.levels}
        self.w_k = {lvl.value: xavier_uniform(rng, dim, dim) for lvl in self.levels}
        self.w_v = {lvl.value: xavier_uniform(rng, dim, dim) for lvl in self.levels}
        self.w_f = normal_init(rng, dim, std=1.0 / math.sqrt(dim))

    def attend(self, p: Tensor, prototypes: Tensor, level: Level) -> tuple[Tensor, Tensor]:
        """p^t (B×d) and its attention over the level's prototypes (B×m)."""
        if prototypes.shape[0] == 0:
            raise ContractError(f"{level.value} prototype bank is empty")
        key = level.value
        scores = ((p @ self.w_q[key]) @ (prototypes @ self.w_k[key]).T) * (
            1.0 / math.sqrt(p.shape[1])
        )
        attention = ops.softmax(scores, axis=1)
        return attention @ (prototypes @ self.w_v[key]), attention

    def fuse(self, p: Tensor, prototypes: Mapping[Level, Tensor]) -> tuple[Tensor, FusionTrace]:
        batch = p.shape[0]
        per_level = []
        attention: dict[Level, np.ndarray] = {}
        for level in self.levels:
            p_t, attn = self.attend(p, prototypes[level], level)
            per_level.append(p_t)
            attention[level] = attn.data
        w_f = ops.reshape(self.w_f, (self.w_f.shape[0], 1))
        logits = ops.concat([p_t @ w_f for p_t in per_level], axis=1) * (1.0 / self.tau)
        beta = ops.softmax(logits, axis=1)
        fused = ops.scale_rows(per_level[0], beta[:, 0])
        for i in range(1, len(per_level)):
            fused = fused + ops.scale_rows(per_level[i], beta[:, i])

        full_beta = np.zeros((batch, len(LEVELS)))
        for i, level in enumerate(self.levels):
            full_beta[:, LEVELS.index(level)] = beta.data[:, i]
        return fused, FusionTrace(beta=full_beta, attention=attention)


class TaskHead(Module):
    """Linear projection to the task's output width."""

    def __init__(self, dim: int, task: Task, rng: np.random.Generator) -> None:
        super().__init__()
        self.task = task
        self.w = xavier_uniform(rng, dim, TASK_OUTPUT_DIMS[task])
        self.b = zeros(TASK_OUTPUT_DIMS[task])

    def forward(self, p_final: Tensor) -> Tensor:
        return linear(p_final, self.w, self.b)


def predict(p_final: Tensor, head: TaskHead) -> np.ndarray:
    """Probabilities: sigmoid per output for binary and multi-label tasks, softmax for LoS."""
    logits = head.forward(p_final)
    return probabilities(logits.data, head.task)


def probabilities(logits: np.ndarray, task: Task) -> np.ndarray:
    if is_binary(task) or is_multilabel(task):
        return ops.stable_sigmoid(np.asarray(logits, dtype=np.float64))
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs: np.ndarray = e / e.sum(axis=1, keepdims=True)
    return probs


def task_loss(
    logits: Tensor, labels: np.ndarray, task: Task, pos_weight: float | None = None
) -> Tensor:
    """BCE (mean over outputs and batch) or categorical cross-entropy for LoS.

    Raises:
        ContractError: If the labels do not match the output shape.
    """
    if task == Task.LENGTH_OF_STAY:
        return ops.cross_entropy(logits, labels)
    return ops.binary_cross_entropy_with_logits(logits, labels, pos_weight=pos_weight)
