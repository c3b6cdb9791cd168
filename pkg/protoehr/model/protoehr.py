"""The full hierarchical prototype model.

Forward pass for a batch of samples:

1. CompGCN over the KG gives code representations; the code prototype bank
   learns from and infuses all non-padding codes.
2. Each visit is the mean of its (infused) codes; the visit bank runs over
   every visit in the batch.
3. A causal transformer over each patient's visits gives the patient vector
   (last position); the patient bank runs over the batch of patients.
4. Fusion attends the patient vector over the three enhanced banks and the
   task head projects the fused vector.

Ablations (``ModelConfig.ablation``): ``kg`` runs CompGCN on a graph with no
facts; ``<level>-proto`` skips that level's bank (objects pass through) and
drops it from fusion; ``hf`` feeds the patient vector to the head directly.

Examples:
    >>> model = ProtoEHRModel(kg, ModelConfig(dim=16), Task.MORTALITY, seed=0)
    >>> batch = Batch.from_samples(samples, Task.MORTALITY)
    >>> out = model.forward(batch)
    >>> out.logits.shape, out.trace.beta.shape
    ((8, 1), (8, 3))

Tests:
    - tests/unit/test_model.py
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from protoehr.config import LEVELS, Ablation, Level, ModelConfig, Task, is_binary
from protoehr.core import ops
from protoehr.core.errors import ContractError
from protoehr.core.module import Module
from protoehr.core.seeding import make_rng
from protoehr.core.tensors import Tensor, no_grad
from protoehr.kg.graph import MedicalKG
from protoehr.model.encoders import (
    CompGCN,
    LevelOutput,
    PrototypeBank,
    VisitTransformer,
    pool_visits,
)
from protoehr.model.fusion import Fusion, FusionTrace, TaskHead, probabilities, task_loss
from protoehr.schemas.ehr import TaskSample

logger = logging.getLogger(__name__)

_SKIPPED_LEVEL = {
    Ablation.NO_CODE_PROTO: Level.CODE,
    Ablation.NO_VISIT_PROTO: Level.VISIT,
    Ablation.NO_PATIENT_PROTO: Level.PATIENT,
}


@dataclass
class Batch:
    """Samples packed for one forward pass."""

    sample_ids: list[str]
    patient_ids: list[int]
    prefix_lens: list[int]
    visits: list[tuple[tuple[int, ...], ...]]
    labels: np.ndarray
    raw_labels: list[int | tuple[int, ...]]

    @classmethod
    def from_samples(cls, samples: Sequence[TaskSample], task: Task) -> Batch:
        if not samples:
            raise ContractError("cannot batch zero samples")
        if task == Task.LENGTH_OF_STAY:
            labels = np.array([s.label for s in samples], dtype=np.int64)
        elif is_binary(task):
            labels = np.array([[s.label] for s in samples], dtype=np.float64)
        else:
            labels = np.array([s.label for s in samples], dtype=np.float64)
        return cls(
            sample_ids=[s.sample_id for s in samples],
            patient_ids=[s.patient_id for s in samples],
            prefix_lens=[s.prefix_len for s in samples],
            visits=[s.visits for s in samples],
            labels=labels,
            raw_labels=[s.label for s in samples],
        )

    @property
    def lengths(self) -> list[int]:
        return [len(v) for v in self.visits]

    def __len__(self) -> int:
        return len(self.sample_ids)


@dataclass
class ForwardOutput:
    logits: Tensor
    trace: FusionTrace
    levels: dict[Level, LevelOutput]


class ProtoEHRModel(Module):
    """All learnable parameters for one task."""

    def __init__(self, kg: MedicalKG, cfg: ModelConfig, task: Task, seed: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        self.task = task
        self.kg = kg.with_facts([]) if cfg.ablation == Ablation.NO_KG else kg
        self.edges = self.kg.edge_index()
        self.skipped = _SKIPPED_LEVEL.get(cfg.ablation)
        self.use_fusion = cfg.ablation != Ablation.NO_HF

        rng = make_rng(seed, "init")
        self.gcn = CompGCN(
            n_entities=kg.n_entities,
            n_relations=kg.n_relations,
            dim=cfg.dim,
            n_layers=cfg.compgcn_layers,
            rng=rng,
            mean_norm=cfg.gcn_mean_norm,
        )
        sizes = {
            Level.CODE: cfg.code_protos,
            Level.VISIT: cfg.visit_protos,
            Level.PATIENT: cfg.patient_protos,
        }
        fused_levels = [lvl for lvl in LEVELS if lvl != self.skipped]
        self.banks = {lvl.value: PrototypeBank(sizes[lvl], cfg.dim, rng) for lvl in fused_levels}
        self.transformer = VisitTransformer(
            dim=cfg.dim,
            depth=cfg.transformer_depth,
            heads=cfg.heads,
            ffn_mult=cfg.ffn_mult,
            max_visits=cfg.max_visits,
            rng=rng,
            dropout=cfg.dropout,
        )
        self.fusion = (
            Fusion(cfg.dim, rng, tau=cfg.tau, levels=fused_levels) if self.use_fusion else None
        )
        self.head = TaskHead(cfg.dim, task, rng)
        logger.debug(
            f"ProtoEHRModel({task.value}, ablation={cfg.ablation.value}): "
            f"{self.num_parameters()} parameters"
        )

    def _level(
        self, level: Level, objects: Tensor, rng: np.random.Generator | None
    ) -> tuple[Tensor, LevelOutput | None]:
        if level == self.skipped:
            return objects, None
        out = self.banks[level.value].level_encode(objects)
        return ops.dropout(out.objects, self.cfg.dropout, self.training, rng), out

    def forward(self, batch: Batch, rng: np.random.Generator | None = None) -> ForwardOutput:
        """Logits (B×out) with the fusion trace and per-level prototype outputs.

        Args:
            batch: Packed samples.
            rng: Dropout stream; required in training mode when dropout > 0.
        """
        levels: dict[Level, LevelOutput] = {}
        codes = self.gcn.forward(self.edges)
        code_objects, out = self._level(Level.CODE, codes[1:], rng)
        if out is not None:
            levels[Level.CODE] = out
        pad = Tensor(np.zeros((1, self.cfg.dim)))
        code_table = ops.concat([pad, code_objects], axis=0)

        flat_visits = [visit for sample in batch.visits for visit in sample]
        visit_reps = pool_visits(code_table, flat_visits)
        visit_objects, out = self._level(Level.VISIT, visit_reps, rng)
        if out is not None:
            levels[Level.VISIT] = out

        patients = self.transformer.forward(visit_objects, batch.lengths, rng)
        patient_objects, out = self._level(Level.PATIENT, patients, rng)
        if out is not None:
            levels[Level.PATIENT] = out

        if self.fusion is None:
            fused = patient_objects
            trace = FusionTrace(beta=np.zeros((len(batch), len(LEVELS))))
        else:
            fused, trace = self.fusion.fuse(
                patient_objects, {lvl: o.prototypes for lvl, o in levels.items()}
            )
        return ForwardOutput(logits=self.head.forward(fused), trace=trace, levels=levels)

    def loss(
        self,
        batch: Batch,
        rng: np.random.Generator | None = None,
        pos_weight: float | None = None,
    ) -> tuple[Tensor, ForwardOutput]:
        out = self.forward(batch, rng)
        return task_loss(out.logits, batch.labels, self.task, pos_weight), out

    def predict_proba(self, batch: Batch) -> tuple[np.ndarray, FusionTrace]:
        """Eval-mode probabilities without building a graph."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = self.forward(batch)
        finally:
            self.train(was_training)
        return probabilities(out.logits.data, self.task), out.trace
