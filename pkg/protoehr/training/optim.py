"""Adam with bias correction and an exponential learning-rate schedule.

Examples:
    >>> opt = Adam(model.parameters())
    >>> opt.step(lr=lr_schedule(epoch=2, lr0=1e-3, gamma=0.9))   # lr = 8.1e-4

Tests:
    - tests/unit/test_optim.py
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from protoehr.core.errors import CheckpointError, ContractError
from protoehr.core.module import Parameter

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    """First and second moments per parameter name, plus the step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPS,
) -> dict[str, np.ndarray]:
    """One Adam update; returns the new parameter values and advances ``state``.

    A missing gradient counts as zero (the moments still decay).
    """
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr}")
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    updated: dict[str, np.ndarray] = {}
    for name, value in params.items():
        g = grads.get(name)
        g = np.zeros_like(value) if g is None else g
        if g.shape != value.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {value.shape}")
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated


def lr_schedule(epoch: int, lr0: float, gamma: float) -> float:
    """``lr0 * gamma ** epoch`` for a 0-based epoch index."""
    if epoch < 0:
        raise ContractError(f"epoch must be non-negative, got {epoch}")
    return lr0 * gamma**epoch


class Adam:
    """Adam over a model's named parameters."""

    def __init__(
        self,
        params: Mapping[str, Parameter],
        beta1: float = BETA1,
        beta2: float = BETA2,
        eps: float = EPS,
    ) -> None:
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float) -> None:
        updated = adam_step(
            {name: p.data for name, p in self.params.items()},
            {name: p.grad for name, p in self.params.items()},
            self.state,
            lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
        for name, value in updated.items():
            self.params[name].data = value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moments keyed ``adam.m.<name>`` / ``adam.v.<name>`` for checkpointing."""
        arrays: dict[str, np.ndarray] = {}
        for name in self.params:
            if name in self.state.m:
                arrays[f"adam.m.{name}"] = self.state.m[name]
                arrays[f"adam.v.{name}"] = self.state.v[name]
        return arrays

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], step: int) -> None:
        """Restore moments written by :meth:`state_arrays`.

        Raises:
            CheckpointError: If a moment refers to an unknown parameter or has the wrong shape.
        """
        state = AdamState(step=step)
        for key, value in arrays.items():
            prefix, _, name = key.partition(".")[2].partition(".")
            if not key.startswith("adam.") or prefix not in ("m", "v"):
                continue
            if name not in self.params:
                raise CheckpointError(f"optimizer state for unknown parameter {name}")
            if value.shape != self.params[name].shape:
                raise CheckpointError(f"optimizer state {key} has shape {value.shape}")
            getattr(state, prefix)[name] = np.array(value, dtype=np.float64)
        if state.m.keys() != state.v.keys():
            raise CheckpointError("optimizer first and second moments cover different parameters")
        self.state = state
