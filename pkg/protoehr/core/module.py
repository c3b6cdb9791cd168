"""Parameter containers.

A Module owns Parameters (leaf tensors that require gradients) and child
Modules as plain attributes; lists and dicts of either are walked too.
Parameter names are dotted attribute paths, e.g. ``encoder.layers.0.w_ent``.

Tests:
    - tests/unit/test_module.py
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from typing import Any

import numpy as np

from protoehr.core.errors import CheckpointError
from protoehr.core.tensors import Tensor

EMBEDDING_STD = 0.02


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data: Any, name: str | None = None) -> None:
        super().__init__(data, requires_grad=True, name=name)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Parameter:
    """Glorot-uniform initialized fan_in×fan_out weight."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


def normal_init(rng: np.random.Generator, *shape: int, std: float = EMBEDDING_STD) -> Parameter:
    return Parameter(rng.normal(0.0, std, size=shape))


def zeros(*shape: int) -> Parameter:
    return Parameter(np.zeros(shape))


def ones(*shape: int) -> Parameter:
    return Parameter(np.ones(shape))


class Module:
    """Base class for model components."""

    def __init__(self) -> None:
        self.training = True

    def _children(self) -> Iterator[tuple[str, Parameter | Module]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{key}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, child in self._children():
            if isinstance(child, Parameter):
                yield f"{prefix}{name}", child
            else:
                yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def modules(self) -> Iterator[Module]:
        yield self
        for _, child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> Module:
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter value, in registration order."""
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Replace parameter values; names and shapes must match exactly.

        Raises:
            CheckpointError: On missing, unexpected or mis-shaped entries.
        """
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise CheckpointError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()
