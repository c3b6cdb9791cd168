"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a float64 numpy array. Operations in ``protoehr.core.ops``
record a Node on their output (op tag, input tensors and a backward rule) when
any input requires gradients, so every forward pass builds an acyclic compute
graph that ``backward`` walks once in reverse topological order.

Gradient semantics:
    - Only leaf tensors (``requires_grad=True`` and no node) keep ``.grad``.
    - Gradients accumulate: calling ``backward`` twice on the same graph
      without ``zero_grad`` leaves exactly twice the gradient.

Examples:
    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> x.sum().backward()
    >>> x.grad
    array([1., 1., 1.])

Tests:
    - tests/unit/test_tensors.py
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Iterator, Sequence
from typing import Any

import numpy as np

from protoehr.core.errors import ContractError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_grad_enabled = True


def is_grad_enabled() -> bool:
    """Whether operations currently record compute-graph nodes."""
    return _grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, metrics)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Node:
    """Compute-graph node attached to a non-leaf tensor.

    Attributes:
        op: Operation tag (e.g. "matmul")
        inputs: Input tensors, in argument order
        backward_fn: Maps the output gradient to one gradient per input
        meta: Operation metadata (e.g. the dropout seed)
    """

    __slots__ = ("op", "inputs", "backward_fn", "meta")

    def __init__(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        backward_fn: BackwardFn,
        meta: dict[str, Any] | None = None,
    ) -> None:
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.meta = meta or {}

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, inputs={len(self.inputs)})"


class Tensor:
    """N-dimensional float64 array participating in a compute graph.

    Attributes:
        data: The forward value
        requires_grad: Whether gradients flow to / through this tensor
        grad: Accumulated gradient (leaves only), same shape as data
        node: Graph node for non-leaf tensors, None for leaves
        name: Optional label used in diagnostics
    """

    __array_priority__ = 1000

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        node: Node | None = None,
    ) -> None:
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node = node
        self.name = name

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    @property
    def T(self) -> Tensor:
        return _ops.transpose(self)

    def numpy(self) -> np.ndarray:
        """Return a copy of the forward value."""
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        """A leaf sharing this tensor's value but outside any graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        op = f", op={self.node.op!r}" if self.node else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{op}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- graph -------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar tensor. See :func:`backward`."""
        backward(self)

    # -- operators ---------------------------------------------------------

    def __add__(self, other: Tensor | float) -> Tensor:
        return _ops.add(self, other)

    def __radd__(self, other: float) -> Tensor:
        return _ops.add(self, other)

    def __sub__(self, other: Tensor | float) -> Tensor:
        return _ops.sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        return _ops.add(_ops.neg(self), other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        return _ops.mul(self, other)

    def __rmul__(self, other: float) -> Tensor:
        return _ops.mul(self, other)

    def __truediv__(self, other: Tensor | float) -> Tensor:
        return _ops.div(self, other)

    def __neg__(self) -> Tensor:
        return _ops.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return _ops.matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        return _ops.getitem(self, key)

    def sum(self, axis: int | None = None) -> Tensor:
        return _ops.sum(self, axis)

    def mean(self, axis: int | None = None) -> Tensor:
        return _ops.mean(self, axis)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def tanh(self) -> Tensor:
        return _ops.tanh(self)

    def relu(self) -> Tensor:
        return _ops.relu(self)

    def sigmoid(self) -> Tensor:
        return _ops.sigmoid(self)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Post-order of the graph below ``root`` (inputs before outputs)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf below ``loss``.

    Args:
        loss: Single-element tensor produced by differentiable operations.

    Raises:
        ContractError: If ``loss`` is not scalar or carries no graph.
    """
    if loss.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward() called on a tensor without a compute graph")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(_topological_order(loss)):
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor.node is None:
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        input_grads = tensor.node.backward_fn(grad)
        for parent, parent_grad in zip(tensor.node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad


# Imported last: ops depends on Tensor being defined.
from protoehr.core import ops as _ops  # noqa: E402
