"""Differentiable operations on Tensor.

Every function takes tensors (and plain Python scalars where noted), computes
the forward value with numpy and registers a backward rule when gradients are
required. Broadcasting is limited to tensor-vs-scalar; any other shape
mismatch raises DimensionError naming both shapes.

Examples:
    >>> from protoehr.core.tensors import Tensor
    >>> from protoehr.core import ops
    >>> a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    >>> ops.softmax(a, axis=1).data.sum(axis=1)
    array([1., 1.])

Tests:
    - tests/unit/test_ops.py
"""

from __future__ import annotations

import builtins
from collections.abc import Sequence
from typing import Any

import numpy as np

from protoehr.core.errors import ContractError, DimensionError
from protoehr.core.tensors import BackwardFn, Node, Tensor, is_grad_enabled

Scalar = int | float


def _result(
    data: np.ndarray,
    op: str,
    inputs: tuple[Tensor, ...],
    backward_fn: BackwardFn,
    **meta: Any,
) -> Tensor:
    requires = is_grad_enabled() and builtins.any(t.requires_grad for t in inputs)
    node = Node(op, inputs, backward_fn, meta) if requires else None
    return Tensor(data, requires_grad=requires, node=node)


def as_tensor(value: Tensor | Scalar | np.ndarray) -> Tensor:
    """Wrap a constant as a non-differentiable tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _is_scalar(value: object) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(op, a.shape, b.shape)


def _unbroadcast_scalar(grad: np.ndarray, target: Tensor) -> np.ndarray:
    if target.shape == grad.shape:
        return grad
    return np.asarray(grad.sum()).reshape(target.shape)


def _pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if (a.size == 1 and a.ndim <= 1) or (b.size == 1 and b.ndim <= 1):
        return
    raise DimensionError(op, a.shape, b.shape)


# -- elementwise arithmetic -----------------------------------------------------


def add(a: Tensor, b: Tensor | Scalar) -> Tensor:
    if _is_scalar(b):
        c = float(b)  # type: ignore[arg-type]
        return _result(a.data + c, "add_scalar", (a,), lambda g: (g,))
    assert isinstance(b, Tensor)
    _pair("add", a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast_scalar(g, a), _unbroadcast_scalar(g, b)

    return _result(a.data + b.data, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor | Scalar) -> Tensor:
    if _is_scalar(b):
        return add(a, -float(b))  # type: ignore[arg-type]
    assert isinstance(b, Tensor)
    _pair("sub", a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast_scalar(g, a), _unbroadcast_scalar(-g, b)

    return _result(a.data - b.data, "sub", (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor | Scalar) -> Tensor:
    if _is_scalar(b):
        c = float(b)  # type: ignore[arg-type]
        return _result(a.data * c, "mul_scalar", (a,), lambda g: (g * c,))
    assert isinstance(b, Tensor)
    _pair("mul", a, b)
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast_scalar(g * b_data, a), _unbroadcast_scalar(g * a_data, b)

    return _result(a_data * b_data, "mul", (a, b), backward)


def div(a: Tensor, b: Tensor | Scalar) -> Tensor:
    if _is_scalar(b):
        if float(b) == 0.0:  # type: ignore[arg-type]
            raise ContractError("division by zero scalar")
        return mul(a, 1.0 / float(b))  # type: ignore[arg-type]
    assert isinstance(b, Tensor)
    _pair("div", a, b)
    a_data, b_data = a.data, b.data
    out = a_data / b_data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast_scalar(g / b_data, a),
            _unbroadcast_scalar(-g * a_data / (b_data * b_data), b),
        )

    return _result(out, "div", (a, b), backward)


# -- linear algebra and shape ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, "matmul", (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError("transpose", a.shape)
    return _result(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    target = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(target)
    except ValueError as exc:
        raise DimensionError("reshape", a.shape, target) from exc
    original = a.shape
    return _result(out.copy(), "reshape", (a,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dims must agree."""
    if not tensors:
        raise ContractError("concat requires at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            s1 != s2 for i, (s1, s2) in enumerate(zip(t.shape, first.shape)) if i != axis % first.ndim
        ):
            raise DimensionError("concat", first.shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return list(np.split(g, bounds, axis=axis))

    return _result(
        np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), backward
    )


def getitem(a: Tensor, key: Any) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    if isinstance(key, Tensor):
        raise ContractError("index with numpy arrays or ints, not tensors")
    out = np.array(a.data[key], dtype=np.float64)
    shape = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape)
        np.add.at(grad, key, g)
        return (grad,)

    return _result(out, "getitem", (a,), backward)


def gather_rows(table: Tensor, index: np.ndarray | Sequence[int]) -> Tensor:
    """Embedding lookup: ``table[index]`` for a 2-D table."""
    idx = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError("gather_rows", table.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"gather_rows: index out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape)
        np.add.at(grad, idx, g)
        return (grad,)

    return _result(table.data[idx], "gather_rows", (table,), backward)


def scatter_add_rows(src: Tensor, index: np.ndarray | Sequence[int], n_rows: int) -> Tensor:
    """``out[index[i]] += src[i]`` into an ``n_rows``-row zero matrix."""
    idx = np.asarray(index, dtype=np.int64)
    if src.ndim != 2 or idx.shape != (src.shape[0],):
        raise DimensionError("scatter_add_rows", src.shape, idx.shape)
    out = np.zeros((n_rows, src.shape[1]))
    np.add.at(out, idx, src.data)
    return _result(out, "scatter_add_rows", (src,), lambda g: (g[idx],))


def expand_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a length-d vector into an n×d matrix."""
    if v.ndim != 1:
        raise DimensionError("expand_rows", v.shape)
    out = np.tile(v.data, (n, 1))
    return _result(out, "expand_rows", (v,), lambda g: (g.sum(axis=0),))


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of an n×d matrix by w[i] (w of shape (n,))."""
    if x.ndim != 2 or w.shape != (x.shape[0],):
        raise DimensionError("scale_rows", x.shape, w.shape)
    x_data, w_data = x.data, w.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g * w_data[:, None], (g * x_data).sum(axis=1)

    return _result(x_data * w_data[:, None], "scale_rows", (x, w), backward)


# -- reductions -----------------------------------------------------------------


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        return _result(
            np.asarray(a.data.sum()), "sum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
        )

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(a.data.sum(axis=axis), "sum", (a,), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ContractError("mean of an empty tensor")
    return mul(sum(a, axis), 1.0 / count)


# -- activations ----------------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = stable_sigmoid(a.data)
    return _result(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax along ``axis``.

    Args:
        a: Input scores.
        axis: Normalization axis.
        mask: Optional boolean array of ``a``'s shape; False entries get
            probability exactly 0. Every slice along ``axis`` must keep at
            least one entry.

    Raises:
        DimensionError: If the mask shape differs from ``a``.
        ContractError: If a slice is fully masked.
    """
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError("softmax mask", x.shape, mask.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax: a slice is fully masked")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, "softmax", (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization of an n×d matrix with affine parameters."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    x_hat = centered * inv_std
    gamma_data = gamma.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g_hat = g * gamma_data
        gx = inv_std * (
            g_hat
            - g_hat.mean(axis=1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=1, keepdims=True)
        )
        return gx, (g * x_hat).sum(axis=0), g.sum(axis=0)

    return _result(x_hat * gamma_data + beta.data, "layer_norm", (x, gamma, beta), backward)


# -- composition and similarity -------------------------------------------------


DIRECT_CORRELATION_MAX_DIM = 16


def _shifted_sum(u: np.ndarray, v: np.ndarray, sign: int) -> np.ndarray:
    # out[..., k] = sum_i u[..., i] * v[..., (sign * i + k) mod d], accumulated in i order
    d = u.shape[-1]
    k = np.arange(d)
    out = np.zeros(np.broadcast_shapes(u.shape, v.shape))
    for i in range(d):
        out += u[..., i : i + 1] * v[..., (sign * i + k) % d]
    return out


def circular_correlation(a: Tensor, b: Tensor) -> Tensor:
    """``out[..., k] = sum_i a[..., i] * b[..., (i + k) mod d]``.

    Works on vectors (d,) or row batches (n, d). Up to
    ``DIRECT_CORRELATION_MAX_DIM`` the sum is taken directly and matches the
    double-sum definition bit for bit; wider vectors use real FFTs, which agree
    to about 1e-12.
    """
    _check_same_shape("circular_correlation", a, b)
    if a.ndim not in (1, 2) or a.shape[-1] == 0:
        raise DimensionError("circular_correlation", a.shape, b.shape)
    d = a.shape[-1]
    a_data, b_data = a.data, b.data

    def corr(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if d <= DIRECT_CORRELATION_MAX_DIM:
            return _shifted_sum(u, v, 1)
        return np.fft.irfft(np.conj(np.fft.rfft(u, axis=-1)) * np.fft.rfft(v, axis=-1), n=d, axis=-1)

    def conv(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if d <= DIRECT_CORRELATION_MAX_DIM:
            return _shifted_sum(u, v, -1)
        return np.fft.irfft(np.fft.rfft(u, axis=-1) * np.fft.rfft(v, axis=-1), n=d, axis=-1)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return corr(g, b_data), conv(a_data, g)

    return _result(corr(a_data, b_data), "circular_correlation", (a, b), backward)


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((x * x).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms[:, None] > 0, x / safe[:, None], 0.0)
    return unit, norms


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity of the rows of a (n×d) and b (m×d) -> n×m.

    A pair involving a zero-norm row has similarity 0 and passes no gradient
    to that row.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError("cosine_similarity", a.shape, b.shape)
    a_unit, a_norm = _normalize_rows(a.data)
    b_unit, b_norm = _normalize_rows(b.data)

    def through_norm(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
        radial = (grad_unit * unit).sum(axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)[:, None]
        return np.where(norms[:, None] > 0, (grad_unit - unit * radial) / safe, 0.0)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            through_norm(g @ b_unit, a_unit, a_norm),
            through_norm(g.T @ a_unit, b_unit, b_norm),
        )

    return _result(a_unit @ b_unit.T, "cosine_similarity", (a, b), backward)


# -- stochastic -----------------------------------------------------------------


def dropout(
    a: Tensor,
    p: float,
    training: bool,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> Tensor:
    """Inverted dropout.

    In training mode a Bernoulli keep-mask is drawn from ``seed`` (drawn from
    ``rng`` when not given) and the seed is stored in the output node's
    ``meta["seed"]``. In eval mode, or with p == 0, returns ``a`` unchanged.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if seed is None:
        if rng is None:
            raise ContractError("dropout in training mode needs an rng or a seed")
        seed = int(rng.integers(0, 2**63 - 1))
    keep = np.random.default_rng(seed).random(a.shape) >= p
    scale = keep / (1.0 - p)
    return _result(a.data * scale, "dropout", (a,), lambda g: (g * scale,), seed=seed, p=p)


# -- losses ---------------------------------------------------------------------


def binary_cross_entropy_with_logits(
    logits: Tensor,
    targets: np.ndarray,
    clamp: float = 30.0,
    pos_weight: float | None = None,
) -> Tensor:
    """Mean BCE over every element, from logits clamped to ``[-clamp, clamp]``."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ContractError(f"BCE label shape {y.shape} does not match output shape {logits.shape}")
    if logits.size == 0:
        raise ContractError("BCE on an empty batch")
    z = np.clip(logits.data, -clamp, clamp)
    inside = (logits.data >= -clamp) & (logits.data <= clamp)
    w = 1.0 if pos_weight is None else float(pos_weight)
    # softplus(-z) = -log sigmoid(z); softplus(z) = -log(1 - sigmoid(z))
    losses = w * y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    n = logits.size

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        s = stable_sigmoid(z)
        grad = (-w * y * (1.0 - s) + (1.0 - y) * s) * inside / n
        return (grad * g,)

    return _result(np.asarray(losses.mean()), "bce_with_logits", (logits,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy of n×C logits against integer classes."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or t.shape != (logits.shape[0],):
        raise ContractError(
            f"cross-entropy label shape {t.shape} does not match output shape {logits.shape}"
        )
    n, c = logits.shape
    if n == 0:
        raise ContractError("cross-entropy on an empty batch")
    if t.min() < 0 or t.max() >= c:
        raise ContractError(f"class labels must lie in [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, t] -= 1.0
        return (grad * (g / n),)

    return _result(np.asarray(-log_probs[rows, t].mean()), "cross_entropy", (logits,), backward)
