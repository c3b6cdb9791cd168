"""Central finite-difference gradient checking.

Examples:
    >>> x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    >>> report = check_gradients(lambda: (x * x).sum(), {"x": x})
    >>> report.passed
    True

Tests:
    - tests/unit/test_gradcheck.py
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from protoehr.core.tensors import Tensor

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Largest relative error per checked tensor."""

    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every element of ``tensor``.

    ``tensor.data`` is perturbed in place and restored after each probe, so
    ``loss_fn`` must rebuild its graph from the current values on every call.
    """
    grad = np.zeros_like(tensor.data)
    for idx in np.ndindex(*tensor.shape):
        original = tensor.data[idx]
        tensor.data[idx] = original + eps
        plus = loss_fn().item()
        tensor.data[idx] = original - eps
        minus = loss_fn().item()
        tensor.data[idx] = original
        grad[idx] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backprop gradients with central finite differences.

    Args:
        loss_fn: Builds a scalar loss from scratch on each call.
        tensors: Leaf tensors (requires_grad=True) to check, by name.
        eps: Finite-difference step.
        tolerance: Largest acceptable relative error.

    Returns:
        GradCheckReport with the worst relative error per tensor.
    """
    for t in tensors.values():
        t.zero_grad()
    loss_fn().backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }

    report = GradCheckReport(tolerance=tolerance)
    for name, t in tensors.items():
        numeric = numerical_gradient(loss_fn, t, eps)
        err = relative_error(analytic[name], numeric)
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
        if report.max_rel_error[name] > tolerance:
            logger.warning(f"Gradient mismatch on {name}: rel. error {report.max_rel_error[name]:.3g}")
    return report
