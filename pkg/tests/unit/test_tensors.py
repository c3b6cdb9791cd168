"""Unit tests for the autodiff core.

Tests for protoehr/core/tensors.py, module.py and gradcheck.py.

Run with:
    pytest tests/unit/test_tensors.py -v -m fast
"""

import numpy as np
import pytest

from protoehr.core import ops
from protoehr.core.errors import CheckpointError, ContractError
from protoehr.core.gradcheck import check_gradients, numerical_gradient, relative_error
from protoehr.core.module import Module, Parameter, xavier_uniform, zeros
from protoehr.core.tensors import Tensor, is_grad_enabled, no_grad


@pytest.mark.fast
class TestTensor:
    """Tests for Tensor and backward."""

    def test_sum_gradient_is_ones(self):
        """Test d(sum x)/dx is a vector of ones."""
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones(3))

    def test_gradients_accumulate(self):
        """Test two backward passes without zero_grad double the gradient."""
        x = Tensor([1.0, -2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        loss.backward()
        np.testing.assert_allclose(x.grad, 2 * 2 * x.data)

    def test_shared_subexpression_visited_once(self):
        """Test a diamond-shaped graph sums both paths exactly once."""
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [12.0])

    def test_backward_requires_scalar(self):
        """Test backward on a vector raises ContractError."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError, match="scalar"):
            (x * 2.0).backward()

    def test_backward_requires_graph(self):
        """Test backward on a constant raises ContractError."""
        with pytest.raises(ContractError, match="compute graph"):
            Tensor(1.0).backward()

    def test_no_grad_records_nothing(self):
        """Test operations inside no_grad build no nodes."""
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = x * 2.0
        assert is_grad_enabled()
        assert y.node is None
        assert not y.requires_grad

    def test_constants_get_no_gradient(self):
        """Test only requires_grad leaves receive .grad."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([5.0, 7.0])
        (x * c).sum().backward()
        np.testing.assert_array_equal(x.grad, [5.0, 7.0])
        assert c.grad is None

    def test_item_requires_single_element(self):
        """Test item() on a vector raises ContractError."""
        assert Tensor([4.5]).item() == 4.5
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_detach_leaves_graph(self):
        """Test detach returns a leaf with equal data."""
        x = Tensor([1.0], requires_grad=True)
        y = (x * 3.0).detach()
        assert y.is_leaf and not y.requires_grad
        assert y.item() == 3.0


class _Affine(Module):
    def __init__(self, rng):
        super().__init__()
        self.w = xavier_uniform(rng, 3, 2)
        self.b = zeros(2)
        self.blocks = [Parameter(np.ones(2))]


class _Outer(Module):
    def __init__(self, rng):
        super().__init__()
        self.inner = _Affine(rng)
        self.scale = Parameter(np.array([2.0]))


@pytest.mark.fast
class TestModule:
    """Tests for Module parameter registration and state dicts."""

    def test_dotted_parameter_names(self, rng):
        """Test nested modules and lists yield dotted names."""
        names = list(_Outer(rng).parameters())
        assert names == ["inner.w", "inner.b", "inner.blocks.0", "scale"]

    def test_num_parameters(self, rng):
        """Test the parameter count sums every element."""
        assert _Outer(rng).num_parameters() == 6 + 2 + 2 + 1

    def test_state_dict_roundtrip(self, rng):
        """Test load_state_dict restores values saved by state_dict."""
        model = _Outer(rng)
        state = model.state_dict()
        model.inner.w.data += 1.0
        model.load_state_dict(state)
        np.testing.assert_array_equal(model.inner.w.data, state["inner.w"])

    def test_state_dict_is_a_copy(self, rng):
        """Test mutating parameters does not change a saved state."""
        model = _Outer(rng)
        state = model.state_dict()
        model.scale.data[0] = 9.0
        assert state["scale"][0] == 2.0

    def test_load_rejects_missing_and_misshaped(self, rng):
        """Test CheckpointError on missing names and wrong shapes."""
        model = _Outer(rng)
        state = model.state_dict()
        del state["scale"]
        with pytest.raises(CheckpointError, match="missing"):
            model.load_state_dict(state)
        state = model.state_dict()
        state["inner.b"] = np.zeros(3)
        with pytest.raises(CheckpointError, match="expected shape"):
            model.load_state_dict(state)

    def test_train_eval_propagates(self, rng):
        """Test eval() switches every submodule out of training mode."""
        model = _Outer(rng)
        model.eval()
        assert not model.training and not model.inner.training
        model.train()
        assert model.inner.training


@pytest.mark.fast
class TestGradCheck:
    """Tests for the finite-difference checker."""

    def test_numerical_gradient_of_square(self):
        """Test central differences of sum(x^2) give 2x."""
        x = Tensor(np.array([1.0, -3.0, 0.5]), requires_grad=True)
        grad = numerical_gradient(lambda: (x * x).sum(), x)
        np.testing.assert_allclose(grad, 2 * x.data, atol=1e-8)

    def test_numerical_gradient_restores_values(self):
        """Test probing leaves the tensor unchanged."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        numerical_gradient(lambda: (x * x).sum(), x)
        np.testing.assert_array_equal(x.data, [1.0, 2.0])

    def test_relative_error_floor(self):
        """Test tiny absolute differences near zero are not magnified."""
        err = relative_error(np.array([1e-10]), np.array([0.0]))
        assert err[0] <= 1e-3

    def test_report_flags_wrong_gradient(self):
        """Test a deliberately wrong backward rule fails the check."""
        x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

        def wrong_square():
            return ops._result(x.data * x.data, "bad", (x,), lambda g: (g * x.data,)).sum()

        report = check_gradients(wrong_square, {"x": x})
        assert not report.passed
        assert report.worst > 0.1

    def test_report_passes_composite(self, rng):
        """Test a composite expression passes with a tight tolerance."""
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        report = check_gradients(lambda: ops.tanh(a @ b).sum(), {"a": a, "b": b}, tolerance=1e-6)
        assert report.passed, report.max_rel_error
