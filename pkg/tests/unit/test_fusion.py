"""Unit tests for hierarchical fusion and the task head.

Tests for protoehr/model/fusion.py.

Run with:
    pytest tests/unit/test_fusion.py -v -m fast
"""

import numpy as np
import pytest

from protoehr.config import TASK_OUTPUT_DIMS, Level, Task
from protoehr.core.errors import ConfigError, ContractError
from protoehr.core.gradcheck import check_gradients
from protoehr.core.seeding import make_rng
from protoehr.core.tensors import Tensor
from protoehr.model.fusion import Fusion, TaskHead, predict, probabilities, task_loss


def banks(rng, dim=4, sizes=(3, 2, 5)):
    levels = (Level.CODE, Level.VISIT, Level.PATIENT)
    return {lvl: Tensor(rng.normal(size=(m, dim))) for lvl, m in zip(levels, sizes)}


@pytest.mark.fast
class TestFusion:
    """Tests for Fusion.fuse."""

    def test_beta_rows_sum_to_one(self, rng):
        """Test level weights are a distribution per sample."""
        fusion = Fusion(4, make_rng(0, "fusion"))
        fused, trace = fusion.fuse(Tensor(rng.normal(size=(6, 4))), banks(rng))
        assert fused.shape == (6, 4)
        assert trace.beta.shape == (6, 3)
        np.testing.assert_allclose(trace.beta.sum(axis=1), 1.0)
        assert (trace.beta > 0).all()
        assert len(trace) == 6

    def test_symmetric_levels_give_uniform_beta(self, rng):
        """Test identical levels and projections fuse with weight 1/3 each."""
        fusion = Fusion(4, make_rng(0, "fusion"))
        for table in (fusion.w_q, fusion.w_k, fusion.w_v):
            for key in ("visit", "patient"):
                table[key].data[:] = table["code"].data
        proto = rng.normal(size=(3, 4))
        same = {lvl: Tensor(proto) for lvl in (Level.CODE, Level.VISIT, Level.PATIENT)}
        p = Tensor(rng.normal(size=(2, 4)))
        fused, trace = fusion.fuse(p, same)
        np.testing.assert_allclose(trace.beta, np.full((2, 3), 1 / 3), atol=1e-12)
        p_code, _ = fusion.attend(p, same[Level.CODE], Level.CODE)
        np.testing.assert_allclose(fused.data, p_code.data, atol=1e-12)

    def test_attention_matches_formula(self, rng):
        """Test p^t = softmax((p W_Q)(Ĥ W_K)^T / sqrt(d)) (Ĥ W_V)."""
        fusion = Fusion(4, make_rng(1, "fusion"))
        p, h = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
        out, attention = fusion.attend(Tensor(p), Tensor(h), Level.VISIT)
        wq, wk, wv = (t["visit"].data for t in (fusion.w_q, fusion.w_k, fusion.w_v))
        scores = (p @ wq) @ (h @ wk).T / 2.0
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        attn = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(attention.data, attn, atol=1e-12)
        np.testing.assert_allclose(out.data, attn @ (h @ wv), atol=1e-12)

    def test_subset_of_levels(self, rng):
        """Test a level left out of fusion has weight 0 and no attention."""
        fusion = Fusion(4, make_rng(0), levels=(Level.CODE, Level.PATIENT))
        all_banks = banks(rng)
        del all_banks[Level.VISIT]
        _, trace = fusion.fuse(Tensor(rng.normal(size=(3, 4))), all_banks)
        np.testing.assert_array_equal(trace.beta[:, 1], 0.0)
        np.testing.assert_allclose(trace.beta.sum(axis=1), 1.0)
        assert set(trace.attention) == {Level.CODE, Level.PATIENT}
        assert trace.attention[Level.PATIENT].shape == (3, 5)

    def test_high_temperature_flattens(self, rng):
        """Test a large temperature pushes β towards uniform."""
        fusion = Fusion(4, make_rng(0), tau=1e6)
        _, trace = fusion.fuse(Tensor(rng.normal(size=(2, 4))), banks(rng))
        np.testing.assert_allclose(trace.beta, 1 / 3, atol=1e-5)

    def test_invalid_construction(self, rng):
        """Test bad temperatures, no levels and empty banks are rejected."""
        with pytest.raises(ConfigError):
            Fusion(4, make_rng(0), tau=0.0)
        with pytest.raises(ConfigError):
            Fusion(4, make_rng(0), levels=())
        with pytest.raises(ContractError, match="empty"):
            Fusion(4, make_rng(0)).attend(
                Tensor(rng.normal(size=(1, 4))), Tensor(np.zeros((0, 4))), Level.CODE
            )

    def test_gradients(self, rng):
        """Test backprop through fusion matches finite differences."""
        fusion = Fusion(3, make_rng(2, "fusion"))
        p = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        protos = {
            lvl: Tensor(rng.normal(size=(2, 3)), requires_grad=True)
            for lvl in (Level.CODE, Level.VISIT, Level.PATIENT)
        }
        weights = Tensor(rng.normal(size=(2, 3)))
        params = {"p": p, **{f"h_{k.value}": v for k, v in protos.items()}, **fusion.parameters()}
        report = check_gradients(lambda: (fusion.fuse(p, protos)[0] * weights).sum(), params)
        assert report.passed, report.max_rel_error


@pytest.mark.fast
class TestHeadAndLoss:
    """Tests for TaskHead, probabilities and task_loss."""

    @pytest.mark.parametrize("task", list(Task))
    def test_head_width(self, rng, task):
        """Test the head projects to the task's output width."""
        head = TaskHead(4, task, make_rng(0))
        probs = predict(Tensor(rng.normal(size=(3, 4))), head)
        assert probs.shape == (3, TASK_OUTPUT_DIMS[task])
        assert ((probs >= 0) & (probs <= 1)).all()

    def test_los_softmax(self, rng):
        """Test LoS probabilities are a distribution over the ten classes."""
        probs = probabilities(rng.normal(size=(4, 10)) * 30, Task.LENGTH_OF_STAY)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_binary_sigmoid(self):
        """Test binary probabilities are elementwise sigmoids without overflow."""
        probs = probabilities(np.array([[0.0], [800.0], [-800.0]]), Task.MORTALITY)
        np.testing.assert_allclose(probs[:, 0], [0.5, 1.0, 0.0])

    def test_binary_loss(self):
        """Test mortality loss is the mean BCE."""
        logits = np.array([[0.3], [-1.2]])
        labels = np.array([[1.0], [0.0]])
        expected = np.mean(np.log1p(np.exp(-logits[:, 0] * np.array([1, -1]))))
        loss = task_loss(Tensor(logits), labels, Task.MORTALITY)
        assert loss.item() == pytest.approx(expected, rel=1e-10)

    def test_los_loss(self):
        """Test LoS loss is categorical cross-entropy."""
        logits = np.array([[1.0, 2.0, 0.5] + [0.0] * 7])
        loss = task_loss(Tensor(logits), np.array([1]), Task.LENGTH_OF_STAY)
        expected = -logits[0, 1] + np.log(np.exp(logits[0]).sum())
        assert loss.item() == pytest.approx(expected, rel=1e-10)
