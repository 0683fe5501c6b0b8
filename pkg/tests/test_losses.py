import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointrec.errors import ConfigError
from jointrec.losses import (
    LossConfig,
    TrainingInstance,
    bprmax_loss,
    hybrid_loss,
    hybrid_loss_batch,
    log_loss,
    pointwise_loss,
    ranking_loss,
    softmax_scores,
    squared_loss,
    top1_loss,
    top1max_loss,
    xe_loss,
)

SIG = lambda x: 1.0 / (1.0 + math.exp(-x))


def numeric_grads(fn, pos, negs, h=1e-6):
    """Central differences of a (pos, negs) -> value loss."""
    def value(p, ns):
        return fn(p, np.asarray(ns))[0]

    d_pos = (value(pos + h, negs) - value(pos - h, negs)) / (2 * h)
    d_negs = np.zeros(len(negs))
    for k in range(len(negs)):
        up = list(negs); up[k] += h
        dn = list(negs); dn[k] -= h
        d_negs[k] = (value(pos, up) - value(pos, dn)) / (2 * h)
    return d_pos, d_negs


def assert_loss_grads_match(fn, n_points=100, n_negs=3, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        pos = float(rng.uniform(0.02, 0.98))
        negs = rng.uniform(0.02, 0.98, size=n_negs)
        _, g_pos, g_negs = fn(pos, negs)
        n_pos, n_negs_grad = numeric_grads(fn, pos, list(negs))
        for a, n in zip([g_pos, *g_negs], [n_pos, *n_negs_grad]):
            rel = abs(a - n) / max(abs(a), abs(n), 1e-4)
            worst = max(worst, rel)
    assert worst < tol, f"worst rel err {worst:.3e}"


class TestLogLoss:
    def test_normalized_target_from_rating(self):
        # rating 2 out of a user maximum of 4 gives target 0.5
        target = 2.0 / 4.0
        value, _ = log_loss(0.5, target)
        assert value == pytest.approx(-(0.5 * math.log(0.5) + 0.5 * math.log(0.5)))

    def test_half_prediction_full_target_is_ln2(self):
        value, _ = log_loss(0.5, 1.0)
        assert value == pytest.approx(math.log(2.0))

    def test_perfect_prediction_is_near_zero(self):
        value, _ = log_loss(1.0 - 1e-12, 1.0 - 1e-12)
        assert value == pytest.approx(0.0, abs=1e-9)

    def test_clamping_keeps_values_finite(self):
        for y_hat in (0.0, 1.0, -0.5, 1.5):
            value, grad = log_loss(y_hat, 0.7)
            assert math.isfinite(value) and math.isfinite(grad)


class TestSquaredLoss:
    def test_exact_prediction_is_zero(self):
        assert squared_loss(0.8, 0.8) == (0.0, 0.0)

    def test_hand_value(self):
        value, _ = squared_loss(0.5, 1.0, weight=1.0)
        assert value == pytest.approx(0.25)

    def test_weight_is_linear(self):
        v1, g1 = squared_loss(0.5, 1.0, weight=1.0)
        v2, g2 = squared_loss(0.5, 1.0, weight=2.0)
        assert v2 == pytest.approx(2 * v1)
        assert g2 == pytest.approx(2 * g1)


class TestTop1:
    def test_equal_scores_single_negative(self):
        value, _, _ = top1_loss(0.0, np.array([0.0]))
        assert value == pytest.approx(1.0)  # sigmoid(0) + sigmoid(0)

    def test_asymptotics(self):
        # well-separated scores: ranking term vanishes, the square
        # regularizer keeps pushing large-magnitude negatives
        value, _, _ = top1_loss(10.0, np.array([-10.0]))
        assert value == pytest.approx(SIG(-20.0) + SIG(100.0), rel=1e-9)
        value_mid, _, _ = top1_loss(10.0, np.array([0.0]))
        assert value_mid == pytest.approx(SIG(-10.0) + 0.5, rel=1e-9)

    def test_empty_negatives_rejected(self):
        with pytest.raises(ConfigError):
            top1_loss(0.5, np.array([]))

    def test_gradients(self):
        assert_loss_grads_match(top1_loss)


class TestSoftmaxScores:
    def test_single_element(self):
        assert softmax_scores(np.array([3.7])) == pytest.approx([1.0])

    def test_two_equal(self):
        assert softmax_scores(np.array([0.4, 0.4])) == pytest.approx([0.5, 0.5])

    def test_closed_form(self):
        assert softmax_scores(np.array([0.0, math.log(3.0)])) == pytest.approx([0.25, 0.75])

    def test_sums_to_one(self):
        s = softmax_scores(np.random.default_rng(0).normal(size=17))
        assert s.sum() == pytest.approx(1.0)


class TestTop1Max:
    def test_single_negative_collapses_to_top1(self):
        v_max, gp_max, gn_max = top1max_loss(0.3, np.array([0.6]))
        v, gp, gn = top1_loss(0.3, np.array([0.6]))
        assert v_max == pytest.approx(v, abs=1e-12)
        assert gp_max == pytest.approx(gp, abs=1e-12)
        assert gn_max == pytest.approx(gn, abs=1e-12)

    def test_uniform_negatives_equal_top1_value(self):
        negs = np.array([0.4, 0.4, 0.4])
        v_max, _, _ = top1max_loss(0.7, negs)
        v, _, _ = top1_loss(0.7, negs)
        assert v_max == pytest.approx(v, abs=1e-12)

    def test_gradients(self):
        assert_loss_grads_match(top1max_loss)


class TestBprMax:
    def test_single_negative_equal_scores_is_ln2(self):
        value, _, _ = bprmax_loss(0.5, np.array([0.5]))
        assert value == pytest.approx(math.log(2.0))

    def test_perfect_ranking_limit(self):
        value, _, _ = bprmax_loss(30.0, np.array([-30.0]))
        assert value == pytest.approx(0.0, abs=1e-9)

    def test_single_negative_collapse(self):
        # with one negative the softmax weight is 1: -log sigmoid(pos - neg)
        value, _, _ = bprmax_loss(0.9, np.array([0.2]))
        assert value == pytest.approx(-math.log(SIG(0.7)), rel=1e-12)

    def test_gradients(self):
        assert_loss_grads_match(bprmax_loss)


class TestXe:
    def test_two_equal_logits_is_ln2(self):
        value, _, _ = xe_loss(0.5, np.array([0.5]))
        assert value == pytest.approx(math.log(2.0))

    def test_dominant_positive_goes_to_zero(self):
        value, _, _ = xe_loss(60.0, np.array([0.0, 0.1]))
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_gradients(self):
        assert_loss_grads_match(xe_loss)


def make_instance(pos_score, neg_scores, target=0.75):
    return TrainingInstance(
        user=0, pos_item=0, target=target, pos_score=pos_score,
        neg_items=np.arange(len(neg_scores)), neg_scores=np.asarray(neg_scores),
    )


class TestHybrid:
    def test_alpha_zero_is_pointwise_exactly(self):
        config = LossConfig(alpha=0.0, pairwise="none", pointwise="log")
        inst = make_instance(0.6, [0.3, 0.2], target=0.5)
        value, gp, gn = hybrid_loss(config, inst)
        v_ref, gp_ref, gn_ref = pointwise_loss(config, inst)
        assert value == pytest.approx(v_ref, abs=1e-12)
        assert gp == pytest.approx(gp_ref, abs=1e-12)
        assert gn == pytest.approx(gn_ref, abs=1e-12)
        # the positive's own term is the plain log loss
        v_pos, _ = log_loss(0.6, 0.5)
        v_negs = sum(log_loss(s, 0.0)[0] for s in [0.3, 0.2])
        assert value == pytest.approx(v_pos + v_negs, abs=1e-12)

    def test_alpha_one_is_pairwise_exactly(self):
        config = LossConfig(alpha=1.0, pairwise="top1", pointwise="none")
        inst = make_instance(0.6, [0.3, 0.2])
        value, gp, gn = hybrid_loss(config, inst)
        v_ref, gp_ref, gn_ref = top1_loss(0.6, inst.neg_scores)
        assert value == pytest.approx(v_ref, abs=1e-12)
        assert gp == pytest.approx(gp_ref, abs=1e-12)
        assert gn == pytest.approx(gn_ref, abs=1e-12)

    def test_component_sum_at_alpha_07(self):
        config = LossConfig(alpha=0.7, pairwise="top1", pointwise="log")
        inst = make_instance(0.55, [0.41], target=0.8)
        value, _, _ = hybrid_loss(config, inst)
        pair, _, _ = top1_loss(0.55, inst.neg_scores)
        point = log_loss(0.55, 0.8)[0] + log_loss(0.41, 0.0)[0]
        assert value == pytest.approx(0.7 * pair + 0.3 * point, abs=1e-12)

    @given(st.floats(0.0, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_affine_in_alpha(self, alpha):
        inst = make_instance(0.6, [0.3, 0.7], target=0.9)
        pair = ranking_loss(LossConfig(alpha=1.0, pairwise="top1", pointwise="none"), 0.6, inst.neg_scores)[0]
        point = pointwise_loss(LossConfig(alpha=0.0, pairwise="none", pointwise="log"), inst)[0]
        value, _, _ = hybrid_loss(LossConfig(alpha=alpha, pairwise="top1", pointwise="log"), inst)
        assert value == pytest.approx(alpha * pair + (1 - alpha) * point, abs=1e-12)

    @given(
        st.floats(0.01, 0.99),
        st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5),
        st.floats(0.05, 1.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_finite_for_scores_in_unit_interval(self, pos, negs, target):
        for pairwise in ("top1", "top1max", "bprmax"):
            config = LossConfig(alpha=0.5, pairwise=pairwise, pointwise="log")
            value, gp, gn = hybrid_loss(config, make_instance(pos, negs, target))
            assert math.isfinite(value) and math.isfinite(gp) and np.isfinite(gn).all()

    def test_xe_via_listwise_flag(self):
        config = LossConfig(alpha=1.0, pairwise="none", pointwise="none", listwise_xe=True)
        with pytest.raises(ConfigError):
            LossConfig(alpha=1.0, pairwise="top1", pointwise="none", listwise_xe=True).validate()
        value, _, _ = hybrid_loss(config, make_instance(0.5, [0.5]))
        assert value == pytest.approx(math.log(2.0))


class TestBatchPath:
    def test_batch_equals_per_instance(self):
        rng = np.random.default_rng(5)
        for pairwise, xe in [("top1", False), ("top1max", False), ("bprmax", False), ("none", True)]:
            for pointwise in ("log", "squared"):
                config = LossConfig(alpha=0.6, pairwise=pairwise, pointwise=pointwise,
                                    listwise_xe=xe, negative_count=3)
                pos = rng.uniform(0.01, 0.99, size=6)
                neg = rng.uniform(0.01, 0.99, size=(6, 3))
                tgt = rng.uniform(0.2, 1.0, size=6)
                values, g_pos, g_neg = hybrid_loss_batch(config, pos, neg, tgt)
                for i in range(6):
                    v, gp, gn = hybrid_loss(config, make_instance(pos[i], neg[i], tgt[i]))
                    assert values[i] == pytest.approx(v, abs=1e-12)
                    assert g_pos[i] == pytest.approx(gp, abs=1e-12)
                    assert g_neg[i] == pytest.approx(gn, abs=1e-12)


class TestLossConfigValidation:
    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError, match="alpha"):
            LossConfig(alpha=1.5).validate()

    def test_no_active_component(self):
        with pytest.raises(ConfigError):
            LossConfig(alpha=0.5, pairwise="none", pointwise="none").validate()

    def test_alpha_needs_matching_components(self):
        with pytest.raises(ConfigError):
            LossConfig(alpha=0.5, pairwise="none", pointwise="log").validate()
        with pytest.raises(ConfigError):
            LossConfig(alpha=0.5, pairwise="top1", pointwise="none").validate()

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="pairwise"):
            LossConfig(pairwise="bogus").validate()

    def test_bad_negative_count(self):
        with pytest.raises(ConfigError, match="negative_count"):
            LossConfig(negative_count=0).validate()
