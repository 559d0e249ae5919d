"""Tests for losses module."""

import math

import numpy as np
import pytest

from maskkit.geometry import Box
from maskkit.gradcheck import check_loss
from maskkit.losses import focal_loss, keypoint_ce_loss, smooth_l1, smooth_l1_loss, total_loss
from maskkit.matching import MatchLabel, MatchResult
from maskkit.models import LossConfig
from maskkit.roialign import KeypointTarget


def make_match(labels):
    labels = np.asarray(labels, dtype=np.int8)
    gt_index = np.where(labels == MatchLabel.POSITIVE, 0, -1)
    return MatchResult(labels=labels, gt_index=gt_index, max_iou=np.zeros(len(labels)))


def logit(p):
    return math.log(p / (1 - p))


def target(cells, m, valid=None):
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    valid = np.ones(len(cells), dtype=bool) if valid is None else np.asarray(valid)
    return KeypointTarget(indices=cells, valid=valid, roi=Box(0, 0, m, m), m=m)


class TestFocalLoss:
    """Tests for focal_loss."""

    def test_single_positive(self):
        term = focal_loss(np.array([logit(0.9)]), make_match([1]), LossConfig())
        assert term.value == pytest.approx(0.25 * 0.01 * -math.log(0.9), rel=1e-6)
        assert term.value == pytest.approx(2.634e-4, abs=1e-7)

    def test_confident_positive_vanishes(self):
        term = focal_loss(np.array([40.0]), make_match([1]), LossConfig())
        assert term.value < 1e-12

    def test_negative_and_positive(self):
        term = focal_loss(np.array([logit(0.1), 40.0]), make_match([0, 1]), LossConfig())
        assert term.value == pytest.approx(0.75 * 0.01 * -math.log(0.9), rel=1e-6)

    def test_ignored_anchor_contributes_nothing(self):
        cfg = LossConfig()
        base = focal_loss(np.array([0.3]), make_match([1]), cfg)
        with_ignore = focal_loss(np.array([0.3, 5.0]), make_match([1, -1]), cfg)
        assert with_ignore.value == pytest.approx(base.value)
        assert with_ignore.grad[1] == 0.0

    def test_no_positives_normalized_by_one(self):
        term = focal_loss(np.array([logit(0.5)]), make_match([0]), LossConfig())
        assert term.value == pytest.approx(0.75 * 0.25 * math.log(2), rel=1e-9)

    def test_gamma_zero_is_balanced_bce(self, rng):
        x = rng.normal(size=12)
        labels = rng.choice([0, 1], size=12)
        labels[0] = 1
        term = focal_loss(x, make_match(labels), LossConfig(alpha=0.5, gamma=0.0))
        p = 1 / (1 + np.exp(-x))
        bce = np.where(labels == 1, -np.log(p), -np.log(1 - p))
        assert term.value == pytest.approx(0.5 * bce.sum() / labels.sum(), rel=1e-9)

    def test_gradient(self, rng):
        for _ in range(100):
            labels = rng.choice([-1, 0, 1], size=15)
            labels[0] = 1
            match = make_match(labels)
            err = check_loss(lambda x, m=match: focal_loss(x, m, LossConfig()), rng.normal(0, 2, size=15))
            assert err < 1e-4


class TestSmoothL1:
    """Tests for smooth_l1_loss."""

    def test_quadratic_branch(self):
        term = smooth_l1_loss(np.array([[0.5, 0, 0, 0]]), np.zeros((1, 4)), make_match([1]), LossConfig())
        assert term.value == pytest.approx(0.125)

    def test_linear_branch(self):
        term = smooth_l1_loss(np.array([[2.0, 0, 0, 0]]), np.zeros((1, 4)), make_match([1]), LossConfig())
        assert term.value == pytest.approx(1.5)

    def test_exact_prediction(self):
        t = np.ones((3, 4))
        assert smooth_l1_loss(t, t, make_match([1, 1, 0]), LossConfig()).value == 0.0

    def test_non_positive_rows_ignored(self):
        pred = np.array([[0.5, 0, 0, 0], [9.0, 9, 9, 9]])
        term = smooth_l1_loss(pred, np.zeros((2, 4)), make_match([1, 0]), LossConfig())
        assert term.value == pytest.approx(0.125)
        assert np.all(term.grad[1] == 0)

    def test_continuous_at_beta(self):
        below, above = smooth_l1(np.array([1 - 1e-9, 1 + 1e-9]), 1.0)
        assert below == pytest.approx(above, abs=1e-8)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    def test_derivative_continuous_at_beta(self, beta):
        """Test the quadratic and linear branches meet with slope 1 at |x| = beta."""
        cfg = LossConfig(smooth_l1_beta=beta)
        pred = np.array([[beta - 1e-9, -beta + 1e-9, 0, 0], [beta + 1e-9, -beta - 1e-9, 0, 0]])
        term = smooth_l1_loss(pred, np.zeros((2, 4)), make_match([1, 1]), cfg)
        inside, outside = term.grad * 2
        assert np.allclose(inside[:2], [1.0, -1.0], rtol=0, atol=1e-8)
        assert np.allclose(outside[:2], [1.0, -1.0], rtol=0, atol=1e-8)

    def test_gradient(self, rng):
        cfg = LossConfig()
        for _ in range(100):
            n = 6
            match = make_match(np.r_[1, rng.choice([0, 1], size=n - 1)])
            goal = rng.normal(size=(n, 4))
            offset = rng.choice([-1, 1], size=(n, 4)) * rng.uniform(0.1, 0.8, size=(n, 4))
            offset *= rng.choice([1.0, 2.5], size=(n, 4))
            err = check_loss(lambda x, m=match, g=goal: smooth_l1_loss(x, g, m, cfg), goal + offset)
            assert err < 1e-4


class TestKeypointLoss:
    """Tests for keypoint_ce_loss."""

    def test_uniform_logits(self):
        term = keypoint_ce_loss(np.zeros((1, 1, 56, 56)), [target([10, 10], 56)], LossConfig())
        assert term.value == pytest.approx(math.log(3136), rel=1e-9)
        assert term.value == pytest.approx(8.050703, abs=1e-6)

    def test_two_by_two(self):
        logits = np.array([[[[math.log(3), 0.0], [0.0, 0.0]]]])
        term = keypoint_ce_loss(logits, [target([0, 0], 2)], LossConfig())
        assert term.value == pytest.approx(-math.log(3 / 6), rel=1e-9)

    def test_confident_logit(self):
        logits = np.zeros((1, 1, 4, 4))
        logits[0, 0, 1, 2] = 50.0
        assert keypoint_ce_loss(logits, [target([1, 2], 4)], LossConfig()).value < 1e-15

    def test_invalid_keypoints_excluded(self):
        logits = np.zeros((1, 2, 4, 4))
        logits[0, 1] = np.random.default_rng(0).normal(size=(4, 4))
        term = keypoint_ce_loss(logits, [target([[0, 0], [3, 3]], 4, valid=[True, False])], LossConfig())
        assert term.value == pytest.approx(math.log(16))
        assert np.all(term.grad[0, 1] == 0)

    def test_shift_invariant_per_keypoint(self, rng):
        """Test that adding a constant to one keypoint's logits leaves loss and gradient unchanged."""
        logits = rng.normal(size=(2, 3, 6, 6))
        targets = [target(rng.integers(0, 6, size=(3, 2)), 6) for _ in range(2)]
        shifted = logits.copy()
        shifted[1, 2] += 7.5
        base = keypoint_ce_loss(logits, targets, LossConfig())
        moved = keypoint_ce_loss(shifted, targets, LossConfig())
        assert moved.value == pytest.approx(base.value, rel=1e-12)
        assert np.allclose(moved.grad, base.grad, atol=1e-12)

    def test_no_samples(self):
        term = keypoint_ce_loss(np.zeros((0, 5, 56, 56)), [], LossConfig())
        assert term.value == 0.0

    def test_sample_count_mismatch(self):
        with pytest.raises(ValueError, match="targets"):
            keypoint_ce_loss(np.zeros((2, 1, 4, 4)), [target([0, 0], 4)], LossConfig())

    def test_gradient(self, rng):
        cfg = LossConfig()
        for _ in range(100):
            s, k, m = 2, 3, 5
            targets = [target(rng.integers(0, m, size=(k, 2)), m, rng.random(k) < 0.8) for _ in range(s)]
            err = check_loss(lambda x, t=targets: keypoint_ce_loss(x, t, cfg), rng.normal(size=(s, k, m, m)))
            assert err < 1e-4


class TestTotalLoss:
    """Tests for total_loss."""

    def test_weighted_sum(self):
        report = total_loss((1.0, 0.5, 2.0), LossConfig(), n_pos=3)
        assert report.l_total == 2.0
        assert report.n_pos == 3

    def test_zero(self):
        assert total_loss((0, 0, 0), LossConfig()).l_total == 0.0

    def test_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            total_loss((math.nan, 0, 0), LossConfig())

    def test_as_row(self):
        row = total_loss((1.0, 0.5, 2.0), LossConfig(lambda_kp=0.0)).as_row()
        assert row["l_total"] == 1.5
        assert set(row) == {"l_cls", "l_box", "l_kp", "l_total", "n_pos"}


class TestNonNegative:
    """Every loss term is >= 0 on arbitrary inputs."""

    def test_random_inputs(self, rng):
        cfg = LossConfig()
        for _ in range(50):
            labels = rng.choice([-1, 0, 1], size=20)
            match = make_match(labels)
            assert focal_loss(rng.normal(0, 5, size=20), match, cfg).value >= 0.0
            pred, goal = rng.normal(0, 3, size=(2, 20, 4))
            assert smooth_l1_loss(pred, goal, match, cfg).value >= 0.0
            masks = rng.normal(0, 5, size=(2, 5, 8, 8))
            targets = [target(rng.integers(0, 8, size=(5, 2)), 8, rng.random(5) < 0.7) for _ in range(2)]
            assert keypoint_ce_loss(masks, targets, cfg).value >= 0.0
