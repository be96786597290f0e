import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posecontrast.errors import DegenerateDenominatorError, ShapeMismatchError
from posecontrast.geometry import BIN_SIZE, AngleHeadOutput, PoseLabel, poses_to_matrices
from posecontrast.losses import (
    AngleLossConfig,
    ContrastBatch,
    ContrastiveConfig,
    TotalLossConfig,
    angle_loss,
    batch_contrastive_loss,
    batch_contrastive_terms,
    distance_weights,
    info_nce,
    pose_nce,
    pose_weight_matrix,
    smooth_l1,
    total_loss,
)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_batch(rng, n, d=8):
    angles = np.stack([rng.uniform(-math.pi, math.pi, n), rng.uniform(-1.2, 1.2, n),
                       rng.uniform(-0.3, 0.3, n)], axis=1)
    return ContrastBatch(unit_rows(rng, n, d), unit_rows(rng, n, d), poses_to_matrices(angles))


def naive_nce(q, K, i, weights, tau):
    """Literal loss formula, no stabilisation."""
    num = math.exp(q @ K[i] / tau)
    den = sum(w * math.exp(q @ k / tau) for w, k in zip(weights, K))
    return -math.log(num / den)


def naive_pose_weights(poses, i, mode, include_positive):
    out = []
    for j, R in enumerate(poses):
        c = np.clip((np.trace(poses[i].T @ R) - 1) / 2, -1, 1)
        d = math.acos(c) / math.pi
        w = {"linear": d, "sqrt": math.sqrt(d), "square": d * d, "constant_one": 1.0}[mode]
        out.append(w)
    out[i] = 1.0 if include_positive else 0.0
    return out


class TestSmoothL1:
    def test_values(self):
        np.testing.assert_allclose(smooth_l1(np.array([0.0, 0.5, 2.0, -3.0])), [0.0, 0.125, 1.5, 2.5])

    def test_threshold(self):
        assert smooth_l1(0.5, threshold=0.25) == 0.375

    @given(st.floats(-100, 100))
    def test_continuous_at_threshold(self, t):
        t = abs(t) + 0.1
        np.testing.assert_allclose(smooth_l1(t * (1 - 1e-12), t), smooth_l1(t, t), rtol=1e-9)


class TestAngleLoss:
    def test_perfect_prediction_is_ce_only(self):
        target = np.array([0.3, -0.2, 0.1])
        out = AngleHeadOutput.one_hot(target, peak=50.0)
        loss, _ = angle_loss(out, target)
        np.testing.assert_allclose(loss, 0.0, atol=1e-19)

    def test_uniform_scores(self):
        target = PoseLabel(0.3, -0.2, 0.1)
        out = AngleHeadOutput.one_hot(target.as_array())
        for k in out.scores:
            out.scores[k][:] = 0.0
        loss, _ = angle_loss(out, target)
        np.testing.assert_allclose(loss, 2 * math.log(24) + math.log(12), rtol=1e-14)

    def test_offset_term(self):
        target = np.array([0.5 * BIN_SIZE, 0.25 * BIN_SIZE, 0.0])
        out = AngleHeadOutput.one_hot(target, peak=0.0)
        out.offsets["azimuth"][12] += 0.4
        base, _ = angle_loss(AngleHeadOutput.one_hot(target, peak=0.0), target, AngleLossConfig(lam=2.0))
        loss, _ = angle_loss(out, target, AngleLossConfig(lam=2.0))
        np.testing.assert_allclose(loss - base, 2.0 * 0.5 * 0.4 ** 2, rtol=1e-12)

    def test_batch_is_mean(self):
        rng = np.random.default_rng(0)
        t = np.array([[0.1, 0.2, 0.3], [-1.0, 0.5, -0.2]])
        out = AngleHeadOutput.one_hot(t)
        for k in out.scores:
            out.scores[k] = rng.standard_normal(out.scores[k].shape)
        both, _ = angle_loss(out, t)
        singles = [angle_loss(out.sample(i), t[i])[0] for i in range(2)]
        np.testing.assert_allclose(both, np.mean(singles), rtol=1e-14)

    def test_shape_mismatch(self):
        out = AngleHeadOutput.one_hot(np.zeros((2, 3)))
        with pytest.raises(ShapeMismatchError):
            angle_loss(out, np.zeros((3, 3)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AngleLossConfig(lam=-1)
        with pytest.raises(ValueError):
            AngleLossConfig(smooth_l1_threshold=0)


class TestContrastBatch:
    def test_rejects_unnormalised(self):
        with pytest.raises(ValueError):
            ContrastBatch(np.ones((2, 3)), np.ones((2, 3)), np.stack([np.eye(3)] * 2))

    def test_rejects_single(self):
        with pytest.raises(ShapeMismatchError):
            ContrastBatch(np.eye(3)[:1], np.eye(3)[:1], np.eye(3)[None])

    def test_rejects_pose_shape(self):
        with pytest.raises(ShapeMismatchError):
            ContrastBatch(np.eye(3)[:2], np.eye(3)[:2], np.eye(3)[None])


class TestInfoNCE:
    def test_orthogonal_pair(self):
        # logits 2 (positive) and 0 (negative) at tau 0.5
        b = ContrastBatch(np.eye(2), np.eye(2), np.stack([np.eye(3)] * 2))
        loss, _ = info_nce(b, 0)
        np.testing.assert_allclose(loss, math.log(1 + math.exp(-2)), rtol=1e-15)

    def test_matches_naive(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            b = random_batch(rng, int(rng.integers(2, 12)))
            i = int(rng.integers(len(b)))
            tau = float(rng.uniform(0.1, 1))
            got, _ = info_nce(b, i, ContrastiveConfig(tau=tau))
            want = naive_nce(b.query_embeddings[i], b.key_embeddings, i, [1.0] * len(b), tau)
            np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            b = random_batch(rng, 6)
            assert info_nce(b, 0)[0] > 0

    def test_index_range(self):
        b = random_batch(np.random.default_rng(3), 3)
        with pytest.raises(IndexError):
            info_nce(b, 3)


class TestPoseNCE:
    @pytest.mark.parametrize("mode", ["linear", "sqrt", "square", "constant_one"])
    @pytest.mark.parametrize("include", [True, False])
    def test_matches_naive(self, mode, include):
        rng = np.random.default_rng(4)
        for _ in range(30):
            b = random_batch(rng, int(rng.integers(2, 10)))
            i = int(rng.integers(len(b)))
            cfg = ContrastiveConfig(tau=0.3, weight_mode=mode, include_positive_in_denominator=include)
            w = naive_pose_weights(b.poses, i, mode, include)
            got, _ = pose_nce(b, i, cfg)
            want = naive_nce(b.query_embeddings[i], b.key_embeddings, i, w, 0.3)
            np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)

    def test_constant_one_is_info_nce(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            b = random_batch(rng, int(rng.integers(2, 65)))
            i = int(rng.integers(len(b)))
            cfg = ContrastiveConfig(weight_mode="constant_one")
            assert cfg.include_positive
            np.testing.assert_allclose(pose_nce(b, i, cfg)[0], info_nce(b, i, cfg)[0], rtol=0, atol=1e-12)

    def test_same_pose_negative_is_ignored(self):
        rng = np.random.default_rng(6)
        b = random_batch(rng, 5)
        poses = np.concatenate([b.poses, b.poses[2:3]])
        bigger = ContrastBatch(np.vstack([b.query_embeddings, unit_rows(rng, 1, 8)]),
                               np.vstack([b.key_embeddings, unit_rows(rng, 1, 8)]), poses)
        np.testing.assert_allclose(pose_nce(bigger, 2)[0], pose_nce(b, 2)[0], rtol=0, atol=1e-12)

    def test_all_same_pose_is_degenerate(self):
        rng = np.random.default_rng(7)
        b = ContrastBatch(unit_rows(rng, 3, 4), unit_rows(rng, 3, 4), np.stack([np.eye(3)] * 3))
        with pytest.raises(DegenerateDenominatorError):
            pose_nce(b, 0)
        with pytest.raises(DegenerateDenominatorError):
            batch_contrastive_loss(b)

    def test_weights(self):
        d = np.array([0.0, 0.25, 1.0])
        np.testing.assert_allclose(distance_weights(d, "sqrt"), [0, 0.5, 1])
        np.testing.assert_allclose(distance_weights(d, "square"), [0, 0.0625, 1])
        with pytest.raises(ValueError):
            distance_weights(d, "cubic")

    def test_weight_matrix_diagonal(self):
        poses = poses_to_matrices(np.array([[0, 0, 0], [math.pi / 2, 0, 0], [-math.pi, 0, 0]]))
        w = pose_weight_matrix(poses, ContrastiveConfig())
        np.testing.assert_allclose(w, [[0, 0.5, 1], [0.5, 0, 0.5], [1, 0.5, 0]], atol=1e-15)


class TestBatchLoss:
    def test_mean_of_single_queries(self):
        rng = np.random.default_rng(8)
        for mode in ("linear", "constant_one"):
            cfg = ContrastiveConfig(weight_mode=mode)
            b = random_batch(rng, 9)
            loss, (gq, gk) = batch_contrastive_loss(b, cfg)
            singles = [pose_nce(b, i, cfg) for i in range(9)]
            np.testing.assert_allclose(loss, np.mean([s[0] for s in singles]), rtol=1e-13)
            np.testing.assert_allclose(gq, sum(s[1][0] for s in singles) / 9, atol=1e-14)
            np.testing.assert_allclose(gk, sum(s[1][1] for s in singles) / 9, atol=1e-14)

    def test_terms(self):
        b = random_batch(np.random.default_rng(9), 4)
        losses, g = batch_contrastive_terms(b)
        assert losses.shape == (4,) and g.shape == (4, 4)

    def test_stable_at_small_tau(self):
        b = random_batch(np.random.default_rng(10), 8)
        loss, (gq, _) = batch_contrastive_loss(b, ContrastiveConfig(tau=1e-3))
        assert np.isfinite(loss) and np.all(np.isfinite(gq))


def test_total_loss():
    assert total_loss(1.5, 2.0, TotalLossConfig(kappa=0.5)) == 2.5
    with pytest.raises(ValueError):
        TotalLossConfig(kappa=-1)
