import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from posecontrast.errors import GimbalLockError, NonFiniteError
from posecontrast.geometry import (
    BIN_SIZE,
    KINDS,
    AngleHeadOutput,
    PoseLabel,
    decode_head,
    decode_head_batch,
    encode_angle,
    encode_angles,
    euler_to_matrix,
    flip_pose,
    geodesic_delta,
    geodesic_delta_batch,
    matrix_to_euler,
    normalized_distance,
    pairwise_geodesic,
    poses_to_matrices,
    rotate_inplane,
    wrap_angle,
    wrap_angles,
)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def scipy_rotation(angles):
    # intrinsic Z-X-Y: Rz(inplane) Rx(-elevation) Ry(azimuth)
    a = np.atleast_2d(angles)
    return Rotation.from_euler("ZXY", np.stack([a[:, 2], -a[:, 1], a[:, 0]], axis=1))


def quaternion_angle(ra, rb):
    qa, qb = ra.as_quat(), rb.as_quat()  # (x, y, z, w)
    dot = np.abs(np.sum(qa * qb, axis=1))
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def random_angles(rng, n):
    return np.stack([rng.uniform(-math.pi, math.pi, n),
                     rng.uniform(-math.pi / 2, math.pi / 2, n),
                     rng.uniform(-math.pi, math.pi, n)], axis=1)


class TestWrap:
    def test_pi_maps_to_minus_pi(self):
        assert wrap_angle(math.pi) == -math.pi
        assert wrap_angle(-math.pi) == -math.pi

    def test_in_range_unchanged(self):
        assert wrap_angle(0.3) == 0.3

    def test_examples(self):
        np.testing.assert_allclose(wrap_angle(3 * math.pi / 2), -math.pi / 2, atol=1e-15)
        np.testing.assert_allclose(wrap_angle(-7.0), -7.0 + 2 * math.pi, atol=1e-15)

    @given(finite)
    def test_range_and_congruence(self, x):
        w = wrap_angle(x)
        assert -math.pi <= w < math.pi
        k = (x - w) / (2 * math.pi)
        assert abs(k - round(k)) < 1e-9

    def test_vectorised_agrees(self):
        x = np.linspace(-20, 20, 2001)
        np.testing.assert_array_equal(wrap_angles(x), [wrap_angle(v) for v in x])

    def test_nonfinite(self):
        with pytest.raises(NonFiniteError):
            wrap_angle(float("nan"))
        with pytest.raises(NonFiniteError):
            wrap_angles([0.0, np.inf])


class TestPoseLabel:
    def test_normalises(self):
        p = PoseLabel(math.pi, 2.0, 3 * math.pi)
        assert p.azimuth == -math.pi
        assert p.elevation == math.pi / 2
        assert -math.pi <= p.inplane < math.pi

    def test_degrees_roundtrip(self):
        p = PoseLabel.from_degrees(30.0, -20.0, 5.0)
        np.testing.assert_allclose(p.degrees(), (30.0, -20.0, 5.0), rtol=1e-14)


class TestRotation:
    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        a = random_angles(rng, 500)
        np.testing.assert_allclose(poses_to_matrices(a), scipy_rotation(a).as_matrix(), atol=1e-14)

    def test_orthonormal(self):
        R = poses_to_matrices(random_angles(np.random.default_rng(2), 200))
        np.testing.assert_allclose(R @ np.swapaxes(R, 1, 2), np.broadcast_to(np.eye(3), R.shape), atol=1e-14)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-14)

    def test_identity(self):
        np.testing.assert_array_equal(euler_to_matrix(PoseLabel(0, 0, 0)), np.eye(3))

    def test_azimuth_is_about_up_axis(self):
        R = euler_to_matrix(PoseLabel(0.7, 0, 0))
        np.testing.assert_allclose(R @ [0, 1, 0], [0, 1, 0], atol=1e-15)

    @settings(max_examples=200)
    @given(st.floats(-math.pi, math.pi - 1e-9), st.floats(-1.5, 1.5), st.floats(-math.pi, math.pi - 1e-9))
    def test_euler_roundtrip(self, a, b, g):
        p = PoseLabel(a, b, g)
        q = matrix_to_euler(euler_to_matrix(p))
        assert geodesic_delta(euler_to_matrix(p), euler_to_matrix(q)) < 1e-9
        np.testing.assert_allclose(q.elevation, p.elevation, atol=1e-9)

    def test_gimbal_lock(self):
        with pytest.raises(GimbalLockError):
            matrix_to_euler(euler_to_matrix(PoseLabel(0.2, math.pi / 2, 0.1)))


class TestGeodesic:
    def test_quaternion_oracle(self):
        rng = np.random.default_rng(3)
        a, b = random_angles(rng, 2000), random_angles(rng, 2000)
        ours = geodesic_delta_batch(poses_to_matrices(a), poses_to_matrices(b))
        np.testing.assert_allclose(ours, quaternion_angle(scipy_rotation(a), scipy_rotation(b)), atol=1e-9)

    def test_identical_is_exactly_zero(self):
        R = poses_to_matrices(random_angles(np.random.default_rng(4), 100))
        assert np.all(geodesic_delta_batch(R, R) == 0.0)

    def test_half_turn(self):
        R = euler_to_matrix(PoseLabel(math.pi / 2, 0, 0))
        np.testing.assert_allclose(geodesic_delta(np.eye(3), R), math.pi / 2, rtol=1e-15)
        np.testing.assert_allclose(normalized_distance(np.eye(3), euler_to_matrix(PoseLabel(-math.pi, 0, 0))), 1.0)

    def test_pairwise_symmetric(self):
        R = poses_to_matrices(random_angles(np.random.default_rng(5), 16))
        D = pairwise_geodesic(R)
        np.testing.assert_array_equal(D, D.T)
        np.testing.assert_array_equal(np.diag(D), 0.0)


class TestPoseTransforms:
    def test_flip_is_involution(self):
        p = PoseLabel(0.4, 0.2, -0.3)
        assert flip_pose(flip_pose(p)) == p

    def test_flip_mirrors_matrix(self):
        # a horizontal flip conjugates the rotation by diag(-1, 1, 1)
        p = PoseLabel(0.4, 0.2, -0.3)
        F = np.diag([-1.0, 1.0, 1.0])
        np.testing.assert_allclose(euler_to_matrix(flip_pose(p)), F @ euler_to_matrix(p) @ F, atol=1e-15)

    def test_rotate_inplane_wraps(self):
        p = rotate_inplane(PoseLabel(0, 0, 3.0), 0.5)
        np.testing.assert_allclose(p.inplane, 3.5 - 2 * math.pi)

    def test_rotate_nonfinite(self):
        with pytest.raises(NonFiniteError):
            rotate_inplane(PoseLabel(0, 0, 0), float("inf"))


class TestCodec:
    def test_examples(self):
        c = encode_angle(math.radians(20), "azimuth")
        assert c.bin_index == 1
        np.testing.assert_allclose(c.offset, 1 / 3, rtol=1e-13)
        c = encode_angle(math.radians(-20), "azimuth")
        assert c.bin_index == -2
        np.testing.assert_allclose(c.offset, 2 / 3, rtol=1e-13)

    def test_boundaries(self):
        c = encode_angle(math.pi / 2, "elevation")
        assert (c.bin_index, c.offset) == (5, 1.0)
        c = encode_angle(-math.pi / 2, "elevation")
        assert (c.bin_index, c.offset) == (-6, 0.0)
        c = encode_angle(PoseLabel(math.pi, 0, 0).azimuth, "azimuth")
        assert (c.bin_index, c.offset) == (-12, 0.0)

    @given(st.floats(-math.pi, math.pi - 1e-12), st.sampled_from(["azimuth", "inplane"]))
    def test_roundtrip(self, theta, kind):
        c = encode_angle(theta, kind)
        assert 0.0 <= c.offset < 1.0
        np.testing.assert_allclose(c.decode(), theta, atol=1e-12)

    def test_vectorised(self):
        x = np.random.default_rng(6).uniform(-math.pi / 2, math.pi / 2, 100)
        b, o = encode_angles(x, "elevation")
        np.testing.assert_allclose((b + o) * BIN_SIZE, x, atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(KeyError):
            encode_angle(0.0, "roll")


class TestHeadDecoding:
    def test_one_hot_roundtrip(self):
        a = random_angles(np.random.default_rng(7), 50)
        a[:, 1] *= 0.99
        np.testing.assert_allclose(decode_head_batch(AngleHeadOutput.one_hot(a)), a, atol=1e-12)

    def test_single_sample(self):
        p = decode_head(AngleHeadOutput.one_hot(np.array([0.1, -0.2, 0.3])))
        np.testing.assert_allclose(p.as_array(), [0.1, -0.2, 0.3], atol=1e-12)

    def test_argmax_tie_picks_first(self):
        out = AngleHeadOutput.one_hot(np.zeros(3))
        for k in KINDS:
            out.scores[k][:] = 1.0
            out.offsets[k][:] = 0.5
        p = decode_head(out)
        np.testing.assert_allclose(p.azimuth, (-12 + 0.5) * BIN_SIZE)
        np.testing.assert_allclose(p.elevation, (-6 + 0.5) * BIN_SIZE)

    def test_legalizes(self):
        out = AngleHeadOutput.one_hot(np.zeros(3))
        out.offsets["elevation"][6] = 0.0
        out.scores["elevation"][:] = 0.0
        out.scores["elevation"][-1] = 1.0
        out.offsets["elevation"][-1] = 1.5
        assert decode_head(out).elevation == math.pi / 2
