"""Viewpoint geometry: Euler angles, rotation matrices, geodesic distance and
the bin/offset angle codec.

Rotations use ``R = Rz(inplane) @ Rx(-elevation) @ Ry(azimuth)`` with y as
the world up-axis. Angles are radians; azimuth and in-plane rotation live in
the half-open interval [-pi, pi), elevation in [-pi/2, pi/2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GimbalLockError, NonFiniteError

KINDS = ("azimuth", "elevation", "inplane")
BIN_SIZE = math.pi / 12
BIN_RANGE = {"azimuth": (-12, 11), "elevation": (-6, 5), "inplane": (-12, 11)}
NUM_BINS = {kind: hi - lo + 1 for kind, (lo, hi) in BIN_RANGE.items()}
GIMBAL_MARGIN = 1e-6

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


def wrap_angle(theta: float) -> float:
    """Map ``theta`` to [-pi, pi); values already in range are returned as-is."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise NonFiniteError(f"cannot wrap non-finite angle {theta!r}")
    if -math.pi <= theta < math.pi:
        return theta
    r = math.fmod(theta + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    out = r - math.pi
    if out >= math.pi:
        out -= TWO_PI
    return out


def wrap_angles(theta) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("cannot wrap non-finite angles")
    inside = (theta >= -math.pi) & (theta < math.pi)
    r = np.fmod(theta + math.pi, TWO_PI)
    r = np.where(r < 0.0, r + TWO_PI, r)
    out = r - math.pi
    out = np.where(out >= math.pi, out - TWO_PI, out)
    return np.where(inside, theta, out)


def clamp_elevation(beta: float) -> float:
    return min(max(float(beta), -HALF_PI), HALF_PI)


@dataclass(frozen=True)
class PoseLabel:
    """Object viewpoint (azimuth, elevation, in-plane), in radians."""

    azimuth: float
    elevation: float
    inplane: float

    def __post_init__(self):
        object.__setattr__(self, "azimuth", wrap_angle(self.azimuth))
        if not math.isfinite(self.elevation):
            raise NonFiniteError("elevation must be finite")
        object.__setattr__(self, "elevation", clamp_elevation(self.elevation))
        object.__setattr__(self, "inplane", wrap_angle(self.inplane))

    @classmethod
    def from_degrees(cls, az: float, el: float, inp: float) -> "PoseLabel":
        return cls(math.radians(az), math.radians(el), math.radians(inp))

    def as_array(self) -> np.ndarray:
        return np.array([self.azimuth, self.elevation, self.inplane])

    def degrees(self) -> tuple[float, float, float]:
        return (math.degrees(self.azimuth), math.degrees(self.elevation),
                math.degrees(self.inplane))


def legalize_poses(angles) -> np.ndarray:
    """Wrap/clamp an (N, 3) array of (azimuth, elevation, inplane) rows."""
    angles = np.array(angles, dtype=np.float64, copy=True)
    angles[..., 0] = wrap_angles(angles[..., 0])
    angles[..., 1] = np.clip(angles[..., 1], -HALF_PI, HALF_PI)
    angles[..., 2] = wrap_angles(angles[..., 2])
    return angles


def poses_to_matrices(angles) -> np.ndarray:
    """Rotation matrices for an (..., 3) array of Euler angles -> (..., 3, 3)."""
    angles = np.asarray(angles, dtype=np.float64)
    ca, sa = np.cos(angles[..., 0]), np.sin(angles[..., 0])
    cb, sb = np.cos(angles[..., 1]), np.sin(angles[..., 1])
    cg, sg = np.cos(angles[..., 2]), np.sin(angles[..., 2])
    # Rx(-elevation) @ Ry(azimuth), expanded
    m0 = (ca, np.zeros_like(ca), sa)
    m1 = (-sb * sa, cb, sb * ca)
    m2 = (-cb * sa, -sb, cb * ca)
    rows = (
        tuple(cg * a - sg * b for a, b in zip(m0, m1)),
        tuple(sg * a + cg * b for a, b in zip(m0, m1)),
        m2,
    )
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def euler_to_matrix(p: PoseLabel) -> np.ndarray:
    return poses_to_matrices(p.as_array())


def matrix_to_euler(R) -> PoseLabel:
    """Inverse of :func:`euler_to_matrix`; raises near elevation = +-pi/2."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    beta = -math.atan2(R[2, 1], math.hypot(R[2, 0], R[2, 2]))
    if abs(beta) >= HALF_PI - GIMBAL_MARGIN:
        raise GimbalLockError(f"elevation {beta!r} too close to +-pi/2")
    alpha = math.atan2(-R[2, 0], R[2, 2])
    gamma = math.atan2(-R[0, 1], R[1, 1])
    return PoseLabel(alpha, beta, gamma)


def _relative(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    # Ra^T Rb with a fixed summation order, so identical inputs give an
    # exactly symmetric product
    return (Ra[..., 0, :, None] * Rb[..., 0, None, :]
            + Ra[..., 1, :, None] * Rb[..., 1, None, :]
            + Ra[..., 2, :, None] * Rb[..., 2, None, :])


def _angle_of(M: np.ndarray) -> np.ndarray:
    cos = 0.5 * (M[..., 0, 0] + M[..., 1, 1] + M[..., 2, 2] - 1.0)
    sx = M[..., 2, 1] - M[..., 1, 2]
    sy = M[..., 0, 2] - M[..., 2, 0]
    sz = M[..., 1, 0] - M[..., 0, 1]
    sin = 0.5 * np.sqrt(sx * sx + sy * sy + sz * sz)
    return np.arctan2(sin, np.clip(cos, -1.0, 1.0))


def geodesic_delta(Rq, Rk) -> float:
    """Rotation angle of ``Rq^T Rk`` in [0, pi].

    Evaluated as ``atan2(sin, cos)`` of the relative rotation, which equals
    ``arccos((tr(Rq^T Rk) - 1) / 2)`` but stays accurate near 0 and pi and
    returns exactly 0 for identical inputs.
    """
    return float(_angle_of(_relative(np.asarray(Rq, float), np.asarray(Rk, float))))


def geodesic_delta_batch(Ra, Rb) -> np.ndarray:
    """Elementwise geodesic angle for broadcastable (..., 3, 3) stacks."""
    return _angle_of(_relative(np.asarray(Ra, float), np.asarray(Rb, float)))


def pairwise_geodesic(Rs) -> np.ndarray:
    """(N, N) matrix of geodesic angles between all pairs of a stack."""
    Rs = np.asarray(Rs, dtype=np.float64)
    return geodesic_delta_batch(Rs[:, None], Rs[None, :])


def normalized_distance(Rq, Rk) -> float:
    return geodesic_delta(Rq, Rk) / math.pi


def flip_pose(p: PoseLabel) -> PoseLabel:
    """Pose label after a horizontal image flip."""
    return PoseLabel(wrap_angle(-p.azimuth), p.elevation, wrap_angle(-p.inplane))


def rotate_inplane(p: PoseLabel, phi: float) -> PoseLabel:
    """Pose label after rotating the image by ``phi``."""
    if not math.isfinite(phi):
        raise NonFiniteError("rotation angle must be finite")
    return PoseLabel(p.azimuth, p.elevation, wrap_angle(p.inplane + phi))


# -- bin / offset codec ------------------------------------------------------

@dataclass(frozen=True)
class BinOffsetCode:
    angle_kind: str
    bin_index: int
    offset: float

    def decode(self) -> float:
        return (self.bin_index + self.offset) * BIN_SIZE


def encode_angles(theta, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised codec: returns integer bin indices and offsets in [0, 1]."""
    lo, hi = BIN_RANGE[kind]
    x = np.asarray(theta, dtype=np.float64) / BIN_SIZE
    bins = np.clip(np.floor(x), lo, hi)
    off = x - bins
    # rounding can leave offset == 1 below a bin edge; move to the next bin
    carry = (off >= 1.0) & (bins < hi)
    bins = np.where(carry, bins + 1, bins)
    off = np.where(carry, off - 1.0, off)
    return bins.astype(np.int64), off


def encode_angle(theta: float, kind: str) -> BinOffsetCode:
    if kind not in BIN_RANGE:
        raise KeyError(f"unknown angle kind {kind!r}")
    b, off = encode_angles(theta, kind)
    return BinOffsetCode(kind, int(b), float(off))


def decode_code(code: BinOffsetCode) -> float:
    return code.decode()


@dataclass
class AngleHeadOutput:
    """Bin scores (pre-softmax) and squashed offsets for each angle kind.

    Arrays are (num_bins,) for a single sample or (batch, num_bins). Column
    ``i`` corresponds to bin index ``i + BIN_RANGE[kind][0]``.
    """

    scores: dict[str, np.ndarray]
    offsets: dict[str, np.ndarray]

    @property
    def batched(self) -> bool:
        return self.scores["azimuth"].ndim == 2

    def __len__(self):
        return self.scores["azimuth"].shape[0] if self.batched else 1

    def sample(self, i: int) -> "AngleHeadOutput":
        return AngleHeadOutput({k: v[i] for k, v in self.scores.items()},
                               {k: v[i] for k, v in self.offsets.items()})

    def probabilities(self, kind: str) -> np.ndarray:
        s = self.scores[kind]
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    @classmethod
    def one_hot(cls, angles, peak: float = 1.0) -> "AngleHeadOutput":
        """Head output whose decoding reproduces ``angles`` (N, 3) or (3,)."""
        angles = np.asarray(angles, dtype=np.float64)
        single = angles.ndim == 1
        angles = np.atleast_2d(angles)
        scores, offsets = {}, {}
        for j, kind in enumerate(KINDS):
            bins, offs = encode_angles(angles[:, j], kind)
            col = bins - BIN_RANGE[kind][0]
            s = np.zeros((len(angles), NUM_BINS[kind]))
            o = np.zeros_like(s)
            rows = np.arange(len(angles))
            s[rows, col] = peak
            o[rows, col] = offs
            scores[kind], offsets[kind] = (s[0], o[0]) if single else (s, o)
        return cls(scores, offsets)


def decode_head_batch(out: AngleHeadOutput) -> np.ndarray:
    """Decode to an (N, 3) angle array; argmax ties go to the lowest bin."""
    cols = []
    for kind in KINDS:
        s = np.atleast_2d(out.scores[kind])
        o = np.atleast_2d(out.offsets[kind])
        j = np.argmax(s, axis=1)
        delta = o[np.arange(len(j)), j]
        cols.append((j + BIN_RANGE[kind][0] + delta) * BIN_SIZE)
    return legalize_poses(np.stack(cols, axis=1))


def decode_head(out: AngleHeadOutput) -> PoseLabel:
    return PoseLabel(*decode_head_batch(out)[0])
