"""Angle loss, InfoNCE, pose-weighted contrastive loss and the total objective.

Every loss returns ``(value, gradients)`` with gradients computed in closed
form; pose weights are treated as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateDenominatorError, ShapeMismatchError
from .geometry import (
    BIN_RANGE,
    KINDS,
    AngleHeadOutput,
    PoseLabel,
    encode_angles,
    geodesic_delta_batch,
    pairwise_geodesic,
)

WEIGHT_MODES = ("linear", "sqrt", "square", "constant_one")
LOG_TINY = math.log(1e-300)


@dataclass(frozen=True)
class AngleLossConfig:
    lam: float = 1.0
    smooth_l1_threshold: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.smooth_l1_threshold <= 0:
            raise ValueError("smooth-L1 threshold must be > 0")


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5
    weight_mode: str = "linear"
    # None resolves to True for constant_one (InfoNCE) and False otherwise
    include_positive_in_denominator: Optional[bool] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")

    @property
    def include_positive(self) -> bool:
        if self.include_positive_in_denominator is None:
            return self.weight_mode == "constant_one"
        return self.include_positive_in_denominator


@dataclass(frozen=True)
class TotalLossConfig:
    kappa: float = 1.0

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")


@dataclass
class ContrastBatch:
    """Matched query/key embeddings plus one rotation per sample.

    ``poses`` is an (N, 3, 3) stack; the query at row ``i`` shares its pose
    with key ``i``.
    """

    query_embeddings: np.ndarray
    key_embeddings: np.ndarray
    poses: np.ndarray
    check_norms: bool = True

    def __post_init__(self):
        self.query_embeddings = np.asarray(self.query_embeddings, dtype=np.float64)
        self.key_embeddings = np.asarray(self.key_embeddings, dtype=np.float64)
        self.poses = np.asarray(self.poses, dtype=np.float64)
        q, k = self.query_embeddings, self.key_embeddings
        if q.ndim != 2 or q.shape != k.shape:
            raise ShapeMismatchError(f"query {q.shape} and key {k.shape} must be equal (N, d)")
        if q.shape[0] < 2:
            raise ShapeMismatchError("a contrastive batch needs N >= 2")
        if self.poses.shape != (q.shape[0], 3, 3):
            raise ShapeMismatchError(f"poses must be ({q.shape[0]}, 3, 3), got {self.poses.shape}")
        if self.check_norms:
            for name, f in (("query", q), ("key", k)):
                norms = np.linalg.norm(f, axis=1)
                if np.any(np.abs(norms - 1.0) > 1e-9):
                    raise ValueError(f"{name} embeddings must be L2-normalised")

    def __len__(self):
        return self.query_embeddings.shape[0]


# -- angle loss ----------------------------------------------------------------

def smooth_l1(x, threshold: float = 1.0):
    ax = np.abs(x)
    out = np.where(ax < threshold, 0.5 * x * x / threshold, ax - 0.5 * threshold)
    return float(out) if np.ndim(out) == 0 else out


def smooth_l1_grad(x, threshold: float = 1.0):
    return np.where(np.abs(x) < threshold, x / threshold, np.sign(x))


def _log_softmax(s: np.ndarray) -> np.ndarray:
    m = s.max(axis=1, keepdims=True)
    return s - m - np.log(np.exp(s - m).sum(axis=1, keepdims=True))


def angle_loss(out: AngleHeadOutput, target, cfg: AngleLossConfig = AngleLossConfig()):
    """Bin cross-entropy plus smooth-L1 on the ground-truth bin's offset.

    ``target`` is a :class:`PoseLabel` or an (N, 3) angle array. For batched
    heads the loss is the mean over samples. Returns ``(loss, grad)`` where
    ``grad`` mirrors ``out`` (gradients w.r.t. raw scores and squashed offsets).
    """
    if isinstance(target, PoseLabel):
        target = target.as_array()
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    batched = out.batched
    n = target.shape[0]
    total = 0.0
    gs, go = {}, {}
    for j, kind in enumerate(KINDS):
        s = np.atleast_2d(out.scores[kind])
        o = np.atleast_2d(out.offsets[kind])
        if s.shape[0] != n:
            raise ShapeMismatchError(f"{s.shape[0]} head rows vs {n} targets")
        bins, offs = encode_angles(target[:, j], kind)
        col = bins - BIN_RANGE[kind][0]
        rows = np.arange(n)
        logp = _log_softmax(s)
        resid = o[rows, col] - offs
        total += float(np.sum(-logp[rows, col])) + cfg.lam * float(
            np.sum(smooth_l1(resid, cfg.smooth_l1_threshold)))
        g = np.exp(logp)
        g[rows, col] -= 1.0
        gdelta = np.zeros_like(o)
        gdelta[rows, col] = cfg.lam * smooth_l1_grad(resid, cfg.smooth_l1_threshold)
        gs[kind] = g / n if batched else g[0]
        go[kind] = gdelta / n if batched else gdelta[0]
    return total / n, AngleHeadOutput(gs, go)


# -- contrastive losses ------------------------------------------------------

def distance_weights(d, mode: str) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if mode == "linear":
        return d.copy()
    if mode == "sqrt":
        return np.sqrt(d)
    if mode == "square":
        return d * d
    if mode == "constant_one":
        return np.ones_like(d)
    raise ValueError(f"unknown weight mode {mode!r}")


def pose_weight_matrix(poses: np.ndarray, cfg: ContrastiveConfig) -> np.ndarray:
    """(N, N) denominator weights; row = query, column = key."""
    w = distance_weights(pairwise_geodesic(poses) / math.pi, cfg.weight_mode)
    np.fill_diagonal(w, 1.0 if cfg.include_positive else 0.0)
    return w


def _weighted_nce_rows(logits: np.ndarray, weights: np.ndarray):
    """Per-row ``-l_pos + log sum_k w_k exp(l_k)`` with the positive on the diagonal.

    Returns losses (R,) and d loss / d logits (R, M).
    """
    active = weights > 0
    if not np.all(active.any(axis=1)):
        raise DegenerateDenominatorError("all negatives share the query's pose")
    m = np.where(active, logits, -np.inf).max(axis=1, keepdims=True)
    e = weights * np.exp(np.where(active, logits - m, -np.inf))
    s = e.sum(axis=1, keepdims=True)
    logden = m[:, 0] + np.log(s[:, 0])
    if np.any(logden < LOG_TINY):
        raise DegenerateDenominatorError("weighted denominator underflows 1e-300")
    rows = np.arange(logits.shape[0])
    loss = logden - logits[rows, rows]
    g = e / s
    g[rows, rows] -= 1.0
    return loss, g


def _single_query(batch: ContrastBatch, i: int, w: np.ndarray, tau: float):
    fq = batch.query_embeddings[i]
    K = batch.key_embeddings
    logits = (K @ fq) / tau
    active = w > 0
    if not active.any():
        raise DegenerateDenominatorError("all negatives share the query's pose")
    m = logits[active].max()
    e = w * np.exp(np.where(active, logits - m, -np.inf))
    s = e.sum()
    logden = m + math.log(s)
    if logden < LOG_TINY:
        raise DegenerateDenominatorError("weighted denominator underflows 1e-300")
    g = e / s
    g[i] -= 1.0
    grad_q = np.zeros_like(batch.query_embeddings)
    grad_q[i] = (g @ K) / tau
    grad_k = np.outer(g, fq) / tau
    return float(logden - logits[i]), (grad_q, grad_k)


def info_nce(batch: ContrastBatch, query_index: int, cfg: Optional[ContrastiveConfig] = None):
    """InfoNCE for one query; the positive always sits in the denominator.

    Returns ``(loss, (grad_query_embeddings, grad_key_embeddings))``.
    """
    if not 0 <= query_index < len(batch):
        raise IndexError(f"query index {query_index} out of range")
    tau = cfg.tau if cfg is not None else 0.5
    w = np.ones(len(batch))
    return _single_query(batch, query_index, w, tau)


def pose_nce(batch: ContrastBatch, query_index: int, cfg: ContrastiveConfig = ContrastiveConfig()):
    """Pose-weighted contrastive loss for one query.

    Each key is weighted by ``g(d(R_q, R_k))`` with ``g`` given by
    ``cfg.weight_mode``; the positive gets weight 0 unless the config puts it
    in the denominator. The value may be negative when it is excluded.
    """
    i = query_index
    if not 0 <= i < len(batch):
        raise IndexError(f"query index {i} out of range")
    d = geodesic_delta_batch(batch.poses[i][None], batch.poses) / math.pi
    w = distance_weights(d, cfg.weight_mode)
    w[i] = 1.0 if cfg.include_positive else 0.0
    return _single_query(batch, i, w, cfg.tau)


def batch_contrastive_terms(batch: ContrastBatch, cfg: ContrastiveConfig = ContrastiveConfig()):
    """Per-query losses (N,) and d(mean loss)/d logits, vectorised."""
    Q, K = batch.query_embeddings, batch.key_embeddings
    logits = (Q @ K.T) / cfg.tau
    losses, g = _weighted_nce_rows(logits, pose_weight_matrix(batch.poses, cfg))
    return losses, g


def batch_contrastive_loss(batch: ContrastBatch, cfg: ContrastiveConfig = ContrastiveConfig()):
    """Mean of :func:`pose_nce` over all queries, each matched key the positive.

    Returns ``(loss, (grad_query_embeddings, grad_key_embeddings))``.
    """
    losses, g = batch_contrastive_terms(batch, cfg)
    n = len(batch)
    g = g / n
    grad_q = (g @ batch.key_embeddings) / cfg.tau
    grad_k = (g.T @ batch.query_embeddings) / cfg.tau
    return float(np.sum(losses) / n), (grad_q, grad_k)


def total_loss(angle_part: float, contrastive_part: float,
               cfg: TotalLossConfig = TotalLossConfig()) -> float:
    return float(angle_part) + cfg.kappa * float(contrastive_part)
