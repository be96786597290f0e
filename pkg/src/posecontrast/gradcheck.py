"""Finite-difference verification of every analytic gradient.

Each check draws random instances, compares the analytic gradient with
central differences and reports the worst relative error
``||analytic - numeric|| / max(||analytic||, ||numeric||)`` per instance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geometry import BIN_SIZE, KINDS, NUM_BINS, AngleHeadOutput, poses_to_matrices
from .losses import (
    AngleLossConfig,
    ContrastBatch,
    ContrastiveConfig,
    TotalLossConfig,
    angle_loss,
    batch_contrastive_loss,
    info_nce,
    pose_nce,
    smooth_l1,
    smooth_l1_grad,
    total_loss,
)
from .nn import Architecture, forward, init_params
from .seeding import substream
from .synthdata import sample_poses

LOSS_STEP = 1e-6
MODEL_STEP = 1e-6
LOSS_TOL = 1e-6
MODEL_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<28} n={self.instances:<4} "
                f"max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e} ({self.seconds:.2f}s)")


def rel_error(a, n) -> float:
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0


def numeric_grad(f, x: np.ndarray, h: float, coords=None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (modified in place, restored)."""
    coords = range(x.size) if coords is None else coords
    flat = x.reshape(-1)
    out = np.zeros(len(coords))
    for j, c in enumerate(coords):
        old = flat[c]
        flat[c] = old + h
        fp = f()
        flat[c] = old - h
        fm = f()
        flat[c] = old
        out[j] = (fp - fm) / (2 * h)
    return out


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _random_batch(rng, n=None, d=None):
    n = int(rng.integers(2, 9)) if n is None else n
    d = int(rng.integers(2, 9)) if d is None else d
    poses = poses_to_matrices(sample_poses(rng, n))
    return ContrastBatch(_unit_rows(rng, n, d), _unit_rows(rng, n, d), poses)


def _random_heads(rng, n):
    scores = {k: 2.0 * rng.standard_normal((n, NUM_BINS[k])) for k in KINDS}
    offsets = {k: rng.uniform(0.02, 0.98, (n, NUM_BINS[k])) for k in KINDS}
    return AngleHeadOutput(scores, offsets)


def _off_boundary_poses(rng, n):
    # keep each angle away from bin edges so the target bin is stable under perturbation
    angles = sample_poses(rng, n)
    frac = angles / BIN_SIZE - np.floor(angles / BIN_SIZE)
    return np.where(np.abs(frac - 0.5) > 0.45, angles + 0.2 * BIN_SIZE, angles)


def check_smooth_l1(rng, instances, sign):
    worst = 0.0
    for _ in range(instances):
        x = np.array([rng.uniform(-3, 3)])
        t = rng.uniform(0.2, 2.0)
        while abs(abs(x[0]) - t) < 1e-3:
            x[0] += 0.01
        num = numeric_grad(lambda: smooth_l1(x[0], t), x, LOSS_STEP)
        worst = max(worst, rel_error(sign * smooth_l1_grad(x, t), num))
    return worst


def check_angle_loss(rng, instances, sign):
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 4))
        heads = _random_heads(rng, n)
        target = _off_boundary_poses(rng, n)
        cfg = AngleLossConfig(lam=float(rng.uniform(0, 2)), smooth_l1_threshold=float(rng.uniform(0.3, 2)))
        _, g = angle_loss(heads, target, cfg)
        for store, gstore in ((heads.scores, g.scores), (heads.offsets, g.offsets)):
            for k in KINDS:
                arr = store[k]
                num = numeric_grad(lambda: angle_loss(heads, target, cfg)[0], arr, LOSS_STEP)
                worst = max(worst, rel_error(sign * gstore[k], num))
    return worst


def _check_contrastive(rng, instances, sign, fn):
    worst = 0.0
    for _ in range(instances):
        b = _random_batch(rng)
        i = int(rng.integers(0, len(b)))
        _, (gq, gk) = fn(b, i)
        b.check_norms = False
        for arr, g in ((b.query_embeddings, gq), (b.key_embeddings, gk)):
            num = numeric_grad(lambda: fn(b, i)[0], arr, LOSS_STEP)
            worst = max(worst, rel_error(sign * g, num))
    return worst


def check_info_nce(rng, instances, sign):
    tau = float(rng.uniform(0.1, 1.0))
    return _check_contrastive(rng, instances, sign,
                              lambda b, i: info_nce(b, i, ContrastiveConfig(tau=tau)))


def make_pose_nce_check(mode):
    def check(rng, instances, sign):
        cfg = ContrastiveConfig(tau=float(rng.uniform(0.1, 1.0)), weight_mode=mode)
        return _check_contrastive(rng, instances, sign, lambda b, i: pose_nce(b, i, cfg))
    return check


def check_batch_contrastive(rng, instances, sign):
    cfg = ContrastiveConfig(tau=0.5, weight_mode="linear")
    return _check_contrastive(rng, instances, sign, lambda b, i: batch_contrastive_loss(b, cfg))


def check_total_loss(rng, instances, sign):
    worst = 0.0
    for _ in range(instances):
        cfg = TotalLossConfig(kappa=float(rng.uniform(0, 2)))
        parts = rng.standard_normal(2)
        num = numeric_grad(lambda: total_loss(parts[0], parts[1], cfg), parts, LOSS_STEP)
        worst = max(worst, rel_error(sign * np.array([1.0, cfg.kappa]), num))
    return worst


GRADCHECK_ARCH = Architecture(input_dim=12, encoder_hidden=(10,), feature_dim=8, predictor_hidden=(10, 8))


def model_objective(params, x_q, x_k, angles, kappa=1.0, contrast=ContrastiveConfig()):
    """Total loss of one two-view batch and its parameter gradients."""
    n = len(angles)
    fp = forward(params, np.vstack([x_q, x_k]))
    qh = AngleHeadOutput({k: s[:n] for k, s in fp.heads.scores.items()},
                         {k: o[:n] for k, o in fp.heads.offsets.items()})
    la, ga = angle_loss(qh, angles)
    batch = ContrastBatch(fp.embeddings[:n], fp.embeddings[n:], poses_to_matrices(angles), check_norms=False)
    lc, (gq, gk) = batch_contrastive_loss(batch, contrast)
    pad = lambda a: np.vstack([a, np.zeros_like(a)])
    heads_grad = AngleHeadOutput({k: pad(v) for k, v in ga.scores.items()},
                                 {k: pad(v) for k, v in ga.offsets.items()})
    grads = fp.backward(kappa * np.vstack([gq, gk]), heads_grad)
    return total_loss(la, lc, TotalLossConfig(kappa)), grads


def check_whole_model(rng, instances, sign, coords_per_instance=50):
    worst = 0.0
    arch = GRADCHECK_ARCH
    for inst in range(instances):
        params = init_params(arch, seed=int(rng.integers(0, 2**31)))
        for w in params.weights.values():
            w += 0.1 * rng.standard_normal(w.shape)
        n = 4
        angles = _off_boundary_poses(rng, n)
        xq = rng.standard_normal((n, arch.input_dim))
        xk = xq + 0.1 * rng.standard_normal(xq.shape)
        _, grads = model_objective(params, xq, xk, angles)
        names = list(params.weights)
        sizes = [params.weights[k].size for k in names]
        picks = rng.choice(sum(sizes), size=coords_per_instance, replace=False)
        offsets = np.cumsum([0] + sizes)
        ana, num = [], []
        for p in picks:
            j = int(np.searchsorted(offsets, p, side="right") - 1)
            name, c = names[j], int(p - offsets[j])
            w = params.weights[name]
            num.append(numeric_grad(lambda: model_objective(params, xq, xk, angles)[0], w, MODEL_STEP, [c])[0])
            ana.append(grads[name].reshape(-1)[c])
        worst = max(worst, rel_error(sign * np.array(ana), np.array(num)))
    return worst


CHECKS = [
    ("smooth_l1", check_smooth_l1, LOSS_TOL),
    ("angle_loss", check_angle_loss, LOSS_TOL),
    ("info_nce", check_info_nce, LOSS_TOL),
    ("pose_nce[linear]", make_pose_nce_check("linear"), LOSS_TOL),
    ("pose_nce[sqrt]", make_pose_nce_check("sqrt"), LOSS_TOL),
    ("pose_nce[square]", make_pose_nce_check("square"), LOSS_TOL),
    ("pose_nce[constant_one]", make_pose_nce_check("constant_one"), LOSS_TOL),
    ("batch_contrastive_loss", check_batch_contrastive, LOSS_TOL),
    ("total_loss", check_total_loss, LOSS_TOL),
    ("whole_model", check_whole_model, MODEL_TOL),
]


def run_gradcheck(seed: int = 0, instances: int = 100, inject_sign_flip: bool = False) -> list[CheckResult]:
    """Run every check; ``inject_sign_flip`` negates analytic gradients (negative control)."""
    sign = -1.0 if inject_sign_flip else 1.0
    results = []
    for name, fn, tol in CHECKS:
        rng = substream(seed, f"gradcheck/{name}")
        t0 = time.perf_counter()
        err = fn(rng, instances, sign)
        results.append(CheckResult(name, instances, err, tol, time.perf_counter() - t0))
    return results
