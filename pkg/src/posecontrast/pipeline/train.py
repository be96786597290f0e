"""Training loop for the angle + pose-contrastive objective, and few-shot fine-tuning."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..errors import DatasetTooSmallError, NonFiniteLossError, NotEnoughShotsError
from ..geometry import KINDS, NUM_BINS, AngleHeadOutput, poses_to_matrices
from ..losses import (
    AngleLossConfig,
    ContrastBatch,
    ContrastiveConfig,
    TotalLossConfig,
    angle_loss,
    batch_contrastive_loss,
    total_loss,
)
from ..nn import Architecture, ModelParams, OptimizerConfig, adam_step, forward, init_params
from ..seeding import substream
from ..synthdata import AugmentationConfig, Dataset, batch_augment, contrast_views

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    seed: int = 0
    finetune_epochs: int = 2
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    angle: AngleLossConfig = field(default_factory=AngleLossConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    total: TotalLossConfig = field(default_factory=TotalLossConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the contrastive loss needs negatives)")
        if self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = self.arch.to_dict()
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class EpochLog:
    phase: str
    epoch: int
    steps: int
    lr: float
    angle_loss: float
    contrastive_loss: float
    total_loss: float


def _zero_heads(n: int) -> AngleHeadOutput:
    z = {k: np.zeros((n, NUM_BINS[k])) for k in KINDS}
    return AngleHeadOutput(z, {k: v.copy() for k, v in z.items()})


def train_step(params: ModelParams, dataset: Dataset, idx: np.ndarray, cfg: TrainConfig,
               aug_rng, view_rng, lr_progress: float) -> tuple[float, float, float]:
    """One optimisation step on the records ``idx``; returns loss components."""
    samples = dataset.take(idx)
    renderer = dataset.renderer
    feats, angles = batch_augment(samples, cfg.augment, aug_rng, renderer)
    q, k = contrast_views(feats, cfg.augment, view_rng, renderer.nuisance_basis[samples.class_ids])
    n = len(idx)
    fp = forward(params, np.vstack([q, k]))
    query_heads = AngleHeadOutput({kd: s[:n] for kd, s in fp.heads.scores.items()},
                                  {kd: o[:n] for kd, o in fp.heads.offsets.items()})
    la, ga = angle_loss(query_heads, angles, cfg.angle)
    kappa = cfg.total.kappa
    grad_emb = None
    lc = 0.0
    if kappa > 0:
        # zero-norm rows cannot occur with tanh features unless all weights vanish
        batch = ContrastBatch(fp.embeddings[:n], fp.embeddings[n:], poses_to_matrices(angles),
                              check_norms=False)
        lc, (gq, gk) = batch_contrastive_loss(batch, cfg.contrastive)
        grad_emb = kappa * np.vstack([gq, gk])
    lt = total_loss(la, lc, cfg.total)
    if not math.isfinite(lt):
        raise NonFiniteLossError(f"non-finite loss at step {params.step}: angle={la}, contrastive={lc}")
    zero = _zero_heads(n)
    heads_grad = AngleHeadOutput({kd: np.vstack([ga.scores[kd], zero.scores[kd]]) for kd in KINDS},
                                 {kd: np.vstack([ga.offsets[kd], zero.offsets[kd]]) for kd in KINDS})
    grads = fp.backward(grad_emb, heads_grad)
    adam_step(params, grads, cfg.optimizer, lr_progress)
    return la, lc, lt


def _run_epochs(params: ModelParams, dataset: Dataset, pool: np.ndarray, cfg: TrainConfig,
                epochs: range, phase: str, progress: Callable[[int], float],
                on_epoch: Optional[Callable[[ModelParams, EpochLog], None]] = None) -> list[EpochLog]:
    bs = cfg.batch_size
    n_batches = len(pool) // bs
    logs = []
    for epoch in epochs:
        order = substream(cfg.seed, f"{phase}/shuffle", epoch).permutation(pool)
        aug_rng = substream(cfg.seed, f"{phase}/augment", epoch)
        view_rng = substream(cfg.seed, f"{phase}/views", epoch)
        sums = np.zeros(3)
        lr = cfg.optimizer.lr_at(progress(params.step))
        for b in range(n_batches):
            p = progress(params.step)
            sums += train_step(params, dataset, order[b * bs:(b + 1) * bs], cfg, aug_rng, view_rng, p)
        means = sums / max(n_batches, 1)
        entry = EpochLog(phase, epoch + 1, params.step, lr, *map(float, means))
        params.meta[f"{phase}_epochs_completed"] = epoch + 1
        logs.append(entry)
        log.info("%s epoch %d: angle %.4f contrast %.4f total %.4f",
                 phase, epoch + 1, *means)
        if on_epoch is not None:
            on_epoch(params, entry)
    return logs


def train(dataset: Dataset, cfg: TrainConfig, resume: Optional[ModelParams] = None,
          stop_after: Optional[int] = None, on_epoch=None) -> tuple[ModelParams, list[EpochLog]]:
    """Train from scratch (or continue ``resume``) on the seen-class train split.

    ``stop_after`` ends the run after that many total epochs, leaving a state
    that :func:`train` can later resume bit-exactly.
    """
    pool = dataset.train_indices()
    n_batches = len(pool) // cfg.batch_size
    if n_batches == 0:
        raise DatasetTooSmallError(f"{len(pool)} training samples < batch size {cfg.batch_size}")
    total_steps = cfg.epochs * n_batches
    if resume is None:
        params = init_params(cfg.arch, cfg.seed)
        params.meta = {"config": cfg.digest(), "train_epochs_completed": 0}
    else:
        params = resume.copy()
        if params.meta.get("config") != cfg.digest():
            log.warning("resuming a checkpoint trained with a different config")
    start = int(params.meta.get("train_epochs_completed", 0))
    end = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    logs = _run_epochs(params, dataset, pool, cfg, range(start, end), "train",
                       lambda step: step / total_steps, on_epoch)
    return params, logs


def select_shots(dataset: Dataset, classes, shots: int, seed: int) -> np.ndarray:
    chosen = []
    for c in classes:
        pool = dataset.indices("train", [c])
        if len(pool) < shots:
            raise NotEnoughShotsError(f"class {c}: {shots} shots requested, {len(pool)} available")
        pick = substream(seed, "shots", int(c)).choice(pool, size=shots, replace=False)
        chosen.append(np.sort(pick))
    return np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)


def finetune_fewshot(params: ModelParams, dataset: Dataset, shots: int, cfg: TrainConfig,
                     classes=None) -> tuple[ModelParams, list[EpochLog]]:
    """Continue training on base samples plus ``shots`` records per novel class.

    Runs ``cfg.finetune_epochs`` epochs at the decayed learning rate.
    """
    classes = list(dataset.split_spec.unseen_classes if classes is None else classes)
    out = params.copy()
    if shots == 0:
        log.warning("0-shot fine-tuning requested; returning the model unchanged")
        return out, []
    novel = select_shots(dataset, classes, shots, cfg.seed)
    pool = np.concatenate([dataset.train_indices(), novel])
    if len(pool) < cfg.batch_size:
        raise DatasetTooSmallError("fine-tune set smaller than one batch")
    logs = _run_epochs(out, dataset, pool, cfg, range(cfg.finetune_epochs), "finetune",
                       lambda step: 1.0)
    return out, logs
