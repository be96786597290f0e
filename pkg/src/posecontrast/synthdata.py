"""Synthetic stand-in for posed object images.

A sample is rendered as ``x = B_c phi(R) + C_c z + sigma * eta`` where
``phi(R)`` holds the nine rotation-matrix entries plus random Fourier
features of them, ``B_c = G_group(c) + eps * P_c`` ties classes of one
geometry group together, and ``C_c z`` is a class-specific nuisance term.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BadClassIdError, FormatError, InvalidSplitError
from .geometry import PoseLabel, flip_pose, legalize_poses, poses_to_matrices, rotate_inplane
from .seeding import substream

log = logging.getLogger(__name__)

FORMAT_NAME = "posecontrast-dataset"
FORMAT_VERSION = 1
# overall gain of the nuisance term relative to the pose term
NUISANCE_GAIN = 1.0
FOURIER_SCALE = 1.0

ELEVATION_LIMIT = math.pi / 3
INPLANE_LIMIT = math.pi / 12


@dataclass(frozen=True)
class RendererConfig:
    master_seed: int = 0
    num_classes: int = 10
    num_geometry_groups: int = 4
    input_dim: int = 64
    fourier_dim: int = 32
    nuisance_dim: int = 8
    class_perturbation_scale: float = 0.1
    noise_sigma: float = 0.05

    def __post_init__(self):
        if min(self.num_classes, self.num_geometry_groups, self.input_dim,
               self.fourier_dim, self.nuisance_dim) < 1:
            raise ValueError("all renderer dimensions must be >= 1")
        if self.num_geometry_groups > self.num_classes:
            raise ValueError("num_geometry_groups must not exceed num_classes")
        if self.class_perturbation_scale < 0 or self.noise_sigma < 0:
            raise ValueError("perturbation and noise scales must be >= 0")

    def group_of(self, class_id: int) -> int:
        return int(class_id) % self.num_geometry_groups


class Renderer:
    """Deterministic (class, pose, nuisance) -> feature map."""

    def __init__(self, cfg: RendererConfig):
        self.cfg = cfg
        seed = cfg.master_seed
        phi_dim = 9 + 2 * cfg.fourier_dim
        self.projection = FOURIER_SCALE * substream(seed, "projection").standard_normal((cfg.fourier_dim, 9))
        g = substream(seed, "geometry").standard_normal((cfg.num_geometry_groups, cfg.input_dim, phi_dim))
        p = substream(seed, "class-perturbation").standard_normal((cfg.num_classes, cfg.input_dim, phi_dim))
        c = substream(seed, "nuisance-basis").standard_normal((cfg.num_classes, cfg.input_dim, cfg.nuisance_dim))
        groups = np.array([cfg.group_of(k) for k in range(cfg.num_classes)])
        self.pose_basis = (g[groups] + cfg.class_perturbation_scale * p) / math.sqrt(phi_dim)
        self.nuisance_basis = NUISANCE_GAIN * c / math.sqrt(cfg.nuisance_dim)

    def _check_classes(self, class_ids: np.ndarray):
        if np.any((class_ids < 0) | (class_ids >= self.cfg.num_classes)):
            raise BadClassIdError(f"class ids must lie in [0, {self.cfg.num_classes})")

    def pose_features(self, angles) -> np.ndarray:
        """phi(R) for an (N, 3) angle array -> (N, 9 + 2m)."""
        r = poses_to_matrices(angles).reshape(-1, 9)
        proj = r @ self.projection.T
        return np.concatenate([r, np.cos(proj), np.sin(proj)], axis=1)

    def nuisance(self, nuisance_seed: int) -> tuple[np.ndarray, np.ndarray]:
        """(z, eta) for one sample."""
        rng = substream(self.cfg.master_seed, "nuisance", nuisance_seed)
        return rng.standard_normal(self.cfg.nuisance_dim), rng.standard_normal(self.cfg.input_dim)

    def render_arrays(self, class_ids, angles, z, eta) -> np.ndarray:
        class_ids = np.asarray(class_ids, dtype=np.int64)
        self._check_classes(class_ids)
        phi = self.pose_features(np.atleast_2d(angles))
        x = np.einsum("nij,nj->ni", self.pose_basis[class_ids], phi)
        x += np.einsum("nij,nj->ni", self.nuisance_basis[class_ids], np.atleast_2d(z))
        x += self.cfg.noise_sigma * np.atleast_2d(eta)
        return x


def render(cfg: RendererConfig | Renderer, class_id: int, pose: PoseLabel, nuisance_seed: int) -> np.ndarray:
    renderer = cfg if isinstance(cfg, Renderer) else Renderer(cfg)
    if not 0 <= class_id < renderer.cfg.num_classes:
        raise BadClassIdError(f"class id {class_id} out of range")
    z, eta = renderer.nuisance(nuisance_seed)
    return renderer.render_arrays([class_id], pose.as_array()[None], z[None], eta[None])[0]


# -- dataset -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    seen_classes: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    unseen_classes: tuple[int, ...] = (8, 9)
    n_train: int = 5000
    n_val: int = 1000
    # extra train-split records per unseen class, only used for few-shot fine-tuning
    novel_pool_per_class: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seen_classes", tuple(int(c) for c in self.seen_classes))
        object.__setattr__(self, "unseen_classes", tuple(int(c) for c in self.unseen_classes))


@dataclass(frozen=True)
class SampleRecord:
    id: str
    class_id: int
    geometry_group: int
    split: str
    pose: PoseLabel
    nuisance_seed: int

    def to_json(self) -> str:
        az, el, inp = self.pose.degrees()
        return (f'{{"id": {json.dumps(self.id)}, "class_id": {self.class_id}, '
                f'"geometry_group": {self.geometry_group}, "split": "{self.split}", '
                f'"pose_deg": {{"az": {az:.9f}, "el": {el:.9f}, "in": {inp:.9f}}}, '
                f'"nuisance_seed": {self.nuisance_seed}}}')

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        if d["split"] not in ("train", "val"):
            raise FormatError(f"bad split {d['split']!r} for record {d.get('id')}")
        pd = d["pose_deg"]
        return cls(str(d["id"]), int(d["class_id"]), int(d["geometry_group"]), d["split"],
                   PoseLabel.from_degrees(pd["az"], pd["el"], pd["in"]), int(d["nuisance_seed"]))


@dataclass
class SampleArrays:
    """Columnar view of some records, ready for vectorised rendering."""

    ids: list
    class_ids: np.ndarray
    angles: np.ndarray
    z: np.ndarray
    eta: np.ndarray

    def __len__(self):
        return len(self.ids)


@dataclass
class Dataset:
    renderer_cfg: RendererConfig
    split_spec: SplitSpec
    records: list[SampleRecord]
    warnings: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.renderer = Renderer(self.renderer_cfg)
        n = len(self.records)
        self.class_ids = np.array([r.class_id for r in self.records], dtype=np.int64)
        self.angles = np.array([r.pose.as_array() for r in self.records]).reshape(n, 3)
        nz = [self.renderer.nuisance(r.nuisance_seed) for r in self.records]
        self.z = np.array([a for a, _ in nz]).reshape(n, self.renderer_cfg.nuisance_dim)
        self.eta = np.array([b for _, b in nz]).reshape(n, self.renderer_cfg.input_dim)
        self.splits = np.array([r.split for r in self.records])

    def __len__(self):
        return len(self.records)

    def indices(self, split: str, classes=None) -> np.ndarray:
        mask = self.splits == split
        if classes is not None:
            mask &= np.isin(self.class_ids, list(classes))
        return np.flatnonzero(mask)

    def train_indices(self) -> np.ndarray:
        """Training records of seen classes (excludes the few-shot pool)."""
        return self.indices("train", self.split_spec.seen_classes)

    def take(self, idx) -> SampleArrays:
        idx = np.asarray(idx, dtype=np.int64)
        return SampleArrays([self.records[i].id for i in idx], self.class_ids[idx],
                            self.angles[idx], self.z[idx], self.eta[idx])

    def features(self, idx) -> np.ndarray:
        s = self.take(idx)
        return self.renderer.render_arrays(s.class_ids, s.angles, s.z, s.eta)

    def header(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "renderer": asdict(self.renderer_cfg),
            "split": {k: list(v) if isinstance(v, tuple) else v
                      for k, v in asdict(self.split_spec).items()},
            "warnings": self.warnings,
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [r.to_json() for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
        if header.get("format") != FORMAT_NAME:
            raise FormatError(f"{path}: not a {FORMAT_NAME} file")
        records = [SampleRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        return Dataset(RendererConfig(**header["renderer"]), SplitSpec(**header["split"]),
                       records, header.get("warnings", []))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed dataset ({exc})") from exc


def validate_split(cfg: RendererConfig, spec: SplitSpec) -> list[dict]:
    """Raise on malformed splits; return warnings for unsupported unseen classes."""
    seen, unseen = set(spec.seen_classes), set(spec.unseen_classes)
    if not seen:
        raise InvalidSplitError("at least one seen class is required")
    if seen & unseen:
        raise InvalidSplitError(f"classes {sorted(seen & unseen)} are both seen and unseen")
    bad = [c for c in seen | unseen if not 0 <= c < cfg.num_classes]
    if bad:
        raise InvalidSplitError(f"class ids {sorted(bad)} outside [0, {cfg.num_classes})")
    if len(spec.seen_classes) != len(seen) or len(spec.unseen_classes) != len(unseen):
        raise InvalidSplitError("duplicate class ids in split")
    if spec.n_train < 0 or spec.n_val < 0 or spec.novel_pool_per_class < 0:
        raise InvalidSplitError("sample counts must be >= 0")
    seen_groups = {cfg.group_of(c) for c in seen}
    warnings = []
    for c in spec.unseen_classes:
        if cfg.group_of(c) not in seen_groups:
            msg = f"unseen class {c} has no seen class in geometry group {cfg.group_of(c)}"
            log.warning(msg)
            warnings.append({"kind": "unsupported_unseen_class", "class_id": c,
                             "geometry_group": cfg.group_of(c), "message": msg})
    return warnings


def sample_poses(rng: np.random.Generator, n: int) -> np.ndarray:
    az = rng.uniform(-math.pi, math.pi, n)
    el = rng.uniform(-ELEVATION_LIMIT, ELEVATION_LIMIT, n)
    inp = rng.uniform(-INPLANE_LIMIT, INPLANE_LIMIT, n)
    return legalize_poses(np.stack([az, el, inp], axis=1))


def _quantize(angles: np.ndarray) -> list[PoseLabel]:
    # records keep the file's precision so generated and reloaded data agree
    return [PoseLabel.from_degrees(*(float(f"{math.degrees(a):.9f}") for a in row)) for row in angles]


def generate_dataset(cfg: RendererConfig, split: SplitSpec, path=None) -> Dataset:
    warnings = validate_split(cfg, split)
    rng = substream(cfg.master_seed, "dataset")
    plan = []
    seen = list(split.seen_classes)
    everyone = sorted(split.seen_classes + split.unseen_classes)
    plan += [("train", f"train-{i:06d}", seen[i % len(seen)]) for i in range(split.n_train)]
    plan += [("val", f"val-{i:06d}", everyone[i % len(everyone)]) for i in range(split.n_val)]
    for c in split.unseen_classes:
        plan += [("train", f"shot-{c:03d}-{i:04d}", c) for i in range(split.novel_pool_per_class)]
    poses = _quantize(sample_poses(rng, len(plan)))
    seeds = rng.integers(0, 2**63 - 1, size=len(plan), dtype=np.int64)
    records = [SampleRecord(rid, c, cfg.group_of(c), sp, pose, int(s))
               for (sp, rid, c), pose, s in zip(plan, poses, seeds)]
    ds = Dataset(cfg, split, records, warnings)
    if path is not None:
        ds.save(path)
    return ds


# -- augmentation ----------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationConfig:
    flip_probability: float = 0.5
    rotation_range_deg: float = 15.0
    pose_invariant_noise: float = 0.02
    nuisance_jitter: float = 0.1

    def __post_init__(self):
        if not 0 <= self.flip_probability <= 1:
            raise ValueError("flip_probability must lie in [0, 1]")
        if min(self.rotation_range_deg, self.pose_invariant_noise, self.nuisance_jitter) < 0:
            raise ValueError("augmentation ranges must be >= 0")


def augment_poses(angles, cfg: AugmentationConfig, rng: np.random.Generator,
                  flip=None, phi=None) -> np.ndarray:
    """Apply random flips then in-plane rotations to an (N, 3) label array.

    ``flip`` (bool array) and ``phi`` (radians) override the random draws.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    n = len(angles)
    u = rng.random(n)
    r = math.radians(cfg.rotation_range_deg)
    draw = rng.uniform(-r, r, n)
    flip = u < cfg.flip_probability if flip is None else np.broadcast_to(flip, (n,))
    phi = draw if phi is None else np.broadcast_to(np.asarray(phi, dtype=np.float64), (n,))
    out = []
    for row, f, p in zip(angles, flip, phi):
        pose = PoseLabel(*row)
        if f:
            pose = flip_pose(pose)
        out.append(rotate_inplane(pose, float(p)).as_array())
    return np.array(out).reshape(n, 3)


def batch_augment(samples: SampleArrays, cfg: AugmentationConfig, rng: np.random.Generator,
                  renderer: Renderer, flip=None, phi=None) -> tuple[np.ndarray, np.ndarray]:
    """Pose-variant augmentation; the feature is re-rendered from the new pose."""
    angles = augment_poses(samples.angles, cfg, rng, flip=flip, phi=phi)
    feats = renderer.render_arrays(samples.class_ids, angles, samples.z, samples.eta)
    return feats, angles


def contrast_views(features, cfg: AugmentationConfig, rng: np.random.Generator,
                   nuisance_basis: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Two pose-preserving views of each feature row.

    Each view adds Gaussian noise and, when ``nuisance_basis`` (N, D, k) is
    given, a jitter of the nuisance code pushed through the renderer.
    """
    features = np.asarray(features, dtype=np.float64)
    views = []
    for _ in range(2):
        v = features + cfg.pose_invariant_noise * rng.standard_normal(features.shape)
        if nuisance_basis is not None:
            xi = rng.standard_normal((nuisance_basis.shape[0], nuisance_basis.shape[2]))
            v = v + cfg.nuisance_jitter * np.einsum("nij,nj->ni", nuisance_basis, xi)
        views.append(v)
    return views[0], views[1]


__all__ = [
    "AugmentationConfig", "Dataset", "Renderer", "RendererConfig", "SampleArrays",
    "SampleRecord", "SplitSpec", "augment_poses", "batch_augment", "contrast_views",
    "generate_dataset", "load_dataset", "render", "sample_poses", "validate_split",
]
