"""JSON run-config files.

A config has up to six sections (``renderer``, ``split``, ``train``,
``augment``, ``contrastive``, ``eval``); every key is optional and unknown keys
are rejected with their dotted path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .losses import AngleLossConfig, ContrastiveConfig, TotalLossConfig
from .nn import Architecture, OptimizerConfig
from .nn.model import WIDE_PREDICTOR_HIDDEN
from .pipeline.train import TrainConfig
from .synthdata import AugmentationConfig, RendererConfig, SplitSpec

SECTIONS = ("renderer", "split", "train", "augment", "contrastive", "eval")

# train-section key -> (sub-config attribute or None, field name)
_TRAIN_KEYS = {
    "epochs": (None, "epochs"),
    "batch_size": (None, "batch_size"),
    "seed": (None, "seed"),
    "finetune_epochs": (None, "finetune_epochs"),
    "learning_rate": ("optimizer", "learning_rate"),
    "beta1": ("optimizer", "beta1"),
    "beta2": ("optimizer", "beta2"),
    "epsilon": ("optimizer", "epsilon"),
    "decay_point": ("optimizer", "decay_point"),
    "lambda": ("angle", "lam"),
    "smooth_l1_threshold": ("angle", "smooth_l1_threshold"),
    "kappa": ("total", "kappa"),
    "input_dim": ("arch", "input_dim"),
    "encoder_hidden": ("arch", "encoder_hidden"),
    "feature_dim": ("arch", "feature_dim"),
    "predictor_hidden": ("arch", "predictor_hidden"),
    "wide_predictor": ("arch", None),
}


@dataclass(frozen=True)
class EvalConfig:
    strict_acc30: bool = False


@dataclass
class RunConfig:
    renderer: RendererConfig = field(default_factory=RendererConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig(replace(self.renderer, master_seed=seed), self.split,
                         replace(self.train, seed=seed), self.eval)

    def to_dict(self) -> dict:
        return {"renderer": asdict(self.renderer), "split": asdict(self.split),
                "train": self.train.to_dict(), "eval": asdict(self.eval)}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def _check_keys(section: str, data, allowed) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})")
    return data


def _build(section: str, cls, data: dict):
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def parse_config(doc) -> RunConfig:
    doc = _check_keys("<root>", doc, SECTIONS)
    names = lambda cls: {f.name for f in fields(cls)}
    renderer = _build("renderer", RendererConfig,
                      _check_keys("renderer", doc.get("renderer", {}), names(RendererConfig)))
    split = _build("split", SplitSpec, _check_keys("split", doc.get("split", {}), names(SplitSpec)))
    augment = _build("augment", AugmentationConfig,
                     _check_keys("augment", doc.get("augment", {}), names(AugmentationConfig)))
    contrastive = _build("contrastive", ContrastiveConfig,
                         _check_keys("contrastive", doc.get("contrastive", {}), names(ContrastiveConfig)))
    ev = _build("eval", EvalConfig, _check_keys("eval", doc.get("eval", {}), names(EvalConfig)))

    tdoc = _check_keys("train", doc.get("train", {}), _TRAIN_KEYS)
    top, subs = {}, {"optimizer": {}, "angle": {}, "total": {}, "arch": {}}
    for key, value in tdoc.items():
        sub, name = _TRAIN_KEYS[key]
        if key == "wide_predictor":
            if value:
                subs["arch"].setdefault("predictor_hidden", WIDE_PREDICTOR_HIDDEN)
            continue
        (top if sub is None else subs[sub])[name] = value
    try:
        train = TrainConfig(
            **top,
            optimizer=OptimizerConfig(**subs["optimizer"]),
            angle=AngleLossConfig(**subs["angle"]),
            total=TotalLossConfig(**subs["total"]),
            contrastive=contrastive,
            augment=augment,
            arch=Architecture(**subs["arch"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc
    if train.arch.input_dim != renderer.input_dim:
        raise ConfigError(f"train.input_dim ({train.arch.input_dim}) must equal renderer.input_dim ({renderer.input_dim})")
    return RunConfig(renderer, split, train, ev)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc)
