from __future__ import annotations

from dataclasses import replace

from ..errors import UnknownParameterError, UserError
from ..losses import WEIGHT_MODES
from ..synthdata import Dataset
from .evaluate import evaluate
from .train import TrainConfig, train

SWEEPABLE = ("tau", "kappa", "lambda", "weight_mode")
SWEEP_HEADER = ["param", "value", "mean_acc30", "mean_mederr", "global_acc30", "global_mederr",
                "seen_acc30", "seen_mederr", "unseen_acc30", "unseen_mederr"]


def parse_value(param: str, raw):
    if param not in SWEEPABLE:
        raise UnknownParameterError(f"cannot sweep {param!r}; choose from {SWEEPABLE}")
    if param == "weight_mode":
        if raw not in WEIGHT_MODES:
            raise UserError(f"weight_mode must be one of {WEIGHT_MODES}, got {raw!r}")
        return raw
    try:
        return float(raw)
    except ValueError as exc:
        raise UserError(f"{param} value {raw!r} is not a number") from exc


def apply(cfg: TrainConfig, param: str, value) -> TrainConfig:
    if param == "tau":
        return replace(cfg, contrastive=replace(cfg.contrastive, tau=value))
    if param == "kappa":
        return replace(cfg, total=replace(cfg.total, kappa=value))
    if param == "lambda":
        return replace(cfg, angle=replace(cfg.angle, lam=value))
    if param == "weight_mode":
        # constant_one is InfoNCE: the positive stays in the denominator
        return replace(cfg, contrastive=replace(cfg.contrastive, weight_mode=value,
                                                include_positive_in_denominator=None))
    raise UnknownParameterError(f"cannot sweep {param!r}; choose from {SWEEPABLE}")


def sweep(param: str, values, base: TrainConfig, dataset: Dataset, strict: bool = False):
    """Train and evaluate once per value with the base seed.

    Returns ``(rows, reports)``: table rows matching ``SWEEP_HEADER`` and the
    per-value :class:`EvalReport` objects.
    """
    parsed = [parse_value(param, v) for v in values]
    rows, reports = [], []
    seen = dataset.split_spec.seen_classes
    unseen = dataset.split_spec.unseen_classes
    for value in parsed:
        params, _ = train(dataset, apply(base, param, value))
        rep = evaluate(params, dataset, "val", strict=strict)
        sa, sm = rep.subset(seen)
        ua, um = rep.subset(unseen)
        rows.append([param, value] + [f"{x:.6f}" for x in (rep.mean_acc30, rep.mean_mederr,
                                                          rep.global_acc30, rep.global_mederr,
                                                          sa, sm, ua, um)])
        reports.append(rep)
    return rows, reports
