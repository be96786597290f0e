"""Acc30 / MedErr evaluation, azimuth error histograms and embedding export."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ..errors import EmptySplitError
from ..geometry import decode_head_batch, geodesic_delta_batch, poses_to_matrices, wrap_angles
from ..nn import ModelParams, forward
from ..synthdata import Dataset

ACC_THRESHOLD = math.pi / 6
CHUNK = 512

# anything that maps (dataset, record indices) to an (N, 3) array of predicted angles
Predictor = Callable[[Dataset, np.ndarray], np.ndarray]


def model_predictor(params: ModelParams) -> Predictor:
    def predict(dataset: Dataset, idx: np.ndarray) -> np.ndarray:
        out = []
        for s in range(0, len(idx), CHUNK):
            fp = forward(params, dataset.features(idx[s:s + CHUNK]))
            out.append(decode_head_batch(fp.heads))
        return np.concatenate(out) if out else np.zeros((0, 3))
    return predict


def _as_predictor(model: Union[ModelParams, Predictor]) -> Predictor:
    return model_predictor(model) if isinstance(model, ModelParams) else model


def lower_median(values) -> float:
    """Median; for even counts the lower of the two middle elements."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[(len(v) - 1) // 2])


def _split_indices(dataset: Dataset, split: str, classes) -> np.ndarray:
    idx = dataset.indices(split, classes)
    if len(idx) == 0:
        raise EmptySplitError(f"split {split!r} has no samples" + (f" for classes {list(classes)}" if classes is not None else ""))
    return idx


@dataclass
class EvalReport:
    class_ids: list[int]
    counts: dict[int, int]
    acc30: dict[int, float]
    mederr: dict[int, float]
    mean_acc30: float
    mean_mederr: float
    global_acc30: float
    global_mederr: float
    sample_ids: list[str]
    sample_classes: np.ndarray
    errors_deg: np.ndarray
    strict: bool = False

    def subset(self, classes) -> tuple[float, float]:
        """Unweighted class means (Acc30, MedErr) over ``classes``."""
        cs = [c for c in self.class_ids if c in set(classes)]
        if not cs:
            return float("nan"), float("nan")
        return (sum(self.acc30[c] for c in cs) / len(cs),
                sum(self.mederr[c] for c in cs) / len(cs))

    def rows(self) -> list[list]:
        out = [[c, self.counts[c], f"{self.acc30[c]:.6f}", f"{self.mederr[c]:.6f}"] for c in self.class_ids]
        out.append(["mean", sum(self.counts.values()), f"{self.mean_acc30:.6f}", f"{self.mean_mederr:.6f}"])
        out.append(["global", sum(self.counts.values()), f"{self.global_acc30:.6f}", f"{self.global_mederr:.6f}"])
        return out

    def pretty(self) -> str:
        lines = [f"{'class':>8} {'n':>6} {'Acc30':>7} {'MedErr':>8}"]
        for c in self.class_ids:
            lines.append(f"{c:>8} {self.counts[c]:>6} {self.acc30[c]:>7.3f} {self.mederr[c]:>8.2f}")
        total = sum(self.counts.values())
        lines.append(f"{'mean':>8} {total:>6} {self.mean_acc30:>7.3f} {self.mean_mederr:>8.2f}")
        lines.append(f"{'global':>8} {total:>6} {self.global_acc30:>7.3f} {self.global_mederr:>8.2f}")
        return "\n".join(lines)


def prediction_errors(model, dataset: Dataset, idx: np.ndarray) -> np.ndarray:
    """Geodesic errors in radians between predicted and labelled poses."""
    pred = _as_predictor(model)(dataset, idx)
    return geodesic_delta_batch(poses_to_matrices(dataset.angles[idx]), poses_to_matrices(pred))


def acc30_of(errors_rad, strict: bool = False) -> float:
    e = np.asarray(errors_rad)
    hit = e < ACC_THRESHOLD if strict else e <= ACC_THRESHOLD
    return float(np.count_nonzero(hit)) / len(e)


def evaluate(model, dataset: Dataset, split: str = "val", classes=None, strict: bool = False) -> EvalReport:
    """Per-class, class-mean and instance-weighted Acc30 / MedErr.

    ``strict`` counts an error of exactly 30 degrees as a miss.
    """
    idx = _split_indices(dataset, split, classes)
    err = prediction_errors(model, dataset, idx)
    cls = dataset.class_ids[idx]
    class_ids = sorted(int(c) for c in np.unique(cls))
    counts, acc, med = {}, {}, {}
    for c in class_ids:
        e = err[cls == c]
        counts[c] = len(e)
        acc[c] = acc30_of(e, strict)
        med[c] = math.degrees(lower_median(e))
    k = len(class_ids)
    return EvalReport(
        class_ids, counts, acc, med,
        mean_acc30=sum(acc[c] for c in class_ids) / k,
        mean_mederr=sum(med[c] for c in class_ids) / k,
        global_acc30=acc30_of(err, strict),
        global_mederr=math.degrees(lower_median(err)),
        sample_ids=[dataset.records[i].id for i in idx],
        sample_classes=cls,
        errors_deg=np.degrees(err),
        strict=strict,
    )


@dataclass
class AzimuthHistogram:
    class_id: int
    unsigned: np.ndarray  # 12 bins of 15 deg over [0, 180]
    signed: np.ndarray  # 24 bins of 15 deg over [-180, 180)

    @property
    def total(self) -> int:
        return int(self.unsigned.sum())


def azimuth_errors_deg(model, dataset: Dataset, idx: np.ndarray) -> np.ndarray:
    """Signed azimuth error wrapped to [-180, 180) degrees."""
    pred = _as_predictor(model)(dataset, idx)
    return np.degrees(wrap_angles(pred[:, 0] - dataset.angles[idx, 0]))


def error_histogram(model, dataset: Dataset, split: str = "val", angle: str = "azimuth") -> list[AzimuthHistogram]:
    if angle != "azimuth":
        raise ValueError("only azimuth histograms are supported")
    idx = _split_indices(dataset, split, None)
    signed = azimuth_errors_deg(model, dataset, idx)
    cls = dataset.class_ids[idx]
    out = []
    for c in sorted(int(c) for c in np.unique(cls)):
        s = signed[cls == c]
        ub = np.minimum(np.floor(np.abs(s) / 15.0), 11).astype(int)
        sb = np.clip(np.floor((s + 180.0) / 15.0), 0, 23).astype(int)
        out.append(AzimuthHistogram(c, np.bincount(ub, minlength=12), np.bincount(sb, minlength=24)))
    return out


def embedding_rows(model: ModelParams, dataset: Dataset, split: str = "val") -> tuple[list[str], list[list[str]]]:
    idx = _split_indices(dataset, split, None)
    header = ["id", "class_id", "az_deg", "el_deg", "in_deg"] + [f"f{j}" for j in range(model.arch.feature_dim)]
    rows = []
    for s in range(0, len(idx), CHUNK):
        part = idx[s:s + CHUNK]
        emb = forward(model, dataset.features(part)).embeddings
        for i, e in zip(part, emb):
            deg = np.degrees(dataset.angles[i])
            rows.append([dataset.records[i].id, str(int(dataset.class_ids[i]))]
                        + [f"{d:.9f}" for d in deg] + [f"{x:.9g}" for x in e])
    return header, rows
