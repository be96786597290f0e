"""CSV writers. Every file starts with one ``#`` comment line, then a header row."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .. import __version__
from ..errors import UserError
from .evaluate import AzimuthHistogram, EvalReport, embedding_rows


def provenance(seed: int, config_hash: str) -> str:
    return f"# posecontrast {__version__} seed={seed} config={config_hash}"


def csv_text(header, rows, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(comment.rstrip("\n") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows, comment: str | None = None) -> None:
    try:
        Path(path).write_text(csv_text(header, rows, comment), encoding="utf-8")
    except OSError as exc:
        raise UserError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


LOG_HEADER = ["phase", "epoch", "steps", "lr", "angle_loss", "contrastive_loss", "total_loss"]


def write_training_log(path, logs, comment=None) -> None:
    rows = [[e.phase, e.epoch, e.steps, f"{e.lr:.3g}", f"{e.angle_loss:.9g}",
             f"{e.contrastive_loss:.9g}", f"{e.total_loss:.9g}"] for e in logs]
    write_csv(path, LOG_HEADER, rows, comment)


def write_eval_report(path, report: EvalReport, comment=None) -> None:
    write_csv(path, ["class_id", "count", "acc30", "mederr_deg"], report.rows(), comment)


def write_sample_errors(path, report: EvalReport, comment=None) -> None:
    rows = [[sid, int(c), f"{e:.9f}"] for sid, c, e in
            zip(report.sample_ids, report.sample_classes, report.errors_deg)]
    write_csv(path, ["id", "class_id", "error_deg"], rows, comment)


def write_histograms(path, hists: list[AzimuthHistogram], comment=None) -> None:
    rows = []
    for h in hists:
        for b, n in enumerate(h.unsigned):
            rows.append([h.class_id, "unsigned", 15 * b, 15 * (b + 1), int(n)])
        for b, n in enumerate(h.signed):
            rows.append([h.class_id, "signed", -180 + 15 * b, -165 + 15 * b, int(n)])
    write_csv(path, ["class_id", "kind", "lo_deg", "hi_deg", "count"], rows, comment)


def export_embeddings(model, dataset, split, path, comment=None) -> None:
    header, rows = embedding_rows(model, dataset, split)
    write_csv(path, header, rows, comment)
