"""Command-line entry point: ``posecontrast <command> [options]``.

Exit codes: 0 success, 1 internal error, 2 bad user input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import __version__
from .config import RunConfig, load_config
from .errors import UserError
from .gradcheck import run_gradcheck
from .nn import load_checkpoint, save_checkpoint
from .pipeline import error_histogram, evaluate, export_embeddings, finetune_fewshot, train
from .pipeline.reports import (
    provenance,
    write_csv,
    write_eval_report,
    write_histograms,
    write_training_log,
)
from .pipeline.sweep import SWEEP_HEADER, sweep
from .synthdata import generate_dataset, load_dataset

log = logging.getLogger("posecontrast")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    return cfg


def _comment(cfg: RunConfig) -> str:
    return provenance(cfg.train.seed, cfg.digest())


def _write_bytes(fn, *a):
    try:
        fn(*a)
    except OSError as exc:
        raise UserError(f"cannot write output: {exc}") from exc


def cmd_generate(args) -> int:
    cfg = _run_config(args)
    ds = generate_dataset(cfg.renderer, cfg.split)
    _write_bytes(ds.save, args.out)
    for w in ds.warnings:
        log.warning("unseen class %s has no seen class in its geometry group", w.get("class_id"))
    print(f"wrote {len(ds)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    ds = load_dataset(args.data)
    resume = load_checkpoint(args.resume, expected_arch=cfg.train.arch) if args.resume else None
    params, logs = train(ds, cfg.train, resume=resume, stop_after=args.stop_after)
    _write_bytes(save_checkpoint, params, args.out_checkpoint)
    log_path = args.log or f"{args.out_checkpoint}.log.csv"
    write_training_log(log_path, logs, _comment(cfg))
    print(f"trained {len(logs)} epochs, {params.step} steps; checkpoint {args.out_checkpoint}, log {log_path}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _run_config(args)
    ds = load_dataset(args.data)
    params = load_checkpoint(args.checkpoint)
    tcfg = replace(cfg.train, arch=params.arch)
    out, logs = finetune_fewshot(params, ds, args.shots, tcfg, classes=args.classes)
    _write_bytes(save_checkpoint, out, args.out_checkpoint)
    if args.log:
        write_training_log(args.log, logs, _comment(cfg))
    print(f"fine-tuned {len(logs)} epochs with {args.shots} shots; checkpoint {args.out_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    ds = load_dataset(args.data)
    params = load_checkpoint(args.checkpoint)
    strict = args.strict or cfg.eval.strict_acc30
    report = evaluate(params, ds, args.split, classes=args.classes, strict=strict)
    comment = _comment(cfg)
    if args.report:
        write_eval_report(args.report, report, comment)
    if args.histogram:
        write_histograms(args.histogram, error_histogram(params, ds, args.split), comment)
    if args.embeddings:
        export_embeddings(params, ds, args.split, args.embeddings, comment)
    print(report.pretty())
    return 0


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = run_gradcheck(seed, args.instances, inject_sign_flip=args.inject_sign_flip)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UserError("--values is empty")
    ds = load_dataset(args.data) if args.data else generate_dataset(cfg.renderer, cfg.split)
    rows, _ = sweep(args.param, values, cfg.train, ds, strict=cfg.eval.strict_acc30)
    if args.out:
        write_csv(args.out, SWEEP_HEADER, rows, _comment(cfg))
    print(",".join(SWEEP_HEADER))
    for row in rows:
        print(",".join(str(x) for x in row))
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posecontrast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None,
                       help="master seed; overrides every seed in the config (default 0)")
        if config:
            p.add_argument("--config", help="JSON run config")
        p.set_defaults(func=fn)
        return p

    p = command("generate", cmd_generate, "generate a synthetic dataset")
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--stop-after", type=int, help="stop after this many total epochs")
    p.add_argument("--log", help="training log CSV (default: <checkpoint>.log.csv)")

    p = command("finetune", cmd_finetune, "few-shot fine-tuning on novel classes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--classes", type=_int_list, help="comma-separated class ids (default: unseen)")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--log")

    p = command("eval", cmd_eval, "evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--classes", type=_int_list)
    p.add_argument("--strict", action="store_true", help="count exactly 30 degrees as a miss")
    p.add_argument("--report", help="per-class report CSV")
    p.add_argument("--histogram", help="azimuth error histogram CSV")
    p.add_argument("--embeddings", help="embedding export CSV")

    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient checks", config=False)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)

    p = command("sweep", cmd_sweep, "train and evaluate over one hyperparameter")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--data", help="dataset file (default: generate from config)")
    p.add_argument("--out", help="sweep table CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UserError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
