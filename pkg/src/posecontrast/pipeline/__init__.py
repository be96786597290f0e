from .evaluate import (
    ACC_THRESHOLD,
    AzimuthHistogram,
    EvalReport,
    acc30_of,
    error_histogram,
    evaluate,
    lower_median,
    model_predictor,
)
from .reports import export_embeddings
from .sweep import SWEEPABLE, sweep
from .train import EpochLog, TrainConfig, finetune_fewshot, select_shots, train

__all__ = [
    "ACC_THRESHOLD",
    "AzimuthHistogram",
    "EpochLog",
    "EvalReport",
    "SWEEPABLE",
    "TrainConfig",
    "acc30_of",
    "error_histogram",
    "evaluate",
    "export_embeddings",
    "finetune_fewshot",
    "lower_median",
    "model_predictor",
    "select_shots",
    "sweep",
    "train",
]
