from .autograd import Tensor, backward_many
from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    HEAD_DIM,
    Architecture,
    ForwardPass,
    ModelParams,
    forward,
    init_params,
)
from .optim import OptimizerConfig, adam_step

__all__ = [
    "HEAD_DIM",
    "Architecture",
    "ForwardPass",
    "ModelParams",
    "OptimizerConfig",
    "Tensor",
    "adam_step",
    "backward_many",
    "forward",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
]
