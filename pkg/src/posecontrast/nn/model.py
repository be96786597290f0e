"""Encoder MLP and angle predictor heads."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeMismatchError
from ..geometry import KINDS, NUM_BINS, AngleHeadOutput
from .autograd import Tensor, backward_many

HEAD_DIM = sum(2 * NUM_BINS[k] for k in KINDS)
WIDE_PREDICTOR_HIDDEN = (800, 400, 200)


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 64
    encoder_hidden: tuple[int, ...] = (128,)
    feature_dim: int = 128
    predictor_hidden: tuple[int, ...] = (128, 64)

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "predictor_hidden", tuple(int(h) for h in self.predictor_hidden))
        dims = (self.input_dim, self.feature_dim, *self.encoder_hidden, *self.predictor_hidden)
        if any(int(d) < 1 for d in dims):
            raise ValueError("all layer sizes must be >= 1")

    @classmethod
    def wide_predictor(cls, **kw) -> "Architecture":
        return cls(predictor_hidden=WIDE_PREDICTOR_HIDDEN, **kw)

    def layers(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) for every dense layer, in forward order."""
        enc = [self.input_dim, *self.encoder_hidden, self.feature_dim]
        pred = [self.feature_dim, *self.predictor_hidden, HEAD_DIM]
        out = [(f"enc{i}", a, b) for i, (a, b) in enumerate(zip(enc, enc[1:]))]
        out += [(f"pred{i}", a, b) for i, (a, b) in enumerate(zip(pred, pred[1:]))]
        return out

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, fan_in, fan_out in self.layers():
            shapes[f"{name}.W"] = (fan_in, fan_out)
            shapes[f"{name}.b"] = (fan_out,)
        return shapes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["predictor_hidden"] = list(self.predictor_hidden)
        return d


@dataclass
class ModelParams:
    """Weights, adaptive-moment state and step counter of one model."""

    arch: Architecture
    weights: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if list(self.weights) != list(shapes):
            raise ShapeMismatchError("parameter names do not match the architecture")
        for name, shape in shapes.items():
            if self.weights[name].shape != shape:
                raise ShapeMismatchError(f"{name}: expected {shape}, got {self.weights[name].shape}")
            self.m.setdefault(name, np.zeros(shape))
            self.v.setdefault(name, np.zeros(shape))

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())


def init_params(arch: Architecture, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng([seed, 0x1A17])
    weights = {}
    for name, fan_in, fan_out in arch.layers():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights[f"{name}.b"] = np.zeros(fan_out)
    return ModelParams(arch, weights, seed=seed)


@dataclass
class ForwardPass:
    embeddings: np.ndarray
    heads: AngleHeadOutput
    zero_norm: np.ndarray
    features: np.ndarray
    _leaves: dict
    _emb: Tensor
    _scores: dict
    _offsets: dict

    def backward(self, grad_embeddings=None, grad_heads: AngleHeadOutput | None = None):
        """Parameter gradients given upstream gradients at the outputs.

        ``grad_heads`` holds gradients w.r.t. raw bin scores and squashed
        offsets, as returned by the angle loss. Missing parts count as zero.
        """
        for t in self._leaves.values():
            t.grad = None  # leaves unreachable from the seeded outputs
        outs, grads = [], []
        if grad_embeddings is not None:
            outs.append(self._emb)
            grads.append(grad_embeddings)
        if grad_heads is not None:
            for kind in KINDS:
                outs += [self._scores[kind], self._offsets[kind]]
                grads += [np.atleast_2d(grad_heads.scores[kind]),
                          np.atleast_2d(grad_heads.offsets[kind])]
        backward_many(outs, grads)
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in self._leaves.items()}


def forward(params: ModelParams, x) -> ForwardPass:
    """Run encoder and predictor on a (batch, input_dim) array.

    Embeddings are the L2-normalised encoder outputs; the predictor reads the
    un-normalised encoder output.
    """
    x = np.asarray(x, dtype=np.float64)
    arch = params.arch
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ShapeMismatchError(f"expected (batch, {arch.input_dim}) input, got {x.shape}")
    leaves = {k: Tensor(w, requires_grad=True) for k, w in params.weights.items()}
    h = Tensor(x)
    layers = arch.layers()
    n_enc = len(arch.encoder_hidden) + 1
    for name, _, _ in layers[:n_enc]:
        h = (h @ leaves[f"{name}.W"] + leaves[f"{name}.b"]).tanh()
    feat = h
    emb, zero = feat.normalize_rows()
    for name, _, _ in layers[n_enc:-1]:
        h = (h @ leaves[f"{name}.W"] + leaves[f"{name}.b"]).tanh()
    name = layers[-1][0]
    raw = h @ leaves[f"{name}.W"] + leaves[f"{name}.b"]
    scores, offsets = {}, {}
    col = 0
    for kind in KINDS:
        nb = NUM_BINS[kind]
        scores[kind] = raw[:, col:col + nb]
        offsets[kind] = raw[:, col + nb:col + 2 * nb].sigmoid()
        col += 2 * nb
    heads = AngleHeadOutput({k: t.data for k, t in scores.items()},
                            {k: t.data for k, t in offsets.items()})
    return ForwardPass(emb.data, heads, zero, feat.data, leaves, emb, scores, offsets)
