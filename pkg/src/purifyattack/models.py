"""Small MLPs: the noise predictor and the downstream classifier."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import adcore as ad
from .rng import Streams


def time_embed(t, dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(t/10000^(2i/dim))..., cos(...)...]``.

    Scalar ``t`` gives shape ``(dim,)``; an array of times gives ``(len(t), dim)``.
    """
    if dim <= 0 or dim % 2:
        raise ValueError(f"time embedding dim must be a positive even integer, got {dim}")
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    args = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


@dataclass
class MlpParams:
    """Fully connected tanh network; ``layer_dims`` lists every width in order."""

    layer_dims: list[int]
    weights: list
    biases: list
    time_embed_dim: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = tuple(ad.value(w).shape)
            if shape != (self.layer_dims[i], self.layer_dims[i + 1]):
                raise ValueError(f"layer {i}: weight shape {shape} does not chain with {self.layer_dims}")
            if tuple(ad.value(b).shape) != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i}: bias shape {ad.value(b).shape}")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0] - self.time_embed_dim

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = ad.value(w)
            out[f"b{i}"] = ad.value(b)
        return out

    def with_arrays(self, tensors: Mapping) -> "MlpParams":
        n = len(self.weights)
        return MlpParams(list(self.layer_dims),
                         [tensors[f"W{i}"] for i in range(n)],
                         [tensors[f"b{i}"] for i in range(n)],
                         self.time_embed_dim)

    def bind(self, tape: ad.Tape) -> tuple["MlpParams", dict[str, ad.Node]]:
        """Copy whose tensors are variables on ``tape`` (for training)."""
        leaves = {k: tape.var(v) for k, v in self.arrays().items()}
        return self.with_arrays(leaves), leaves


@dataclass
class ClassifierParams(MlpParams):
    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def __post_init__(self):
        super().__post_init__()
        if self.layer_dims[-1] < 2:
            raise ValueError("classifier needs at least 2 output classes")

    def with_arrays(self, tensors: Mapping) -> "ClassifierParams":
        n = len(self.weights)
        return ClassifierParams(list(self.layer_dims),
                                [tensors[f"W{i}"] for i in range(n)],
                                [tensors[f"b{i}"] for i in range(n)],
                                self.time_embed_dim)


def _init_layers(dims: Sequence[int], streams: Streams | None, label: str, zero: bool):
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            std = np.sqrt(2.0 / (fan_in + fan_out))
            w = std * streams.normal(f"{label}/W{i}", (fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return weights, biases


def init_eps_model(data_dim: int, hidden: Sequence[int] = (128, 128, 128), time_embed_dim: int = 16,
                   streams: Streams | None = None, zero: bool = False) -> MlpParams:
    dims = [data_dim + time_embed_dim, *hidden, data_dim]
    w, b = _init_layers(dims, streams, "init/eps", zero)
    return MlpParams(dims, w, b, time_embed_dim)


def init_classifier(data_dim: int, num_classes: int, hidden: Sequence[int] = (128, 128, 128),
                    streams: Streams | None = None, zero: bool = False) -> ClassifierParams:
    dims = [data_dim, *hidden, num_classes]
    w, b = _init_layers(dims, streams, "init/clf", zero)
    return ClassifierParams(dims, w, b, 0)


def _mlp(p: MlpParams, h):
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = ad.badd(ad.matmul(h, w), b)
        if i < last:
            h = ad.tanh(h)
    return h


def _check_input(p: MlpParams, x) -> None:
    shape = ad.value(x).shape
    if len(shape) != 2 or shape[1] != p.in_dim:
        raise ad.ShapeError(f"expected input of shape (batch, {p.in_dim}), got {shape}")


def eps_theta(p: MlpParams, x, t):
    """Predicted noise for a batch ``x`` of shape (B, d) at time ``t``.

    ``t`` is a scalar or one time per row; it may be fractional (the SDE
    sampler evaluates between grid points).
    """
    _check_input(p, x)
    batch = ad.value(x).shape[0]
    emb = time_embed(t, p.time_embed_dim)
    emb = np.broadcast_to(emb, (batch, p.time_embed_dim)) if emb.ndim == 1 else emb
    if emb.shape[0] != batch:
        raise ad.ShapeError(f"got {emb.shape[0]} times for a batch of {batch}")
    return _mlp(p, ad.concat([x, emb], axis=1))


def classify(p: ClassifierParams, x):
    """Logits of shape (B, K)."""
    _check_input(p, x)
    return _mlp(p, x)


def predict(p: ClassifierParams, x) -> np.ndarray:
    """Argmax label per row; ties resolve to the lowest index."""
    return np.argmax(ad.value(classify(p, x)), axis=1)


def cross_entropy(logits, y):
    """``-log softmax(logits)[y]`` per row.  1-D logits give a scalar."""
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    k = ad.value(logits).shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label {labels.tolist()} outside [0, {k})")
    if ad.value(logits).ndim == 1:
        # (K,) -> (1, K): the bias-add lift keeps the op on the tape
        row = ad.badd(np.zeros((1, k)), logits)
        return ad.tsum(ad.softmax_ce(row, labels))
    return ad.softmax_ce(logits, labels)


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimState) -> None:
    """In-place Adam update of ``params`` with bias correction."""
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"missing gradients for {missing}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for k, w in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != w.shape:
            raise ad.ShapeError(f"gradient for {k} has shape {g.shape}, parameter {w.shape}")
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[k] = m
        state.v[k] = v
        params[k] = w - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
