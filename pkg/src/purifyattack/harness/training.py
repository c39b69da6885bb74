"""Adam training loops for the noise model and the classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import adcore as ad
from ..diffusion import NoiseSchedule, ddpm_loss, score_matching_loss
from ..models import (ClassifierParams, MlpParams, OptimState, adam_step, classify, cross_entropy,
                      init_classifier, init_eps_model, predict)
from ..rng import Streams
from .checkpoint import CheckpointFile
from .data import Dataset


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 128
    lr: float = 2e-3
    hidden: tuple[int, ...] = (128, 128, 128)
    time_embed_dim: int = 16
    objective: str = "score"
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("need steps >= 0, batch_size >= 1, lr > 0")
        if self.objective not in ("score", "ddpm"):
            raise ValueError(f"unknown objective {self.objective!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _batch(st: Streams, step: int, n: int, size: int) -> np.ndarray:
    return st.integers(f"train/batch/{step}", 0, n, min(size, n))


def _fit(params: MlpParams, loss_fn, cfg: TrainConfig, st: Streams, n: int):
    """Generic Adam loop; ``loss_fn(bound_params, idx, step)`` returns a scalar node."""
    arrays = {k: np.array(v) for k, v in params.arrays().items()}
    opt = OptimState(lr=cfg.lr)
    curve = []
    for step in range(cfg.steps):
        idx = _batch(st, step, n, cfg.batch_size)
        with ad.Tape() as tape:
            bound, leaves = params.with_arrays(arrays).bind(tape)
            loss = loss_fn(bound, idx, step)
            val = float(ad.value(loss))
            if not np.isfinite(val):
                raise FloatingPointError(f"training diverged at step {step} (loss={val})")
            grads = tape.backward(loss)
            adam_step(arrays, {k: grads[leaf] for k, leaf in leaves.items()}, opt)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            curve.append([step, val])
    return params.with_arrays(arrays), curve


def train_diffusion(data: Dataset, schedule: NoiseSchedule, cfg: TrainConfig = TrainConfig()) -> CheckpointFile:
    """Train the noise predictor on ``data`` with the score-matching or weighted DDPM loss."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    st = Streams(cfg.seed)
    params = init_eps_model(data.x.shape[1], cfg.hidden, cfg.time_embed_dim, st)
    x = data.x

    def loss_fn(p, idx, step):
        batch = x[idx]
        if cfg.objective == "score":
            return score_matching_loss(p, batch, schedule, st, f"train/eps/{step}")
        return ddpm_loss(p, batch, schedule, st, f"train/eps/{step}")

    trained, curve = _fit(params, loss_fn, cfg, st, len(x))
    meta = {"seed": cfg.seed, "steps": cfg.steps, "final_loss": curve[-1][1] if curve else None,
            "loss_curve": curve, "train": cfg.to_dict(), "dataset": data.spec.to_dict()}
    return CheckpointFile("eps", trained, schedule, meta)


def train_classifier(data: Dataset, cfg: TrainConfig = TrainConfig(hidden=(64, 64), steps=1500)) -> CheckpointFile:
    """Fit the classifier with cross-entropy; records the final train accuracy."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    k = int(data.spec.num_classes)
    if data.x.shape[1] != data.spec.data_dim:
        raise ValueError(f"dataset has dim {data.x.shape[1]}, spec says {data.spec.data_dim}")
    st = Streams(cfg.seed)
    params = init_classifier(data.x.shape[1], k, cfg.hidden, st)
    x, y = data.x, data.y

    def loss_fn(p, idx, step):
        return ad.tmean(cross_entropy(classify(p, x[idx]), y[idx]))

    trained, curve = _fit(params, loss_fn, cfg, st, len(x))
    trained = ClassifierParams(trained.layer_dims, trained.weights, trained.biases, 0)
    acc = float(np.mean(predict(trained, x) == y))
    meta = {"seed": cfg.seed, "steps": cfg.steps, "final_loss": curve[-1][1] if curve else None,
            "loss_curve": curve, "train_accuracy": acc, "train": cfg.to_dict(),
            "dataset": data.spec.to_dict()}
    return CheckpointFile("classifier", trained, None, meta)
