"""Noise schedules, DDPM and VP-SDE steps, training losses and purification.

Discrete steps are indexed ``t = 1..T``.  The VP-SDE uses continuous time
``u in [0, 1]`` with a piecewise-constant rate ``beta(u) = T * beta_i`` on
``[(i-1)/T, i/T)``, so one discrete step and one unit of ``u * T`` describe
the same amount of noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import adcore as ad
from .chainckpt import ChainRecord, StepSpec, forward_record
from .models import MlpParams, eps_theta
from .rng import Streams


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)
    sigmas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
        # index 0 is a placeholder so that sigmas[t] is sigma_t
        sigmas = np.zeros(betas.size + 1)
        sigmas[1:] = np.sqrt(betas * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]))
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars), ("sigmas", sigmas)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.betas.size

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])

    def sigma(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigmas[t])

    # continuous-time view
    def _interval(self, u: float) -> int:
        return int(min(self.T, max(1, np.floor(u * self.T + 1e-9) + 1)))

    def beta_at(self, u: float) -> float:
        """Continuous rate beta(u) for u in [0, 1]."""
        return self.T * float(self.betas[self._interval(u) - 1])

    def int_beta(self, u: float) -> float:
        """Integral of beta over [0, u]."""
        i = self._interval(u)
        full = float(np.sum(self.betas[: i - 1]))
        return full + (u * self.T - (i - 1)) * float(self.betas[i - 1])

    def alpha_bar_at(self, u: float) -> float:
        return float(np.exp(-self.int_beta(u)))

    def to_dict(self) -> dict:
        return {"betas": [float(b) for b in self.betas]}


def linear_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    return NoiseSchedule(np.linspace(beta_min, beta_max, T))


DEFAULT_SCHEDULE = dict(T=50, beta_min=1e-3, beta_max=5e-2)


def score_from_eps(eps, alpha_bar):
    """s_theta = -eps_theta / sqrt(1 - alpha_bar); the only place the rescaling lives."""
    c = -1.0 / np.sqrt(1.0 - alpha_bar)
    if np.ndim(c) == 0:
        return ad.scale(eps, float(c))
    return ad.mul(eps, np.broadcast_to(np.asarray(c)[:, None], ad.value(eps).shape))


def score_theta(p: MlpParams, x, u: float, s: NoiseSchedule):
    """Score model at continuous time ``u > 0``."""
    return score_from_eps(eps_theta(p, x, u * s.T), s.alpha_bar_at(u))


# ------------------------------------------------------------------ DDPM


def diffuse_closed_form(x0, t: int, eps, s: NoiseSchedule):
    s._check_t(t)
    if ad.value(eps).shape != ad.value(x0).shape:
        raise ad.ShapeError(f"eps shape {ad.value(eps).shape} != x0 shape {ad.value(x0).shape}")
    ab = s.alpha_bar(t)
    return ad.add(ad.scale(x0, np.sqrt(ab)), ad.scale(eps, np.sqrt(1.0 - ab)))


def ddpm_forward_step(x, t: int, s: NoiseSchedule, z=None):
    """One transition x_{t-1} -> x_t of the forward Markov chain."""
    out = ad.scale(x, np.sqrt(s.alpha(t)))
    if z is None:
        return out
    return ad.add(out, ad.scale(z, np.sqrt(s.beta(t))))


def ddpm_reverse_step(x_t, t: int, p: MlpParams, z, s: NoiseSchedule):
    """Ancestral step x_t -> x_{t-1}; the noise term vanishes at t = 1."""
    s._check_t(t)
    coef = s.beta(t) / np.sqrt(1.0 - s.alpha_bar(t))
    mean = ad.scale(ad.sub(x_t, ad.scale(eps_theta(p, x_t, t), coef)), 1.0 / np.sqrt(s.alpha(t)))
    if z is None or t == 1:
        return mean
    if ad.value(z).shape != ad.value(x_t).shape:
        raise ad.ShapeError(f"z shape {ad.value(z).shape} != x shape {ad.value(x_t).shape}")
    return ad.add(mean, ad.scale(z, s.sigma(t)))


def _loss_draws(batch: np.ndarray, s: NoiseSchedule, streams: Streams, label: str, t_low: int):
    if t_low > s.T:
        raise ValueError(f"schedule with T={s.T} has no steps >= {t_low}")
    t = streams.integers(f"{label}/t", t_low, s.T + 1, batch.shape[0])
    eps = streams.normal(f"{label}/eps", batch.shape)
    return t, eps


def ddpm_weights(s: NoiseSchedule) -> np.ndarray:
    """w_t = beta_t^2 / (2 sigma_t^2 alpha_t (1 - alpha_bar_t)); entry 1 is undefined (nan)."""
    w = np.full(s.T + 1, np.nan)
    t = np.arange(2, s.T + 1)
    b = s.betas[t - 1]
    w[t] = b * b / (2.0 * s.sigmas[t] ** 2 * s.alphas[t - 1] * (1.0 - s.alpha_bars[t]))
    return w


def ddpm_loss(p: MlpParams, batch, s: NoiseSchedule, streams: Streams, label: str = "ddpm_loss",
              draws: tuple | None = None, weighted: bool = True):
    """Monte-Carlo weighted noise-prediction loss with t uniform on {2..T}.

    ``draws=(t, eps)`` overrides the random draws.  ``weighted=False`` uses
    unit weights.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    t, eps = draws if draws is not None else _loss_draws(batch, s, streams, label, 2)
    ab = s.alpha_bars[t][:, None]
    xt = np.sqrt(ab) * batch + np.sqrt(1.0 - ab) * eps
    sq = ad.tsum(ad.square(ad.sub(eps, eps_theta(p, xt, t))), axis=1)
    if weighted:
        w = ddpm_weights(s)[t]
        if np.any(np.isnan(w)):
            raise ValueError("ddpm_loss weights are undefined at t=1")
        sq = ad.mul(sq, w)
    return ad.tmean(sq)


def score_matching_loss(p: MlpParams, batch, s: NoiseSchedule, streams: Streams,
                        label: str = "score_loss", draws: tuple | None = None):
    """lambda(t) ||s_theta(x_t, t) - grad log p(x_t | x_0)||^2 with lambda = 1 - alpha_bar_t."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    t, eps = draws if draws is not None else _loss_draws(batch, s, streams, label, 1)
    ab = s.alpha_bars[t]
    xt = np.sqrt(ab)[:, None] * batch + np.sqrt(1.0 - ab)[:, None] * eps
    target = -(xt - np.sqrt(ab)[:, None] * batch) / (1.0 - ab)[:, None]
    s_theta = score_from_eps(eps_theta(p, xt, t), ab)
    sq = ad.tsum(ad.square(ad.sub(s_theta, target)), axis=1)
    return ad.tmean(ad.mul(sq, 1.0 - ab))


# ---------------------------------------------------------------- VP-SDE


def sde_forward_step(x, u: float, dt: float, s: NoiseSchedule, dw=None):
    """Euler-Maruyama step of dx = -1/2 beta x du + sqrt(beta) dw."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    b = s.beta_at(u)
    out = ad.scale(x, 1.0 - 0.5 * b * dt)
    if dw is None:
        return out
    return ad.add(out, ad.scale(dw, np.sqrt(b)))


def sde_reverse_drift(x, u: float, p: MlpParams, s: NoiseSchedule):
    """f(x, u) - g(u)^2 s_theta(x, u) with f = -1/2 beta x and g^2 = beta."""
    b = s.beta_at(u)
    return ad.add(ad.scale(x, -0.5 * b), ad.scale(score_theta(p, x, u, s), -b))


def sde_reverse_step(x, u: float, dt: float, p: MlpParams, s: NoiseSchedule, dw=None):
    """Reverse-time Euler-Maruyama step from ``u`` to ``u - dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    b = s.beta_at(u)
    out = ad.add(x, ad.scale(sde_reverse_drift(x, u, p, s), -dt))
    if dw is None:
        return out
    return ad.add(out, ad.scale(dw, np.sqrt(b)))


# ---------------------------------------------------------------- purifier


@dataclass(frozen=True, eq=False)
class PurifierConfig:
    kind: Literal["ddpm", "vpsde"]
    t_star: int
    schedule: NoiseSchedule
    eot_samples: int = 1
    stochastic: bool = True
    substeps: int = 1

    def __post_init__(self):
        if self.kind not in ("ddpm", "vpsde"):
            raise ValueError(f"unknown purifier kind {self.kind!r}")
        if not 0 <= self.t_star <= self.schedule.T:
            raise ValueError(f"t_star={self.t_star} outside [0, {self.schedule.T}]")
        if self.eot_samples < 1:
            raise ValueError("eot_samples must be >= 1")
        if self.substeps < 1 or (self.kind == "ddpm" and self.substeps != 1):
            raise ValueError("substeps must be 1 for ddpm and >= 1 for vpsde")

    @property
    def n_grid(self) -> int:
        """Number of forward (and of reverse) steps in the chain."""
        return self.t_star * self.substeps


@dataclass
class Trajectory:
    """Forward samples x_0..x_N and reverse samples x'_N..x'_0 on the step grid.

    ``N = t_star * substeps``.  ``record`` is the stored chain
    (None when ``t_star == 0``).
    """

    forward: list[np.ndarray]
    reverse: list[np.ndarray]
    rng_states: list[tuple[str, ...]]
    record: ChainRecord | None
    substeps: int = 1

    @property
    def n(self) -> int:
        return len(self.forward) - 1

    def forward_at(self, t: int) -> np.ndarray:
        return self.forward[t * self.substeps]

    def reverse_at(self, t: int) -> np.ndarray:
        return self.reverse[self.n - t * self.substeps]

    def forward_index(self, t: int) -> int:
        """Chain sample index of x_t."""
        return t * self.substeps

    def reverse_index(self, t: int) -> int:
        """Chain sample index of x'_t."""
        return 2 * self.n - t * self.substeps


def _labels(prefix: str, draws: int, tail: str, stochastic: bool) -> tuple[str, ...]:
    if not stochastic:
        return ()
    return tuple(f"{prefix}/draw={j}/{tail}" for j in range(draws))


def purification_steps(cfg: PurifierConfig, p: MlpParams, prefix: str = "purify",
                       draws: int = 1) -> list[StepSpec]:
    """Forward diffusion steps followed by reverse steps, as one chain."""
    s = cfg.schedule
    steps: list[StepSpec] = []
    if cfg.kind == "ddpm":
        for t in range(1, cfg.t_star + 1):
            steps.append(StepSpec(lambda x, z, t=t: ddpm_forward_step(x, t, s, z),
                                  _labels(prefix, draws, f"fwd/step={t}", cfg.stochastic), f"fwd{t}"))
        for t in range(cfg.t_star, 0, -1):
            labels = _labels(prefix, draws, f"rev/step={t}", cfg.stochastic) if t > 1 else ()
            steps.append(StepSpec(lambda x, z, t=t: ddpm_reverse_step(x, t, p, z, s), labels, f"rev{t}"))
        return steps
    n = cfg.n_grid
    dt = 1.0 / (s.T * cfg.substeps)
    sqdt = np.sqrt(dt)

    def fwd(x, z, k):
        return sde_forward_step(x, k * dt, dt, s, None if z is None else z * sqdt)

    def rev(x, z, k):
        return sde_reverse_step(x, (k + 1) * dt, dt, p, s, None if z is None else z * sqdt)

    for k in range(n):
        steps.append(StepSpec(lambda x, z, k=k: fwd(x, z, k),
                              _labels(prefix, draws, f"fwd/step={k}", cfg.stochastic), f"fwd{k}"))
    for k in range(n - 1, -1, -1):
        steps.append(StepSpec(lambda x, z, k=k: rev(x, z, k),
                              _labels(prefix, draws, f"rev/step={k}", cfg.stochastic), f"rev{k}"))
    return steps


def purify(x, cfg: PurifierConfig, p: MlpParams, streams: Streams, prefix: str = "purify",
           draws: int = 1) -> tuple[np.ndarray, Trajectory]:
    """Diffuse ``x`` for ``t_star`` steps and run the reverse process back to 0.

    ``draws > 1`` purifies ``draws`` independent copies stacked draw-major,
    i.e. rows ``j*B..(j+1)*B`` belong to draw ``j``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ad.ShapeError(f"purify expects a (batch, dim) array, got shape {x.shape}")
    return purify_stacked(np.tile(x, (draws, 1)) if draws > 1 else x, cfg, p, streams, prefix, draws)


def purify_stacked(xs, cfg: PurifierConfig, p: MlpParams, streams: Streams, prefix: str = "purify",
                   draws: int = 1) -> tuple[np.ndarray, Trajectory]:
    """Like :func:`purify` but ``xs`` already holds ``draws`` row blocks (possibly different inputs)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] % draws:
        raise ad.ShapeError(f"cannot split {xs.shape} into {draws} draws")
    if cfg.t_star == 0:
        return xs, Trajectory([xs], [xs], [], None, cfg.substeps)
    rec = forward_record(purification_steps(cfg, p, prefix, draws), xs, streams)
    n = cfg.n_grid
    return rec.samples[-1], Trajectory(rec.samples[: n + 1], rec.samples[n:], rec.rng_states, rec,
                                       cfg.substeps)


class Purifier:
    """A purifier config bound to its trained noise model."""

    def __init__(self, cfg: PurifierConfig, params: MlpParams | None):
        self.cfg = cfg
        self.params = params

    @property
    def kind(self) -> str:
        return self.cfg.kind

    @property
    def has_score_model(self) -> bool:
        return self.params is not None and self.cfg.kind == "vpsde"

    def __call__(self, x, streams: Streams, prefix: str = "purify", draws: int = 1):
        return purify(x, self.cfg, self.params, streams, prefix, draws)

    def stacked(self, xs, streams: Streams, prefix: str = "purify", draws: int = 1):
        return purify_stacked(xs, self.cfg, self.params, streams, prefix, draws)

    def steps(self, prefix: str = "purify", draws: int = 1) -> list[StepSpec]:
        return purification_steps(self.cfg, self.params, prefix, draws)
