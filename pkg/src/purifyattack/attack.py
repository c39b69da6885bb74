"""Attacks on diffusion purification and robust-accuracy evaluation.

All attacks maximise a per-point surrogate loss inside an eps-ball around the
clean input, clipped to the data box.  Randomness is addressed by label: the
purification noise used at iteration ``k`` lives under ``attack/it=k`` for
every attack, so different attacks see common random numbers and a replay of
any iteration is exact.

Batches are stacked draw-major: with ``eot`` draws and ``B`` points the rows
are ``[draw 0 points..., draw 1 points..., ...]``.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import adcore as ad
from .chainckpt import segmentwise_backward
from .diffusion import Purifier, Trajectory, score_theta, sde_reverse_drift
from .models import ClassifierParams, classify, cross_entropy
from .rng import Streams

Norm = Literal["linf", "l2"]
TIMESTEP_KINDS = ("uniform_0_T", "initial_third", "final_third")


def default_checkpoints(n_iter: int) -> tuple[int, ...]:
    """Iterations at which the step size is halved."""
    return tuple(sorted({int(np.floor(f * n_iter)) for f in (0.22, 0.44, 0.66, 0.88)} - {0}))


@dataclass(frozen=True)
class TimestepStrategy:
    kind: str = "uniform_0_T"
    count: int | None = None

    def __post_init__(self):
        if self.kind not in TIMESTEP_KINDS:
            raise ValueError(f"unknown timestep strategy {self.kind!r}; expected one of {TIMESTEP_KINDS}")
        if self.count is not None and self.count < 1:
            raise ValueError("timestep count must be >= 1")

    def support(self, t_star: int) -> range:
        third = t_star // 3
        if self.kind == "uniform_0_T":
            return range(0, t_star + 1)
        if self.kind == "initial_third":
            return range(0, third + 1)
        return range(t_star - third, t_star + 1)


@dataclass(frozen=True)
class AttackConfig:
    eps: float
    norm: Norm = "linf"
    n_iter: int = 40
    eot: int = 8
    alpha: float = 0.75
    lam: float = 1.0
    step_size: float | None = None
    checkpoints: tuple[int, ...] | None = None
    timestep_strategy: TimestepStrategy = field(default_factory=TimestepStrategy)
    timestep_count: int | None = None
    rounds: tuple[str, ...] = ("ce",)
    random_start: bool = False
    seed: int = 0
    spsa_samples: int = 32
    spsa_delta: float = 0.01
    joint_lambda: float = 0.5
    box: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.n_iter < 1 or self.eot < 1:
            raise ValueError("n_iter and eot must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        for r in self.rounds:
            if r not in ("ce", "margin"):
                raise ValueError(f"unknown loss round {r!r}")
        if not self.rounds:
            raise ValueError("need at least one loss round")
        if self.spsa_samples < 1 or self.spsa_delta <= 0:
            raise ValueError("spsa_samples must be >= 1 and spsa_delta > 0")
        if not 0.0 <= self.joint_lambda <= 1.0:
            raise ValueError("joint_lambda must lie in [0, 1]")

    @property
    def eta(self) -> float:
        return 2.0 * self.eps if self.step_size is None else self.step_size

    @property
    def halving(self) -> tuple[int, ...]:
        return default_checkpoints(self.n_iter) if self.checkpoints is None else tuple(self.checkpoints)

    def strategy(self) -> TimestepStrategy:
        if self.timestep_count is None or self.timestep_strategy.count is not None:
            return self.timestep_strategy
        return replace(self.timestep_strategy, count=self.timestep_count)


@dataclass
class AttackResult:
    x_adv: np.ndarray
    best_loss: np.ndarray
    loss_trace: np.ndarray
    success: np.ndarray
    iterates: list[np.ndarray] = field(default_factory=list)

    @property
    def max_loss(self) -> float:
        return float(np.mean(self.best_loss))


# ------------------------------------------------------------ primitives


def project(x, x_orig, eps: float, norm: Norm = "linf", box: tuple[float, float] | None = (0.0, 1.0)):
    """Project onto the eps-ball around ``x_orig`` (per row), then clip to ``box``."""
    x = np.asarray(x, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if x.shape != x_orig.shape:
        raise ad.ShapeError(f"project: shape {x.shape} != {x_orig.shape}")
    if norm == "linf":
        out = np.clip(x, x_orig - eps, x_orig + eps)
    elif norm == "l2":
        d = x - x_orig
        flat = d.reshape(d.shape[0], -1) if d.ndim > 1 else d.reshape(1, -1)
        n = np.linalg.norm(flat, axis=1)
        factor = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
        out = x_orig + (flat * factor[:, None]).reshape(d.shape)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if box is not None:
        out = np.clip(out, box[0], box[1])
    return out


def _direction(g: np.ndarray, norm: Norm) -> np.ndarray:
    if norm == "linf":
        return np.sign(g)
    n = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.where(n > 0, n, 1.0)


def sample_timesteps(strategy: TimestepStrategy, t_star: int, streams: Streams,
                     label: str = "timesteps") -> list[int]:
    """Distinct time steps for the deviated loss, sorted."""
    if t_star < 3:
        raise ValueError(f"timestep sampling needs t_star >= 3, got {t_star}")
    count = t_star // 3 if strategy.count is None else strategy.count
    support = strategy.support(t_star)
    if len(support) < count:
        raise ValueError(f"{strategy.kind} range {support.start}..{support.stop - 1} has fewer than {count} steps")
    return streams.choice(label, support, count)


def deviated_loss(traj: Trajectory, steps: Sequence[int], weights: Sequence[float] | None = None) -> np.ndarray:
    """Sum_t alpha(t) ||x_t - x'_t||^2, one value per row.

    Default weights are 1/len(steps).
    """
    if len(steps) == 0:
        raise ValueError("deviated_loss needs at least one time step")
    w = _weights(steps, weights)
    out = 0.0
    for t, a in zip(steps, w):
        d = traj.forward_at(t) - traj.reverse_at(t)
        out = out + a * np.sum(d * d, axis=1)
    return np.asarray(out, dtype=np.float64)


def _weights(steps, weights):
    if weights is None:
        return [1.0 / len(steps)] * len(steps)
    if len(weights) != len(steps):
        raise ValueError("one weight per time step expected")
    return list(weights)


def _check_steps(traj: Trajectory, steps) -> None:
    t_max = traj.n // traj.substeps
    bad = [t for t in steps if not 0 <= t <= t_max]
    if bad:
        raise ValueError(f"time steps {bad} outside trajectory range [0, {t_max}]")


def margin_loss(logits, y):
    """max_{j != y} z_j - z_y per row (runner-up picked from current values)."""
    z = ad.value(logits)
    y = np.asarray(y, dtype=np.int64)
    masked = z.copy()
    masked[np.arange(len(y)), y] = -np.inf
    pick = np.zeros_like(z)
    pick[np.arange(len(y)), np.argmax(masked, axis=1)] = 1.0
    pick[np.arange(len(y)), y] -= 1.0
    return ad.tsum(ad.mul(logits, pick), axis=1)


def _cls_loss(classifier: ClassifierParams, purified: np.ndarray, y_rows: np.ndarray, kind: str,
              need_grad: bool):
    if not need_grad:
        logits = classify(classifier, purified)
        return np.asarray(ad.value(_loss_fn(kind)(logits, y_rows))), None
    with ad.Tape() as tape:
        leaf = tape.var(purified)
        loss = _loss_fn(kind)(classify(classifier, leaf), y_rows)
        values = np.array(ad.value(loss))
        grad = tape.backward(loss, np.ones_like(values))[leaf]
    return values, grad


def _loss_fn(kind: str) -> Callable:
    return cross_entropy if kind == "ce" else margin_loss


# ------------------------------------------------------------ objective


@dataclass
class _Eval:
    loss: np.ndarray          # (B,) mean over draws
    grad: np.ndarray | None   # (B, d) mean over draws
    row_loss: np.ndarray      # (draws*B,)
    purified: np.ndarray
    traj: Trajectory


def _dev_terms(traj: Trajectory, purifier: Purifier, cfg: AttackConfig, streams: Streams, prefix: str,
               draws: int, batch: int, lam: float, need_grad: bool):
    """Deviated-loss values per row and the matching sample-index injections."""
    rows = draws * batch
    values = np.zeros(rows)
    inject: dict[int, np.ndarray] = {}
    strategy = cfg.strategy()
    for j in range(draws):
        steps = sample_timesteps(strategy, purifier.cfg.t_star, streams, f"{prefix}/draw={j}/timesteps")
        _check_steps(traj, steps)
        sl = slice(j * batch, (j + 1) * batch)
        for t, a in zip(steps, _weights(steps, None)):
            d = traj.forward_at(t)[sl] - traj.reverse_at(t)[sl]
            values[sl] += a * np.sum(d * d, axis=1)
            if not need_grad:
                continue
            for idx, sign in ((traj.forward_index(t), 1.0), (traj.reverse_index(t), -1.0)):
                g = inject.setdefault(idx, np.zeros((rows, d.shape[1])))
                g[sl] += sign * 2.0 * lam * a * d
    return values, inject


def _evaluate(x_adv, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig, streams: Streams,
              prefix: str, draws: int, lam: float, kind: str = "ce", need_grad: bool = True,
              gradient: str = "exact") -> _Eval:
    """Surrogate loss (and its gradient w.r.t. ``x_adv``) averaged over ``draws`` purifications."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    batch = x_adv.shape[0]
    purified, traj = purifier(x_adv, streams, prefix=prefix, draws=draws)
    y_rows = np.tile(np.asarray(y, dtype=np.int64), draws)
    row_loss, g_out = _cls_loss(classifier, purified, y_rows, kind, need_grad)
    use_dev = lam > 0 and purifier.cfg.t_star >= 3
    inject = {}
    if use_dev:
        dev, inject = _dev_terms(traj, purifier, cfg, streams, prefix, draws, batch, lam,
                                 need_grad and gradient == "exact")
        row_loss = row_loss + lam * dev
    grad = None
    if need_grad:
        if gradient == "bpda" or traj.record is None:
            g_in = g_out
            if traj.record is None:
                for g in inject.values():
                    g_in = g_in + g
        else:
            g_in = segmentwise_backward(traj.record, g_out, inject)
        grad = g_in.reshape(draws, batch, -1).mean(axis=0)
    loss = row_loss.reshape(draws, batch).mean(axis=0)
    return _Eval(loss, grad, row_loss, purified, traj)


def combined_objective(x_adv, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig,
                       streams: Streams, prefix: str = "objective") -> tuple[np.ndarray, Trajectory]:
    """L_cls(F(P(x)), y) + lambda * L_dev per point for a single purification draw."""
    ev = _evaluate(x_adv, y, purifier, classifier, cfg, streams, prefix, 1, cfg.lam, cfg.rounds[0],
                   need_grad=False)
    return ev.loss, ev.traj


def eot_gradient(x_adv, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig,
                 streams: Streams, prefix: str = "objective") -> np.ndarray:
    """Mean over ``cfg.eot`` draws of the gradient of the combined objective."""
    return _evaluate(x_adv, y, purifier, classifier, cfg, streams, prefix, cfg.eot, cfg.lam,
                     cfg.rounds[0]).grad


def _iter_prefix(k: int) -> str:
    return f"attack/it={k}"


def _final_success(x_adv, y, purifier, classifier, cfg, streams) -> np.ndarray:
    purified, _ = purifier(x_adv, streams, prefix="attack/final", draws=cfg.eot)
    pred = np.argmax(ad.value(classify(classifier, purified)), axis=1)
    return (pred != np.tile(y, cfg.eot)).reshape(cfg.eot, len(y))


def _start(x, cfg: AttackConfig, streams: Streams) -> np.ndarray:
    if not cfg.random_start:
        return x.copy()
    noise = (2.0 * streams.uniform("attack/start", x.shape) - 1.0) * cfg.eps
    return project(x + noise, x, cfg.eps, cfg.norm, cfg.box)


class _Tracker:
    """Per-point best-so-far bookkeeping with a strict improvement rule."""

    def __init__(self, x0, loss0):
        self.best_x = x0.copy()
        self.best = loss0.copy()
        self.trace = [self.best.copy()]
        self.iterates = [x0.copy()]

    def update(self, x, loss):
        better = loss > self.best
        self.best_x[better] = x[better]
        self.best = np.where(better, loss, self.best)
        self.trace.append(self.best.copy())
        self.iterates.append(x.copy())

    def result(self, success) -> AttackResult:
        return AttackResult(self.best_x, self.best, np.array(self.trace), success, self.iterates)


# ------------------------------------------------------------ attacks


def _apgd_round(x, x_start, y, purifier, classifier, cfg: AttackConfig, streams, kind, lam, offset=0):
    def ev(z, k, need_grad=True):
        return _evaluate(z, y, purifier, classifier, cfg, streams, _iter_prefix(offset + k), cfg.eot, lam,
                         kind, need_grad)

    eta = cfg.eta
    halve = set(cfg.halving)
    n = cfg.n_iter
    x0 = x_start
    e0 = ev(x0, 0)
    tracker = _Tracker(x0, e0.loss)
    x1 = project(x0 + eta * _direction(e0.grad, cfg.norm), x, cfg.eps, cfg.norm, cfg.box)
    e1 = ev(x1, 1, need_grad=n > 1)
    tracker.update(x1, e1.loss)
    x_prev, x_cur, g_cur = x0, x1, e1.grad
    for k in range(1, n):
        z = project(x_cur + eta * _direction(g_cur, cfg.norm), x, cfg.eps, cfg.norm, cfg.box)
        if cfg.alpha == 1.0:
            x_next = z
        else:
            x_next = project(x_cur + cfg.alpha * (z - x_cur) + (1.0 - cfg.alpha) * (x_cur - x_prev),
                             x, cfg.eps, cfg.norm, cfg.box)
        e = ev(x_next, k + 1, need_grad=k + 1 < n)
        tracker.update(x_next, e.loss)
        if k in halve:
            eta = eta / 2.0
        x_prev, x_cur, g_cur = x_cur, x_next, e.grad
    return tracker


def diffattack(x, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig) -> AttackResult:
    """APGD-style ascent on CE + lambda * deviated loss with exact EOT gradients.

    With several loss rounds each round restarts from the previous round's best point.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    streams = Streams(cfg.seed)
    start = _start(x, cfg, streams)
    tracker = None
    for r, kind in enumerate(cfg.rounds):
        tracker = _apgd_round(x, start, y, purifier, classifier, cfg, streams, kind, cfg.lam,
                              offset=r * (cfg.n_iter + 1))
        start = tracker.best_x
    return tracker.result(_final_success(tracker.best_x, y, purifier, classifier, cfg, streams))


def _sign_loop(x, y, purifier, classifier, cfg: AttackConfig, gradient: str) -> AttackResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    streams = Streams(cfg.seed)
    n = cfg.n_iter

    def ev(z, k, need_grad=True):
        return _evaluate(z, y, purifier, classifier, cfg, streams, _iter_prefix(k), cfg.eot, 0.0, "ce",
                         need_grad, gradient)

    x_cur = _start(x, cfg, streams)
    e = ev(x_cur, 0)
    tracker = _Tracker(x_cur, e.loss)
    for k in range(n):
        x_cur = project(x_cur + cfg.eta * _direction(e.grad, cfg.norm), x, cfg.eps, cfg.norm, cfg.box)
        e = ev(x_cur, k + 1, need_grad=k + 1 < n)
        tracker.update(x_cur, e.loss)
    return tracker.result(_final_success(tracker.best_x, y, purifier, classifier, cfg, streams))


def pgd_attack(x, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig) -> AttackResult:
    """Fixed-step projected ascent on CE through the purifier (exact EOT gradient)."""
    return _sign_loop(x, y, purifier, classifier, cfg, "exact")


def bpda_attack(x, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig) -> AttackResult:
    """PGD whose backward pass treats the purifier as the identity."""
    return _sign_loop(x, y, purifier, classifier, cfg, "bpda")


def spsa_attack(x, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig) -> AttackResult:
    """Gradient-free ascent using Rademacher central differences.

    The purifier's randomness is outside the attacker's control, so the two
    members of a perturbation pair see independent purification noise.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    streams = Streams(cfg.seed)
    k_pairs, c = cfg.spsa_samples, cfg.spsa_delta
    batch = x.shape[0]
    y_rows = np.tile(y, k_pairs)

    def estimate(z, k):
        v = streams.rademacher(f"spsa/it={k}/dir", (k_pairs, *z.shape))
        prefix = _iter_prefix(k)
        losses = []
        for sgn in (1.0, -1.0):
            rows = (z[None] + sgn * c * v).reshape(k_pairs * batch, -1)
            purified, _ = purifier.stacked(rows, streams, prefix=f"{prefix}/{'plus' if sgn > 0 else 'minus'}",
                                           draws=k_pairs)
            losses.append(_cls_loss(classifier, purified, y_rows, "ce", False)[0].reshape(k_pairs, batch))
        lp, lm = losses
        g = np.mean(((lp - lm) / (2.0 * c))[..., None] * v, axis=0)
        return 0.5 * (lp + lm).mean(axis=0), g

    x_cur = _start(x, cfg, streams)
    loss, g = estimate(x_cur, 0)
    tracker = _Tracker(x_cur, loss)
    for k in range(cfg.n_iter):
        x_cur = project(x_cur + cfg.eta * _direction(g, cfg.norm), x, cfg.eps, cfg.norm, cfg.box)
        loss, g = estimate(x_cur, k + 1)
        tracker.update(x_cur, loss)
    return tracker.result(_final_success(tracker.best_x, y, purifier, classifier, cfg, streams))


def joint_attack(mode: str, x, y, purifier: Purifier, classifier: ClassifierParams,
                 cfg: AttackConfig) -> AttackResult:
    """x <- x + eta (lambda' sign(s) + (1 - lambda') sign(grad L)).

    ``score`` mode uses the score network at the smallest grid time; ``full``
    mode uses sign(P(x) - x), the direction towards the purified sample.
    """
    if mode not in ("score", "full"):
        raise ValueError(f"unknown joint attack mode {mode!r}")
    if mode == "score" and not purifier.has_score_model:
        raise ValueError("joint attack in score mode needs a score estimator (vpsde purifier with a model)")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    streams = Streams(cfg.seed)
    lp = cfg.joint_lambda
    n = cfg.n_iter

    def ev(z, k, need_grad=True):
        return _evaluate(z, y, purifier, classifier, cfg, streams, _iter_prefix(k), cfg.eot, 0.0, "ce",
                         need_grad and lp < 1.0)

    def guide(z, k):
        if lp == 0.0:
            return 0.0
        if mode == "score":
            s = purifier.cfg.schedule
            u = 1.0 / (s.T * purifier.cfg.substeps)
            return np.sign(ad.value(score_theta(purifier.params, z, u, s)))
        purified, _ = purifier(z, streams, prefix=f"{_iter_prefix(k)}/joint")
        return np.sign(purified - z)

    x_cur = _start(x, cfg, streams)
    e = ev(x_cur, 0)
    tracker = _Tracker(x_cur, e.loss)
    for k in range(n):
        g_sign = 0.0 if e.grad is None else np.sign(e.grad)
        step = lp * guide(x_cur, k) + (1.0 - lp) * g_sign
        x_cur = project(x_cur + cfg.eta * step, x, cfg.eps, cfg.norm, cfg.box)
        e = ev(x_cur, k + 1, need_grad=k + 1 < n)
        tracker.update(x_cur, e.loss)
    return tracker.result(_final_success(tracker.best_x, y, purifier, classifier, cfg, streams))


def adjoint_gradient(x_adv, y, purifier: Purifier, classifier: ClassifierParams, cfg: AttackConfig,
                     streams: Streams | None = None, prefix: str = "objective") -> np.ndarray:
    """CE gradient through a VP-SDE purifier by integrating the adjoint backwards.

    Only the purified output is kept from the forward pass.  The reverse
    trajectory is rebuilt on the way back with an explicit step on the same
    grid and noise path, and the adjoint is pulled through each one-step map
    at the rebuilt state.  The forward diffusion is linear, so its adjoint is exact.
    """
    if purifier.kind != "vpsde":
        raise ValueError(f"adjoint gradient needs a vpsde purifier, got {purifier.kind}")
    streams = Streams(cfg.seed) if streams is None else streams
    x_adv = np.asarray(x_adv, dtype=np.float64)
    batch, draws = x_adv.shape[0], cfg.eot
    y_rows = np.tile(np.asarray(y, dtype=np.int64), draws)
    purified, traj = purifier(x_adv, streams, prefix=prefix, draws=draws)
    _, a = _cls_loss(classifier, purified, y_rows, "ce", True)
    if traj.record is None:
        return a.reshape(draws, batch, -1).mean(axis=0)
    pc = purifier.cfg
    s = pc.schedule
    n = pc.n_grid
    dt = 1.0 / (s.T * pc.substeps)
    steps = traj.record.steps
    state = purified
    for i in range(2 * n - 1, n - 1, -1):
        k = 2 * n - 1 - i
        u = (k + 1) * dt
        noise = steps[i].noise(state.shape, streams)
        b = s.beta_at(u)
        # explicit inversion of x_out = x_in - dt f(x_in) + sqrt(b dt) z
        prev = state + dt * ad.value(sde_reverse_drift(state, u, purifier.params, s))
        if noise is not None:
            prev = prev - np.sqrt(b * dt) * noise
        with ad.Tape() as tape:
            leaf = tape.var(prev)
            out = steps[i].run(leaf, streams)
            a = tape.backward(out, a)[leaf]
        state = prev
    for k in range(n - 1, -1, -1):
        a = a * (1.0 - 0.5 * s.beta_at(k * dt) * dt)
    return a.reshape(draws, batch, -1).mean(axis=0)


# ------------------------------------------------------------ evaluation


def majority_correct(x, y, purifier: Purifier, classifier: ClassifierParams, n_draws: int, streams: Streams,
                     prefix: str = "eval") -> np.ndarray:
    """Per-point correctness of the majority label over ``n_draws`` purifications (ties go low)."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    purified, _ = purifier(x, streams, prefix=prefix, draws=n_draws)
    pred = np.argmax(ad.value(classify(classifier, purified)), axis=1).reshape(n_draws, len(y))
    k = classifier.num_classes
    votes = np.stack([(pred == c).sum(axis=0) for c in range(k)], axis=1)
    return np.argmax(votes, axis=1) == y


def robust_accuracy(dataset, attack_fn: Callable, purifier: Purifier, classifier: ClassifierParams,
                    cfg: AttackConfig, n_eval_draws: int = 5, eval_seed: int | None = None) -> float:
    """Fraction of points whose attacked input is still classified correctly by majority vote."""
    x, y = dataset
    if len(y) == 0:
        raise ValueError("empty dataset")
    if n_eval_draws < 1:
        raise ValueError("n_eval_draws must be >= 1")
    res = attack_fn(x, y, purifier, classifier, cfg)
    streams = Streams(cfg.seed if eval_seed is None else eval_seed)
    return float(np.mean(majority_correct(res.x_adv, y, purifier, classifier, n_eval_draws, streams)))
