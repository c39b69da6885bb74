"""Closed-form quantities behind the purification bounds and a Gaussian sanity pilot.

Time in the pilot is measured in step units: on ``(s-1, s]`` the VP rate is
``beta_s``, so integrating the rate over ``(t, T]`` gives ``sum_{s>t} beta_s``
and ``alpha_bar_t = exp(-sum_{s<=t} beta_s)`` in continuous form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .diffusion import NoiseSchedule, linear_schedule


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    """Mean and covariance; ``cov`` may be a full matrix, a diagonal vector or a scalar."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64)
        d = mean.size
        if cov.ndim == 0:
            cov = np.eye(d) * float(cov)
        elif cov.ndim == 1:
            if cov.size != d:
                raise ValueError(f"diagonal of length {cov.size} for a {d}-dim mean")
            cov = np.diag(cov)
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean dim {d}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def hellinger_sq_gaussian(a: GaussianSpec, b: GaussianSpec) -> float:
    """Squared Hellinger distance 1 - BC between two Gaussians."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    avg = 0.5 * (a.cov + b.cov)
    sa, lda = np.linalg.slogdet(a.cov)
    sb, ldb = np.linalg.slogdet(b.cov)
    sm, ldm = np.linalg.slogdet(avg)
    if min(sa, sb, sm) <= 0:
        raise ValueError("singular covariance")
    diff = a.mean - b.mean
    quad = float(diff @ np.linalg.solve(avg, diff))
    log_bc = 0.25 * lda + 0.25 * ldb - 0.5 * ldm - quad / 8.0
    return float(min(1.0, max(0.0, 1.0 - np.exp(log_bc))))


def tv_pinsker(kl: float) -> float:
    if kl < 0:
        raise ValueError(f"KL divergence must be >= 0, got {kl}")
    return float(np.sqrt(kl / 2.0))


def tv_gaussian_1d(m1: float, v1: float, m2: float, v2: float) -> float:
    """Total variation between two 1-D Gaussians by adaptive quadrature."""
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    lo = min(m1 - 12 * s1, m2 - 12 * s2)
    hi = max(m1 + 12 * s1, m2 + 12 * s2)

    def f(x):
        return abs(stats.norm.pdf(x, m1, s1) - stats.norm.pdf(x, m2, s2))

    pts = sorted({m1, m2, 0.5 * (m1 + m2)})
    val, _ = integrate.quad(f, lo, hi, points=pts, limit=400, epsabs=1e-13, epsrel=1e-12)
    return 0.5 * val


# ------------------------------------------------------------ bound constants


@dataclass(frozen=True, eq=False)
class BoundInputs:
    schedule: NoiseSchedule
    t: int
    delta_norm: float = 0.0
    L_u: float = 0.0
    eps_re: float = 0.0
    M: float = 0.0
    sm_loss: float = 0.0

    def __post_init__(self):
        for name in ("delta_norm", "L_u", "eps_re", "M", "sm_loss"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.t <= self.schedule.T:
            raise ValueError(f"t={self.t} outside [0, {self.schedule.T}]")


def tail_beta_sum(s: NoiseSchedule, t: int) -> float:
    """sum of beta_s over s in (t, T]."""
    return float(np.sum(s.betas[t:]))


def theorem1_constants(b: BoundInputs) -> tuple[float, float]:
    if b.t < 1:
        raise ValueError("t = 0 makes C2 singular (alpha_bar_0 = 1); need t >= 1")
    c1 = (b.L_u + 8.0 * b.M ** 2) * tail_beta_sum(b.schedule, b.t)
    c2 = 1.0 / (8.0 * (1.0 - b.schedule.alpha_bar(b.t)))
    return c1, c2


def theorem1_bound(b: BoundInputs) -> float:
    """Upper bound on TV(q_t, q'_t) for the VP-SDE purifier."""
    c1, c2 = theorem1_constants(b)
    return float(0.5 * np.sqrt(b.sm_loss + c1)
                 + np.sqrt(max(0.0, 2.0 - 2.0 * np.exp(-c2 * b.delta_norm ** 2)))
                 + b.eps_re)


@dataclass
class DdpmConstants:
    C1: float
    C2: float
    lambda_table: dict[int, float]


def theorem3_constants(s: NoiseSchedule, t: int) -> DdpmConstants:
    """Constants of the DDPM bound; steps are 1-based, empty products are 1."""
    if t < 2:
        raise ValueError(f"t={t}: C2 divides by 1 - alpha_bar_(t-1), which vanishes for t < 2")
    if t > s.T:
        raise ValueError(f"t={t} exceeds T={s.T}")
    ab = s.alpha_bars
    sq = np.sqrt(ab)
    c1 = float(np.prod(sq[t + 1: s.T + 1]) * sq[s.T])
    c2 = float((1.0 - ab[t]) / (8.0 * (1.0 - ab[t - 1]) * s.beta(t)))
    table = {}
    for k in range(t + 1, s.T + 1):
        table[k] = float(s.beta(k) * np.prod(sq[t + 1: k]) / np.sqrt(1.0 - ab[k]))
    return DdpmConstants(c1, c2, table)


# ------------------------------------------------------------ Gaussian pilot


@dataclass
class PilotConfig:
    kind: str = "gaussian"
    schedule: NoiseSchedule = field(default_factory=lambda: linear_schedule(50, 1e-4, 0.02))
    deltas: tuple[float, ...] = (0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0)
    ts: tuple[int, ...] = (1, 2, 5, 10, 20, 30, 40, 49, 50)
    sigma0: float = 1.0
    R: float = 6.0
    L_u: float = 0.0
    eps_re: float = 0.0


def _alpha_bar_cont(s: NoiseSchedule, tau: float) -> float:
    """exp(-int_0^tau beta) with beta_s on (s-1, s]."""
    k = int(np.floor(tau))
    full = float(np.sum(s.betas[:k]))
    part = (tau - k) * float(s.betas[k]) if k < s.T else 0.0
    return float(np.exp(-(full + part)))


def _clean_var(s: NoiseSchedule, tau: float, sigma0: float) -> float:
    ab = _alpha_bar_cont(s, tau)
    return ab * sigma0 ** 2 + 1.0 - ab


def _reverse_moments(s: NoiseSchedule, m_T: float, v_T: float, sigma0: float) -> dict[int, tuple[float, float]]:
    """Mean and variance of the reverse process driven by the exact clean score.

    In reverse time r = T - tau the SDE is dx = beta (1/2 - 1/v(tau)) x dr + sqrt(beta) dW,
    linear, so the law stays Gaussian and its moments solve two ODEs.
    """
    out = {s.T: (m_T, v_T)}
    m, p = m_T, v_T
    for k in range(s.T, 0, -1):
        b = float(s.betas[k - 1])

        def rhs(tau, y, b=b):
            a = b * (0.5 - 1.0 / _clean_var(s, tau, sigma0))
            # d/dtau = -d/dr
            return [-a * y[0], -(2.0 * a * y[1] + b)]

        sol = integrate.solve_ivp(rhs, (k, k - 1), [m, p], rtol=1e-11, atol=1e-13)
        m, p = float(sol.y[0, -1]), float(sol.y[1, -1])
        out[k - 1] = (m, p)
    return out


def _forward_moments(s: NoiseSchedule, t: int, delta: float, sigma0: float) -> tuple[float, float]:
    ab = s.alpha_bar(t)
    return np.sqrt(ab) * delta, ab * sigma0 ** 2 + 1.0 - ab


def _sm_loss(s: NoiseSchedule, t: int, rev: dict, sigma0: float) -> float:
    """Mean over s in (t, T] of E_{x~q'_s} |s_clean(x, s) - grad log q'_s(x)|^2."""
    vals = []
    for k in range(t + 1, s.T + 1):
        m, p = rev[k]
        v = _clean_var(s, k, sigma0)
        a = 1.0 / p - 1.0 / v
        c = m / p
        vals.append(a * a * (p + m * m) - 2.0 * a * c * m + c * c)
    return float(np.mean(vals)) if vals else 0.0


def gaussian_pilot(config: PilotConfig | None = None) -> dict:
    """Check TV(q_t, q'_t) <= bound on a grid of (delta, t) for 1-D Gaussian data.

    Clean data ~ N(0, sigma0^2); the adversarial law is shifted by delta.  The
    score model is the exact clean score, so L_u = 0.  ``M`` is the largest
    clean-score magnitude over |x| <= R.
    """
    cfg = PilotConfig() if config is None else config
    if cfg.kind != "gaussian":
        raise ValueError(f"the pilot only handles Gaussian data, got {cfg.kind!r}")
    if cfg.sigma0 <= 0 or cfg.R <= 0:
        raise ValueError("sigma0 and R must be positive")
    s = cfg.schedule
    v_min = min(_clean_var(s, k, cfg.sigma0) for k in range(s.T + 1))
    M = cfg.R / v_min
    grid, lhs, rhs, bad = [], [], [], []
    for t in cfg.ts:
        for delta in cfg.deltas:
            m_T, v_T = _forward_moments(s, s.T, delta, cfg.sigma0)
            rev = _reverse_moments(s, m_T, v_T, cfg.sigma0)
            mq, vq = _forward_moments(s, t, delta, cfg.sigma0)
            mr, vr = rev[t]
            left = tv_gaussian_1d(mq, vq, mr, vr)
            b = BoundInputs(s, t, abs(delta), cfg.L_u, cfg.eps_re, M, _sm_loss(s, t, rev, cfg.sigma0))
            right = theorem1_bound(b)
            grid.append({"delta": float(delta), "t": int(t)})
            lhs.append(left)
            rhs.append(right)
            if left > right:
                bad.append({"delta": float(delta), "t": int(t), "lhs": left, "rhs": right})
    return {"grid": grid, "lhs": lhs, "rhs": rhs, "violations": len(bad), "violation_inputs": bad,
            "M": M, "R": cfg.R, "sigma0": cfg.sigma0, "schedule": s.to_dict()}


def pilot_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"
