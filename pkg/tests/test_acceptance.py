"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 4-6 share benchmark runs through the session-scoped ``bench`` cache.
"""

import json
import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

import purifyattack.attack as atk
from purifyattack import adcore as ad
from purifyattack.attack import AttackConfig, TimestepStrategy, combined_objective, eot_gradient
from purifyattack.chainckpt import StepSpec, forward_record, fullgraph_backward, segmentwise_backward
from purifyattack.diffusion import NoiseSchedule
from purifyattack.harness import experiments as ex
from purifyattack.rng import Streams
from purifyattack.theory import GaussianSpec, gaussian_pilot, hellinger_sq_gaussian, theorem3_constants

CFG = ex.merge_config(ex.DEFAULT_CONFIG, {})


class Bench:
    """Seed-level results of the default benchmark, computed once per (T*, attack, overrides)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.rows: dict[tuple, list[dict]] = {}
        self.seconds: dict[tuple, float] = {}

    def rows_for(self, t_star, attack, strategy="uniform_0_T"):
        key = (t_star, attack, strategy)
        if key not in self.rows:
            t0 = time.perf_counter()
            over = {"timestep_strategy": TimestepStrategy(strategy)}
            rows = []
            for seed in self.cfg["seeds"]:
                rows += ex.evaluate_points(self.cfg, "g", attack, int(seed), t_star, over)
            self.rows[key] = rows
            self.seconds[key] = time.perf_counter() - t0
        return self.rows[key]

    def acc(self, t_star, attack, strategy="uniform_0_T"):
        """(clean, robust) 5-seed means in percentage points."""
        rows = self.rows_for(t_star, attack, strategy)
        seeds = sorted({r["seed"] for r in rows})
        clean = np.mean([np.mean([r["clean_correct"] for r in rows if r["seed"] == s]) for s in seeds])
        robust = np.mean([np.mean([r["robust_correct"] for r in rows if r["seed"] == s]) for s in seeds])
        return 100 * float(clean), 100 * float(robust)

    def cost(self, keys):
        return sum(self.seconds.get(k, 0.0) for k in keys)


@pytest.fixture(scope="session")
def bench():
    return Bench(CFG)


@pytest.fixture(scope="session")
def models():
    return ex.build_models(CFG)


# ------------------------------------------------------------ 1. checkpointing equivalence


def _mlp_chain(seed, length, width=4):
    steps = []
    for i in range(length):
        st = Streams(seed * 1000 + i)
        w = st.normal("w", (width, width)) / np.sqrt(width)
        b = 0.1 * st.normal("b", (width,))

        def fn(x, z, w=w, b=b):
            h = ad.tanh(ad.badd(ad.matmul(x, w), b))
            return h if z is None else ad.add(h, ad.scale(z, 0.1))

        steps.append(StepSpec(fn, (f"c{seed}/{i}",) if i % 3 else (), f"s{i}"))
    return steps


def test_criterion_1_checkpointing_equivalence(report, models):
    t0 = time.perf_counter()
    mismatches = 0
    rng = np.random.default_rng(0)
    for seed in range(50):
        length = int(rng.integers(1, 33))
        rec = forward_record(_mlp_chain(seed, length), Streams(seed).normal("x", (3, 4)), Streams(seed + 7))
        g = Streams(seed).normal("g", (3, 4))
        inject = {int(i): Streams(seed).normal(f"inj{i}", (3, 4))
                  for i in rng.choice(length + 1, size=min(3, length + 1), replace=False)}
        if not np.array_equal(segmentwise_backward(rec, g, inject), fullgraph_backward(rec, g, inject)):
            mismatches += 1
    eps_ck, clf_ck = models
    _, test = ex.load_data(CFG)
    x, y = test.x[:16], test.y[:16]
    real = 0
    for t_star in (5, 15):
        pur = ex.make_purifier(CFG, eps_ck, t_star)
        acfg = AttackConfig(eps=0.1, eot=2, lam=1.0)
        purified, traj = pur(x, Streams(3), prefix="acc1", draws=2)
        _, g_out = atk._cls_loss(clf_ck.params, purified, np.tile(y, 2), "ce", True)
        _, inject = atk._dev_terms(traj, pur, acfg, Streams(3), "acc1", 2, len(y), 1.0, True)
        assert inject, "deviated loss produced no injections"
        same = np.array_equal(segmentwise_backward(traj.record, g_out, inject),
                              fullgraph_backward(traj.record, g_out, inject))
        real += not same
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and real == 0 and secs < 120
    report(1, "checkpointing equivalence", ok,
           f"{mismatches}/50 random chains and {real}/2 purifier chains differ; {secs:.0f}s")
    assert ok


# ------------------------------------------------------------ 2. autodiff correctness


def test_criterion_2_autodiff_vs_finite_differences(report, models):
    t0 = time.perf_counter()
    eps_ck, clf_ck = models
    pur = ex.make_purifier(CFG, eps_ck, CFG["t_star"])
    pts = Streams(11).uniform("acc2/x", (20, 2)) * 0.8 + 0.1
    labels = Streams(11).integers("acc2/y", 0, 2, 20)
    worst = 0.0
    h = 1e-6
    for lam in (0.0, 1.0):
        cfg = AttackConfig(eps=0.1, eot=1, lam=lam)
        for i in range(20):
            x, y = pts[i:i + 1], labels[i:i + 1]
            st = Streams(100 + i)
            g = eot_gradient(x, y, pur, clf_ck.params, cfg, st)[0]
            fd = np.zeros(2)
            for j in range(2):
                e = np.zeros((1, 2))
                e[0, j] = h
                up = combined_objective(x + e, y, pur, clf_ck.params, cfg, st)[0][0]
                dn = combined_objective(x - e, y, pur, clf_ck.params, cfg, st)[0][0]
                fd[j] = (up - dn) / (2 * h)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-4 and secs < 120
    report(2, "autodiff vs central differences", ok, f"max relative error {worst:.2e} over 40 cases; {secs:.0f}s")
    assert ok


# ------------------------------------------------------------ 3. memory constancy


def test_criterion_3_memory_constancy(report):
    t0 = time.perf_counter()
    cfg = ex.merge_config(CFG, {"memcheck_t_values": [16, 512]})
    rows = {r["t"]: r for r in ex.run_memcheck(cfg).sweep}
    seg16, seg512 = rows[16]["graph_peak_bytes"], rows[512]["graph_peak_bytes"]
    full512 = rows[512]["fullgraph_peak_bytes"]
    secs = time.perf_counter() - t0
    ok = full512 != "skipped" and seg512 <= 1.1 * seg16 and full512 >= 10 * seg512 and secs < 180
    ratio = full512 / seg512 if full512 != "skipped" else float("nan")
    report(3, "memory constancy", ok,
           f"segmentwise peak {seg16} B at T=16, {seg512} B at T=512; full graph {full512} B ({ratio:.0f}x); "
           f"{secs:.0f}s")
    assert ok


# ------------------------------------------------------------ 4. attack ordering


def test_criterion_4_attack_ordering(report, bench):
    t = CFG["t_star"]
    names = ["diffattack", "lambda0", "bpda", "spsa"]
    res = {a: bench.acc(t, a) for a in names}
    clean = res["diffattack"][0]
    rob = {a: res[a][1] for a in names}
    secs = bench.cost([(t, a, "uniform_0_T") for a in names])
    checks = [rob["diffattack"] <= rob["lambda0"] - 3, rob["diffattack"] <= rob["bpda"] - 5,
              rob["diffattack"] <= rob["spsa"] - 5, clean >= 90, secs < 1200]
    ok = all(checks)
    detail = (f"T*={t} clean {clean:.1f}; robust " + ", ".join(f"{a} {rob[a]:.1f}" for a in names)
              + f"; {secs:.0f}s")
    report(4, "attack ordering", ok, detail)
    assert ok, detail


# ------------------------------------------------------------ 5. deviated-loss placement


def test_criterion_5_timestep_placement(report, bench):
    t = CFG["t_star"]
    drops = {}
    for s in ("uniform_0_T", "final_third", "initial_third"):
        clean, robust = bench.acc(t, "diffattack", s)
        drops[s] = clean - robust
    secs = bench.cost([(t, "diffattack", s) for s in drops])
    ok = drops["uniform_0_T"] >= drops["final_third"] and secs < 900
    report(5, "deviated-loss placement", ok,
           f"accuracy drop uniform {drops['uniform_0_T']:.1f}, final third {drops['final_third']:.1f}, "
           f"initial third {drops['initial_third']:.1f} (reported only); {secs:.0f}s")
    assert ok


# ------------------------------------------------------------ 6. diffusion-length shape


def test_criterion_6_diffusion_length_shape(report, bench):
    ts = CFG["t_values"]
    acc = [bench.acc(t, "diffattack") for t in ts]
    clean = [a[0] for a in acc]
    robust = [a[1] for a in acc]
    secs = bench.cost([(t, "diffattack", "uniform_0_T") for t in ts])
    clean_ok = all(b <= a + 2 for a, b in zip(clean, clean[1:]))
    best = max(robust)
    interior = max(robust[1:-1]) == best and best > robust[0] and best > robust[-1]
    ok = clean_ok and interior and secs < 1200
    report(6, "diffusion-length shape", ok,
           "T* " + ", ".join(f"{t}: clean {c:.1f} robust {r:.1f}" for t, c, r in zip(ts, clean, robust))
           + f"; {secs:.0f}s")
    assert ok


# ------------------------------------------------------------ 7. theory oracles


def _hellinger_numeric(m1, v1, m2, v2):
    s1, s2 = math.sqrt(v1), math.sqrt(v2)
    lo, hi = min(m1 - 15 * s1, m2 - 15 * s2), max(m1 + 15 * s1, m2 + 15 * s2)
    f = lambda x: math.sqrt(stats.norm.pdf(x, m1, s1) * stats.norm.pdf(x, m2, s2))
    return 1.0 - integrate.quad(f, lo, hi, points=[m1, m2], limit=400, epsabs=1e-13, epsrel=1e-12)[0]


def _thm3_literal(b, t):
    T = len(b)
    ab = [1.0]
    for s in range(1, T + 1):
        ab.append(ab[-1] * (1.0 - b[s - 1]))
    c1 = 1.0
    for s in range(t + 1, T + 1):
        c1 *= math.sqrt(ab[s])
    c1 *= math.sqrt(ab[T])
    c2 = (1.0 - ab[t]) / (8.0 * (1.0 - ab[t - 1]) * b[t - 1])
    lam = {}
    for k in range(t + 1, T + 1):
        p = 1.0
        for i in range(t + 1, k):
            p *= math.sqrt(ab[i])
        lam[k] = b[k - 1] * p / math.sqrt(1.0 - ab[k])
    return c1, c2, lam


def test_criterion_7_theory_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    h_err = 0.0
    for _ in range(200):
        m1, m2 = rng.uniform(-3, 3, 2)
        v1, v2 = np.exp(rng.uniform(-2, 2, 2))
        h = hellinger_sq_gaussian(GaussianSpec([m1], [[v1]]), GaussianSpec([m2], [[v2]]))
        h_err = max(h_err, abs(h - _hellinger_numeric(m1, v1, m2, v2)))
    t_err = 0.0
    for _ in range(50):
        T = int(rng.integers(2, 65))
        b = np.sort(rng.uniform(1e-4, 0.05, T))
        t = int(rng.integers(2, T + 1))
        got = theorem3_constants(NoiseSchedule(b), t)
        c1, c2, lam = _thm3_literal([float(v) for v in b], t)
        rel = [abs(got.C1 - c1) / c1, abs(got.C2 - c2) / c2]
        rel += [abs(got.lambda_table[k] - lam[k]) / lam[k] for k in lam]
        t_err = max(t_err, max(rel))
    pilot = gaussian_pilot()
    secs = time.perf_counter() - t0
    ok = h_err <= 1e-6 and t_err <= 1e-12 and pilot["violations"] == 0 and secs < 180
    report(7, "theory oracles", ok,
           f"Hellinger max abs err {h_err:.1e}; constants max rel err {t_err:.1e}; "
           f"pilot violations {pilot['violations']}/{len(pilot['grid'])}; {secs:.0f}s")
    assert ok


# ------------------------------------------------------------ 8. determinism


TINY = {
    "dataset": {"kind": "blobs", "n_points": 96, "noise_scale": 0.05, "seed": 0, "data_dim": 2, "num_classes": 2,
                "clusters_per_class": 2, "spread": 0.8},
    "n_train": 64, "n_test": 8,
    "schedule": {"T": 10, "beta_min": 1e-3, "beta_max": 2e-2},
    "diffusion_train": {"steps": 30, "hidden": [16], "time_embed_dim": 8, "seed": 0},
    "classifier_train": {"steps": 60, "hidden": [16], "seed": 0},
    "t_star": 4, "t_values": [3, 6], "lambdas": [0.1, 1.0], "n_iter": 2, "eot": 2, "spsa_samples": 2,
    "seeds": [0], "attacks": ["diffattack", "lambda0", "bpda", "spsa", "pgd", "joint_full"], "n_eval_draws": 3,
}

COMMANDS = {
    "attack": [], "ablate-t": [], "ablate-lambda": [], "ablate-steps": [],
    "memcheck": ["--t-values", "8,32"], "theory-check": [], "gen-data": [],
    "train": ["--kind", "diffusion", "--checkpoint", "{dir}/ck.json"],
}


def test_criterion_8_determinism(report, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    differing = []
    for cmd, extra in COMMANDS.items():
        outputs = []
        for k in range(2):
            d = tmp_path / f"{cmd}{k}"
            d.mkdir()
            args = [a.format(dir=d) for a in extra]
            proc = subprocess.run([sys.executable, "-m", "purifyattack", cmd, "--config", str(cfg),
                                   "--out", str(d / "r.json"), "--csv", str(d / "r.csv"), "--seed", "3", *args]
                                  if cmd not in ("memcheck", "theory-check", "gen-data", "train") else
                                  [sys.executable, "-m", "purifyattack", cmd, "--config", str(cfg),
                                   "--out", str(d / "r.json"), "--csv", str(d / "r.csv"), *args],
                                  capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            files = [(d / "r.json").read_bytes(), (d / "r.csv").read_bytes()]
            if cmd == "train":
                files.append((d / "ck.json").read_bytes())
            outputs.append(files)
        if outputs[0] != outputs[1]:
            differing.append(cmd)
    secs = time.perf_counter() - t0
    ok = not differing and secs < 300
    report(8, "determinism", ok,
           f"{len(COMMANDS) - len(differing)}/{len(COMMANDS)} subcommands byte-identical"
           + (f" (differ: {', '.join(differing)})" if differing else "") + f"; {secs:.0f}s")
    assert ok
