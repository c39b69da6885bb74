"""Experiment runners behind the CLI: the toy benchmark, its sweeps and memory checks.

A config is a flat-ish JSON object; ``DEFAULT_CONFIG`` lists every key.  Models
are trained once per (dataset, schedule, training config) and cached in-process.
Seeds vary only attack and evaluation randomness.
"""

from __future__ import annotations

import copy
from dataclasses import replace

import numpy as np

from .. import adcore as ad
from ..attack import (AttackConfig, TimestepStrategy, TIMESTEP_KINDS, bpda_attack, diffattack, joint_attack,
                      majority_correct, pgd_attack, spsa_attack)
from ..chainckpt import fullgraph_backward, peak_live_bytes, segmentwise_backward
from ..diffusion import Purifier, PurifierConfig, linear_schedule
from ..models import init_eps_model
from ..rng import Streams
from ..theory import PilotConfig, gaussian_pilot
from .checkpoint import CheckpointFile, load_checkpoint
from .data import Dataset, DatasetSpec, gen_dataset
from .records import RunRecord, content_hash
from .training import TrainConfig, train_classifier, train_diffusion


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


DEFAULT_CONFIG: dict = {
    "dataset": {"kind": "blobs", "n_points": 768, "noise_scale": 0.05, "seed": 0, "data_dim": 2,
                "num_classes": 2, "clusters_per_class": 2, "spread": 0.8},
    "n_train": 512,
    "n_test": 256,
    "schedule": {"T": 50, "beta_min": 1e-4, "beta_max": 5e-3},
    "diffusion_train": {"steps": 3000, "batch_size": 128, "lr": 2e-3, "hidden": [128, 128, 128],
                        "time_embed_dim": 16, "objective": "score", "seed": 0},
    "classifier_train": {"steps": 1500, "batch_size": 128, "lr": 2e-3, "hidden": [64, 64], "seed": 0},
    "diffusion_checkpoint": None,
    "classifier_checkpoint": None,
    "purifier": "ddpm",
    "substeps": 1,
    "t_star": 15,
    "t_values": [5, 15, 25, 40],
    "eps": 0.35,
    "norm": "linf",
    "n_iter": 40,
    "eot": 8,
    "lam": 1.0,
    "lambdas": [0.1, 1.0, 10.0],
    "timestep_strategy": "uniform_0_T",
    "strategies": list(TIMESTEP_KINDS),
    "attacks": ["diffattack", "lambda0", "bpda", "spsa"],
    "sign_step_frac": 0.25,
    "spsa_samples": 32,
    "seeds": [0, 1, 2, 3, 4],
    "n_eval_draws": 5,
    "memcheck_t_values": [16, 64, 256, 512],
    "memcheck_batch": 4,
    "memcheck_budget_bytes": 64 * 2 ** 20,
}

ATTACKS = ("diffattack", "lambda0", "pgd", "bpda", "spsa", "joint_full", "joint_score")


def merge_config(base: dict, override: dict | None) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        out[k] = copy.deepcopy(v)
    return out


def validate_config(cfg: dict) -> dict:
    """Check the keys the runners rely on; raise ConfigError with a readable message."""
    try:
        ds = DatasetSpec(**cfg["dataset"])
        if not 0 < cfg["n_train"] < ds.n_points or cfg["n_test"] < 1:
            raise ConfigError("need 0 < n_train < dataset n_points and n_test >= 1")
        if cfg["n_train"] + cfg["n_test"] > ds.n_points:
            raise ConfigError("n_train + n_test exceeds dataset n_points")
        sched = _schedule(cfg)
        for t in [cfg["t_star"], *cfg["t_values"]]:
            PurifierConfig(cfg["purifier"], int(t), sched, substeps=int(cfg["substeps"]))
        for a in cfg["attacks"]:
            if a not in ATTACKS:
                raise ConfigError(f"unknown attack {a!r}; choose from {', '.join(ATTACKS)}")
        for s in cfg["strategies"] + [cfg["timestep_strategy"]]:
            TimestepStrategy(s)
        if not cfg["seeds"]:
            raise ConfigError("seeds must be non-empty")
        _attack_cfg(cfg, int(cfg["seeds"][0]))
        TrainConfig(**_train_kwargs(cfg["diffusion_train"]))
        TrainConfig(**_train_kwargs(cfg["classifier_train"]))
        if cfg["n_eval_draws"] < 1 or not 0 < cfg["sign_step_frac"]:
            raise ConfigError("n_eval_draws must be >= 1 and sign_step_frac > 0")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def _schedule(cfg):
    s = cfg["schedule"]
    return linear_schedule(int(s["T"]), float(s["beta_min"]), float(s["beta_max"]))


def _train_kwargs(d: dict) -> dict:
    d = dict(d)
    if "hidden" in d:
        d["hidden"] = tuple(d["hidden"])
    return d


def _attack_cfg(cfg: dict, seed: int) -> AttackConfig:
    return AttackConfig(eps=float(cfg["eps"]), norm=cfg["norm"], n_iter=int(cfg["n_iter"]), eot=int(cfg["eot"]),
                        lam=float(cfg["lam"]), timestep_strategy=TimestepStrategy(cfg["timestep_strategy"]),
                        spsa_samples=int(cfg["spsa_samples"]), seed=seed)


# ------------------------------------------------------------ data and models

_MODEL_CACHE: dict[str, tuple] = {}


def load_data(cfg: dict) -> tuple[Dataset, Dataset]:
    data = gen_dataset(DatasetSpec(**cfg["dataset"]))
    train, rest = data.split(int(cfg["n_train"]))
    test, _ = rest.split(int(cfg["n_test"]))
    return train, test


def build_models(cfg: dict) -> tuple[CheckpointFile, CheckpointFile]:
    """(diffusion checkpoint, classifier checkpoint), trained on demand and cached."""
    key = content_hash({k: cfg[k] for k in ("dataset", "n_train", "schedule", "diffusion_train",
                                            "classifier_train", "diffusion_checkpoint",
                                            "classifier_checkpoint")})
    if key in _MODEL_CACHE:
        return _MODEL_CACHE[key]
    train, _ = load_data(cfg)
    if cfg["diffusion_checkpoint"]:
        eps = load_checkpoint(cfg["diffusion_checkpoint"])
    else:
        eps = train_diffusion(train, _schedule(cfg), TrainConfig(**_train_kwargs(cfg["diffusion_train"])))
    if cfg["classifier_checkpoint"]:
        clf = load_checkpoint(cfg["classifier_checkpoint"])
    else:
        clf = train_classifier(train, TrainConfig(**_train_kwargs(cfg["classifier_train"])))
    _MODEL_CACHE[key] = (eps, clf)
    return eps, clf


def make_purifier(cfg: dict, eps: CheckpointFile, t_star: int | None = None) -> Purifier:
    sched = eps.schedule if eps.schedule is not None else _schedule(cfg)
    t = int(cfg["t_star"] if t_star is None else t_star)
    return Purifier(PurifierConfig(cfg["purifier"], t, sched, substeps=int(cfg["substeps"])), eps.params)


def _inputs(cfg: dict) -> dict:
    eps, clf = build_models(cfg)
    train, test = load_data(cfg)
    return {"test_hash": content_hash(test.tobytes().hex()),
            "diffusion_hash": content_hash(eps.to_dict()),
            "classifier_hash": content_hash(clf.to_dict())}


# ------------------------------------------------------------ attacks


def run_attack_by_name(name: str, x, y, purifier: Purifier, clf, acfg: AttackConfig, sign_step_frac: float):
    step = acfg.eps * sign_step_frac
    if name == "diffattack":
        return diffattack(x, y, purifier, clf, acfg)
    if name == "lambda0":
        return diffattack(x, y, purifier, clf, replace(acfg, lam=0.0))
    if name == "pgd":
        return pgd_attack(x, y, purifier, clf, replace(acfg, step_size=step))
    if name == "bpda":
        return bpda_attack(x, y, purifier, clf, replace(acfg, step_size=step))
    if name == "spsa":
        return spsa_attack(x, y, purifier, clf, replace(acfg, step_size=step))
    if name == "joint_full":
        return joint_attack("full", x, y, purifier, clf, replace(acfg, step_size=step))
    if name == "joint_score":
        return joint_attack("score", x, y, purifier, clf, replace(acfg, step_size=step))
    raise ConfigError(f"unknown attack {name!r}")


def evaluate_points(cfg: dict, group: str, attack: str, seed: int, t_star: int | None = None,
                    overrides: dict | None = None) -> list[dict]:
    """Attack the test set once and return one row per point."""
    eps, clf = build_models(cfg)
    _, test = load_data(cfg)
    purifier = make_purifier(cfg, eps, t_star)
    acfg = replace(_attack_cfg(cfg, seed), **(overrides or {}))
    ev = Streams(seed)
    clean = majority_correct(test.x, test.y, purifier, clf.params, int(cfg["n_eval_draws"]), ev, "eval/clean")
    res = run_attack_by_name(attack, test.x, test.y, purifier, clf.params, acfg, float(cfg["sign_step_frac"]))
    robust = majority_correct(res.x_adv, test.y, purifier, clf.params, int(cfg["n_eval_draws"]), ev,
                              "eval/robust")
    return [{"group": group, "attack": attack, "seed": int(seed), "index": i,
             "clean_correct": bool(clean[i]), "robust_correct": bool(robust[i]),
             "loss": float(res.best_loss[i])} for i in range(len(test.y))]


def memory_probe(cfg: dict, t_star: int | None = None, rows: int | None = None) -> dict:
    """Graph and sample bytes of one exact gradient through the purifier."""
    eps, _ = build_models(cfg)
    purifier = make_purifier(cfg, eps, t_star)
    _, test = load_data(cfg)
    n = int(cfg["eot"]) * len(test.y) if rows is None else rows
    x = np.resize(test.x, (n, test.x.shape[1]))
    _, traj = purifier(x, Streams(0), prefix="memory")
    if traj.record is None:
        return {"graph_peak_bytes": 0, "sample_bytes": 0}
    meter = ad.MemoryMeter()
    segmentwise_backward(traj.record, np.ones_like(x), meter=meter)
    return {"graph_peak_bytes": int(peak_live_bytes(meter)), "sample_bytes": int(traj.record.sample_bytes)}


def _attack_record(command: str, cfg: dict, plan: list[tuple[str, str, int | None, dict]]) -> RunRecord:
    points = []
    for seed in cfg["seeds"]:
        for group, attack, t_star, overrides in plan:
            points += evaluate_points(cfg, group, attack, int(seed), t_star, overrides)
    rec = RunRecord(command, cfg, points=points, inputs=_inputs(cfg))
    rec.work = {"attack_runs": len(plan) * len(cfg["seeds"]), "points_per_run": int(cfg["n_test"]),
                "iterations_per_run": int(cfg["n_iter"]), "eot": int(cfg["eot"])}
    return rec


def run_attack(cfg: dict) -> RunRecord:
    validate_config(cfg)
    plan = [(a, a, None, {}) for a in cfg["attacks"]]
    rec = _attack_record("attack", cfg, plan)
    rec.memory = memory_probe(cfg)
    agg = rec.aggregates
    rec.sweep = [{"attack": a, "clean_acc": agg[a]["clean_acc"], "robust_acc": agg[a]["robust_acc"],
                  "mean_loss": agg[a]["mean_loss"]} for a in cfg["attacks"]]
    return rec


def run_ablate_t(cfg: dict) -> RunRecord:
    validate_config(cfg)
    plan = [(f"t={t}/{a}", a, int(t), {}) for t in cfg["t_values"] for a in cfg["attacks"]]
    rec = _attack_record("ablate-t", cfg, plan)
    agg = rec.aggregates
    rec.sweep = [{"t_star": int(t), "attack": a, "clean_acc": agg[f"t={t}/{a}"]["clean_acc"],
                  "robust_acc": agg[f"t={t}/{a}"]["robust_acc"]}
                 for t in cfg["t_values"] for a in cfg["attacks"]]
    return rec


def run_ablate_lambda(cfg: dict) -> RunRecord:
    validate_config(cfg)
    plan = [(f"lambda={lam!r}", "diffattack", None, {"lam": float(lam)}) for lam in cfg["lambdas"]]
    rec = _attack_record("ablate-lambda", cfg, plan)
    agg = rec.aggregates
    rec.sweep = [{"lambda": float(lam), "clean_acc": agg[f"lambda={lam!r}"]["clean_acc"],
                  "robust_acc": agg[f"lambda={lam!r}"]["robust_acc"]} for lam in cfg["lambdas"]]
    return rec


def run_ablate_steps(cfg: dict) -> RunRecord:
    validate_config(cfg)
    plan = [(f"steps={s}", "diffattack", None, {"timestep_strategy": TimestepStrategy(s)})
            for s in cfg["strategies"]]
    rec = _attack_record("ablate-steps", cfg, plan)
    agg = rec.aggregates
    rec.sweep = []
    for s in cfg["strategies"]:
        a = agg[f"steps={s}"]
        rec.sweep.append({"strategy": s, "clean_acc": a["clean_acc"], "robust_acc": a["robust_acc"],
                          "drop": a["clean_acc"] - a["robust_acc"]})
    return rec


def run_memcheck(cfg: dict) -> RunRecord:
    """Peak graph bytes of segmentwise vs full-graph backward on chains of length t.

    Each chain is a DDPM purification with an untrained noise model over a schedule of
    length t, diffused all the way (t_star = t); weights do not affect byte counts.
    """
    budget = int(cfg["memcheck_budget_bytes"])
    batch = int(cfg["memcheck_batch"])
    dim = int(cfg["dataset"]["data_dim"])
    hidden = tuple(cfg["diffusion_train"]["hidden"])
    params = init_eps_model(dim, hidden, int(cfg["diffusion_train"]["time_embed_dim"]), Streams(0))
    x = Streams(0).uniform("memcheck/x", (batch, dim))
    rows = []
    for t in cfg["memcheck_t_values"]:
        t = int(t)
        if t < 1:
            raise ConfigError("memcheck t values must be >= 1")
        sched = linear_schedule(t, float(cfg["schedule"]["beta_min"]), float(cfg["schedule"]["beta_max"]))
        pur = Purifier(PurifierConfig("ddpm", t, sched), params)
        _, traj = pur(x, Streams(0), prefix="memcheck")
        m_seg = ad.MemoryMeter()
        g_seg = segmentwise_backward(traj.record, np.ones_like(x), meter=m_seg)
        seg = int(peak_live_bytes(m_seg))
        row = {"t": t, "graph_peak_bytes": seg, "sample_bytes": int(traj.record.sample_bytes)}
        # the full graph holds every step's tape at once; predict it before building it
        if seg * len(traj.record.steps) > budget:
            row["fullgraph_peak_bytes"] = "skipped"
        else:
            m_full = ad.MemoryMeter()
            g_full = fullgraph_backward(traj.record, np.ones_like(x), meter=m_full)
            if not np.array_equal(g_seg, g_full):
                raise RuntimeError(f"segmentwise and full-graph gradients differ at t={t}")
            row["fullgraph_peak_bytes"] = int(peak_live_bytes(m_full))
        rows.append(row)
    rec = RunRecord("memcheck", cfg, sweep=rows)
    rec.memory = {"budget_bytes": budget}
    return rec


def run_theory_check(cfg: dict) -> RunRecord:
    pilot_cfg = PilotConfig()
    report = gaussian_pilot(pilot_cfg)
    rows = [{"delta": g["delta"], "t": g["t"], "lhs": lo, "rhs": hi, "holds": lo <= hi}
            for g, lo, hi in zip(report["grid"], report["lhs"], report["rhs"])]
    rec = RunRecord("theory-check", {}, sweep=rows)
    rec.extra = {"violations": report["violations"], "violation_inputs": report["violation_inputs"],
                 "M": report["M"], "R": report["R"], "sigma0": report["sigma0"],
                 "schedule": report["schedule"]}
    return rec


def run_train(cfg: dict, kind: str) -> tuple[RunRecord, CheckpointFile]:
    validate_config(cfg)
    train, _ = load_data(cfg)
    if kind == "diffusion":
        ck = train_diffusion(train, _schedule(cfg), TrainConfig(**_train_kwargs(cfg["diffusion_train"])))
    elif kind == "classifier":
        ck = train_classifier(train, TrainConfig(**_train_kwargs(cfg["classifier_train"])))
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    rec = RunRecord("train", cfg, inputs={"kind": kind})
    rec.extra = {"checkpoint_hash": content_hash(ck.to_dict()),
                 "final_loss": ck.metadata.get("final_loss"),
                 "loss_curve": ck.metadata.get("loss_curve")}
    if kind == "classifier":
        rec.extra["train_accuracy"] = ck.metadata["train_accuracy"]
    return rec, ck


def run_gen_data(cfg: dict) -> RunRecord:
    validate_config(cfg)
    data = gen_dataset(DatasetSpec(**cfg["dataset"]))
    rows = [{"index": i, "label": int(data.y[i]), **{f"x{j}": float(data.x[i, j]) for j in range(data.x.shape[1])}}
            for i in range(len(data.y))]
    counts = np.bincount(data.y, minlength=data.spec.num_classes)
    rec = RunRecord("gen-data", cfg, sweep=rows)
    rec.extra = {"class_counts": [int(c) for c in counts], "data_hash": content_hash(data.tobytes().hex())}
    return rec
