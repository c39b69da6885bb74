"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from . import experiments as ex
from .checkpoint import save_checkpoint
from .records import csv_text, write_run_record

SWEEP_COLUMNS = {
    "attack": ["attack", "clean_acc", "robust_acc", "mean_loss"],
    "ablate-t": ["t_star", "attack", "clean_acc", "robust_acc"],
    "ablate-lambda": ["lambda", "clean_acc", "robust_acc"],
    "ablate-steps": ["strategy", "clean_acc", "robust_acc", "drop"],
    "memcheck": ["t", "graph_peak_bytes", "sample_bytes", "fullgraph_peak_bytes"],
    "theory-check": ["delta", "t", "lhs", "rhs", "holds"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}\n")


def _ints(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _floats(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _names(s: str) -> list[str]:
    return [v.strip() for v in s.split(",") if v.strip()]


# flag -> (config key, parser)
OVERRIDES = {
    "--seed": ("seeds", lambda s: [int(s)]),
    "--seeds": ("seeds", _ints),
    "--t-star": ("t_star", int),
    "--t-values": ("t_values", _ints),
    "--eps": ("eps", float),
    "--norm": ("norm", str),
    "--n-iter": ("n_iter", int),
    "--eot": ("eot", int),
    "--lam": ("lam", float),
    "--lambdas": ("lambdas", _floats),
    "--strategies": ("strategies", _names),
    "--attacks": ("attacks", _names),
    "--n-test": ("n_test", int),
    "--purifier": ("purifier", str),
    "--n-eval-draws": ("n_eval_draws", int),
    "--diffusion-checkpoint": ("diffusion_checkpoint", str),
    "--classifier-checkpoint": ("classifier_checkpoint", str),
    "--budget-bytes": ("memcheck_budget_bytes", int),
}

SUBCOMMAND_FLAGS = {
    "attack": ["--seed", "--seeds", "--t-star", "--eps", "--norm", "--n-iter", "--eot", "--lam", "--attacks",
               "--n-test", "--purifier", "--n-eval-draws", "--diffusion-checkpoint", "--classifier-checkpoint"],
    "ablate-t": ["--seed", "--seeds", "--t-values", "--eps", "--norm", "--n-iter", "--eot", "--lam", "--attacks",
                 "--n-test", "--purifier", "--n-eval-draws", "--diffusion-checkpoint",
                 "--classifier-checkpoint"],
    "ablate-lambda": ["--seed", "--seeds", "--t-star", "--eps", "--norm", "--n-iter", "--eot", "--lambdas",
                      "--n-test", "--purifier", "--n-eval-draws", "--diffusion-checkpoint",
                      "--classifier-checkpoint"],
    "ablate-steps": ["--seed", "--seeds", "--t-star", "--eps", "--norm", "--n-iter", "--eot", "--lam",
                     "--strategies", "--n-test", "--purifier", "--n-eval-draws", "--diffusion-checkpoint",
                     "--classifier-checkpoint"],
    "memcheck": ["--t-values", "--budget-bytes"],
    "theory-check": [],
    "train": [],
    "gen-data": [],
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="purifyattack", description="Attacks on diffusion purification: toy experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "attack": "robust accuracy of each configured attack",
        "ablate-t": "sweep the diffusion length",
        "ablate-lambda": "sweep the deviated-loss weight",
        "ablate-steps": "compare time-step sampling strategies for the deviated loss",
        "memcheck": "peak graph bytes, segmentwise vs full-graph backward",
        "theory-check": "Gaussian pilot of the purification bound",
        "train": "train the noise model or the classifier",
        "gen-data": "generate the toy dataset",
    }
    for name, flags in SUBCOMMAND_FLAGS.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", help="JSON file whose top-level keys override the defaults")
        sp.add_argument("--out", help="write the run record (JSON) here")
        sp.add_argument("--csv", help="write the sweep table (CSV) here")
        for flag in flags:
            key, conv = OVERRIDES[flag]
            # --t-values on memcheck has its own config key
            dest_key = "memcheck_t_values" if (name == "memcheck" and flag == "--t-values") else key
            sp.add_argument(flag, type=conv, dest="ov__" + dest_key, default=None, metavar=flag[2:].upper())
        if name == "train":
            sp.add_argument("--kind", choices=("diffusion", "classifier"), required=True)
            sp.add_argument("--checkpoint", required=True, help="where to save the trained model")
    return p


def load_config(args) -> dict:
    override = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                override = json.load(fh)
        except OSError as exc:
            raise ex.ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ex.ConfigError(f"config is not valid JSON at byte {exc.pos}: {exc.msg}") from exc
        if not isinstance(override, dict):
            raise ex.ConfigError("config must be a JSON object")
    cfg = ex.merge_config(ex.DEFAULT_CONFIG, override)
    for k, v in vars(args).items():
        if k.startswith("ov__") and v is not None:
            cfg[k[4:]] = v
    return cfg


def _table(rows: list[dict], cols: list[str]) -> str:
    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    cells = [[fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def _dispatch(args, cfg):
    cmd = args.command
    if cmd == "attack":
        return ex.run_attack(cfg)
    if cmd == "ablate-t":
        return ex.run_ablate_t(cfg)
    if cmd == "ablate-lambda":
        return ex.run_ablate_lambda(cfg)
    if cmd == "ablate-steps":
        return ex.run_ablate_steps(cfg)
    if cmd == "memcheck":
        return ex.run_memcheck(cfg)
    if cmd == "theory-check":
        return ex.run_theory_check(cfg)
    if cmd == "gen-data":
        return ex.run_gen_data(cfg)
    rec, ck = ex.run_train(cfg, args.kind)
    save_checkpoint(ck, args.checkpoint)
    return rec


def run_cli(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = load_config(args)
        t0 = time.perf_counter()
        rec = _dispatch(args, cfg)
        elapsed = time.perf_counter() - t0
    except ex.ConfigError as exc:
        stderr.write(f"config error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure during the run maps to exit 2
        stderr.write(f"run failed: {type(exc).__name__}: {exc}\n")
        return 2
    cols = SWEEP_COLUMNS.get(args.command)
    try:
        if args.out:
            write_run_record(rec, args.out)
        if args.csv:
            if cols is None:
                cols = list(rec.sweep[0].keys()) if rec.sweep else []
            with open(args.csv, "w", encoding="utf-8", newline="") as fh:
                fh.write(csv_text(rec.sweep, cols))
    except OSError as exc:
        stderr.write(f"run failed: cannot write output: {exc}\n")
        return 2
    if cols and rec.sweep:
        stdout.write(_table(rec.sweep, cols) + "\n")
    for k in ("violations", "train_accuracy", "final_loss", "class_counts"):
        if k in rec.extra:
            stdout.write(f"{k}: {rec.extra[k]}\n")
    stdout.write(f"input hash {rec.input_hash}  wall time {elapsed:.1f}s\n")
    return 0


def main() -> None:
    sys.exit(run_cli())
