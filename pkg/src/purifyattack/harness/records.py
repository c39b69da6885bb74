"""Run records: canonical JSON with aggregates derivable from per-point rows.

Wall-clock time is deliberately absent so that repeated runs are byte
identical; the ``work`` block counts deterministic units (purifier steps,
gradient evaluations) instead.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

RECORD_VERSION = 1


def canonical_json(obj) -> str:
    """Sorted keys, shortest round-trip floats, LF endings."""
    return json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False, ensure_ascii=False) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item) and getattr(obj, "ndim", 1) == 0:
        obj = obj.item()
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite value {obj!r} cannot be recorded")
        return float(obj)
    return obj


def content_hash(obj) -> str:
    """git blob hash of the canonical JSON encoding of ``obj``."""
    body = canonical_json(obj).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def aggregate(points: list[dict]) -> dict:
    """Accuracy and mean loss per group key (``group`` field), plus per-seed breakdown."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for p in points:
        groups[p["group"]].append(p)
    out = {}
    for g in sorted(groups):
        rows = groups[g]
        seeds: dict[int, list[dict]] = defaultdict(list)
        for r in rows:
            seeds[r["seed"]].append(r)
        per_seed = {str(s): _summ(seeds[s]) for s in sorted(seeds)}
        seed_vals = list(per_seed.values())
        out[g] = {
            "n": len(rows),
            # seed means of seed-level accuracies; with equal-size seeds this equals the pooled value
            "clean_acc": _mean([v["clean_acc"] for v in seed_vals]),
            "robust_acc": _mean([v["robust_acc"] for v in seed_vals]),
            "mean_loss": _mean([v["mean_loss"] for v in seed_vals]),
            "per_seed": per_seed,
        }
    return out


def _summ(rows: list[dict]) -> dict:
    return {
        "clean_acc": _mean([float(r["clean_correct"]) for r in rows]),
        "robust_acc": _mean([float(r["robust_correct"]) for r in rows]),
        "mean_loss": _mean([float(r["loss"]) for r in rows]),
    }


def _mean(v) -> float:
    return float(math.fsum(v) / len(v)) if v else 0.0


@dataclass
class RunRecord:
    command: str
    config: dict
    points: list[dict] = field(default_factory=list)
    sweep: list[dict] = field(default_factory=list)
    memory: dict = field(default_factory=dict)
    work: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)

    @property
    def aggregates(self) -> dict:
        return aggregate(self.points)

    @property
    def input_hash(self) -> str:
        return content_hash({"command": self.command, "config": self.config, "inputs": self.inputs})

    def to_dict(self) -> dict:
        return {
            "format_version": RECORD_VERSION,
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "input_hash": self.input_hash,
            "points": self.points,
            "aggregates": self.aggregates,
            "sweep": self.sweep,
            "memory": self.memory,
            "work": self.work,
            "extra": self.extra,
        }


def write_run_record(r: RunRecord, path) -> None:
    text = canonical_json(r.to_dict())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_run_record(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format_version") != RECORD_VERSION:
        raise ValueError(f"record version {d.get('format_version')} != supported {RECORD_VERSION}")
    return d


def check_aggregates(d: dict, tol: float = 0.0) -> bool:
    """True when the stored aggregates match a recomputation from the stored points."""
    again = _clean(aggregate(d["points"]))
    return _close(again, d["aggregates"], tol)


def _close(a, b, tol) -> bool:
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(_close(a[k], b[k], tol) for k in a)
    if isinstance(a, float) or isinstance(b, float):
        return abs(float(a) - float(b)) <= tol
    return a == b


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=",", lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(rows: list[dict], columns: list[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(rows, columns))
