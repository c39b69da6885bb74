"""JSON checkpoints.  Floats are written with ``repr`` so every value round-trips exactly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffusion import NoiseSchedule
from ..models import ClassifierParams, MlpParams

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointFile:
    kind: str
    params: MlpParams
    schedule: NoiseSchedule | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "layer_dims": list(p.layer_dims),
            "time_embed_dim": p.time_embed_dim,
            "schedule": None if self.schedule is None else self.schedule.to_dict(),
            "params": {k: {"shape": list(v.shape), "data": [float(a) for a in v.ravel()]}
                       for k, v in p.arrays().items()},
            "metadata": self.metadata,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_checkpoint(ckpt: CheckpointFile, path) -> None:
    Path(path).write_text(ckpt.dumps(), encoding="utf-8")


def _parse(raw: bytes, where: str) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{where}: invalid UTF-8 at byte {exc.start}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise CheckpointError(f"{where}: JSON parse error at byte {offset}: {exc.msg}") from exc


def loads_checkpoint(raw: bytes, where: str = "<bytes>") -> CheckpointFile:
    doc = _parse(raw, where)
    if not isinstance(doc, dict):
        raise CheckpointError(f"{where}: top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{where}: format_version {version} not supported (expected {FORMAT_VERSION})")
    try:
        kind = doc["kind"]
        dims = [int(d) for d in doc["layer_dims"]]
        ted = int(doc["time_embed_dim"])
        arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
        n = len(dims) - 1
        cls = ClassifierParams if kind == "classifier" else MlpParams
        params = cls(dims, [arrays[f"W{i}"] for i in range(n)], [arrays[f"b{i}"] for i in range(n)], ted)
        sched = doc.get("schedule")
        schedule = None if sched is None else NoiseSchedule(np.array(sched["betas"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}: malformed checkpoint: {exc}") from exc
    return CheckpointFile(kind, params, schedule, doc.get("metadata", {}))


def load_checkpoint(path) -> CheckpointFile:
    return loads_checkpoint(Path(path).read_bytes(), str(path))
