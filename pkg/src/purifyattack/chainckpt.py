"""Gradient checkpointing over a chain of stochastic steps.

The forward pass stores only the samples between steps.  The backward pass
walks the chain from the end, replaying one segment at a time on a fresh tape
(same input sample, same labelled noise stream), pulling the incoming
gradient through it and releasing the tape before moving on.  Only one
segment graph is ever live.

``fullgraph_backward`` keeps the whole chain on a single tape instead and is
the reference the checkpointed path must match bit for bit.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import adcore as ad
from .rng import Streams


@dataclass(frozen=True)
class StepSpec:
    """One chain step ``x_next = fn(x, noise)``.

    ``noise_labels`` name the random streams the step consumes; with several
    labels the rows of ``x`` are split evenly between them (one block per
    independent draw).  No labels means a noiseless step (``noise`` is None).
    """

    fn: Callable
    noise_labels: tuple[str, ...] = ()
    name: str = ""

    def noise(self, x_shape: tuple, streams: Streams | None):
        if not self.noise_labels:
            return None
        if streams is None:
            raise ValueError(f"step {self.name!r} needs random streams")
        k = len(self.noise_labels)
        if x_shape[0] % k:
            raise ad.ShapeError(f"step {self.name!r}: {x_shape[0]} rows do not split into {k} draws")
        block = (x_shape[0] // k, *x_shape[1:])
        return streams.normal_stack(self.noise_labels, block)

    def run(self, x, streams: Streams | None):
        return self.fn(x, self.noise(ad.value(x).shape, streams))


@dataclass
class ChainRecord:
    steps: list[StepSpec]
    samples: list[np.ndarray]
    streams: Streams | None = None

    @property
    def rng_states(self) -> list[tuple[str, ...]]:
        return [s.noise_labels for s in self.steps]

    @property
    def sample_bytes(self) -> int:
        return sum(s.nbytes for s in self.samples)

    def __len__(self) -> int:
        return len(self.steps)


def forward_record(steps: Sequence[StepSpec], x0, streams: Streams | None = None) -> ChainRecord:
    """Run the chain without any tape and keep every intermediate sample."""
    if not steps:
        raise ValueError("forward_record needs at least one step")
    x = np.asarray(x0, dtype=np.float64)
    samples = [x]
    for i, step in enumerate(steps):
        try:
            x = np.asarray(step.run(x, streams), dtype=np.float64)
        except Exception as exc:
            raise RuntimeError(f"chain step {i} ({step.name}) failed: {exc}") from exc
        samples.append(x)
    return ChainRecord(list(steps), samples, streams)


InjectMap = Mapping[int, "np.ndarray | Callable[[ChainRecord], np.ndarray]"]


def _resolve_inject(record: ChainRecord, inject: InjectMap | None) -> dict[int, np.ndarray]:
    out = {}
    n = len(record.samples)
    for idx, g in (inject or {}).items():
        if not 0 <= idx < n:
            raise IndexError(f"injection at sample {idx} outside chain of {n} samples")
        g = g(record) if callable(g) else g
        g = np.asarray(g, dtype=np.float64)
        if g.shape != record.samples[idx].shape:
            raise ad.ShapeError(f"injection at step {idx}: shape {g.shape} != sample shape "
                                f"{record.samples[idx].shape}")
        out[idx] = g
    return out


def _final_grad(record: ChainRecord, seed_grad, inj: dict[int, np.ndarray]) -> np.ndarray:
    seed = np.asarray(seed_grad, dtype=np.float64)
    if seed.shape != record.samples[-1].shape:
        raise ad.ShapeError(f"seed shape {seed.shape} != final sample shape {record.samples[-1].shape}")
    last = len(record.samples) - 1
    return seed + inj[last] if last in inj else seed


def segmentwise_backward(record: ChainRecord, seed_grad, inject: InjectMap | None = None,
                         meter: ad.MemoryMeter | None = None, segment_size: int = 1) -> np.ndarray:
    """Gradient w.r.t. the chain input with at most one live segment tape.

    ``inject[i]`` is a direct gradient on sample ``i`` (from loss terms that
    read intermediate samples); it is added once all downstream contributions
    to that sample have been accumulated.
    """
    if segment_size < 1:
        raise ValueError("segment_size must be >= 1")
    inj = _resolve_inject(record, inject)
    g = _final_grad(record, seed_grad, inj)
    end = len(record.steps)
    while end > 0:
        start = max(0, end - segment_size)
        tape = ad.Tape(meter)
        try:
            leaf = tape.var(record.samples[start])
            h = leaf
            interior = {}
            for i in range(start, end):
                h = record.steps[i].run(h, record.streams)
                if i + 1 < end and (i + 1) in inj:
                    interior[h] = inj[i + 1]
            if not isinstance(h, ad.Node):
                raise TypeError(f"step {end - 1} did not record on the tape")
            grads = tape.backward(h, g, extra_seeds=interior)
            g = grads[leaf]
        finally:
            tape.release()
        if start in inj:
            g = g + inj[start]
        end = start
    return g


def fullgraph_backward(record: ChainRecord, seed_grad, inject: InjectMap | None = None,
                       meter: ad.MemoryMeter | None = None) -> np.ndarray:
    """Reference gradient computed on one tape holding the whole chain."""
    inj = _resolve_inject(record, inject)
    g = _final_grad(record, seed_grad, inj)
    tape = ad.Tape(meter)
    try:
        leaf = tape.var(record.samples[0])
        nodes = [leaf]
        h = leaf
        for step in record.steps:
            h = step.run(h, record.streams)
            nodes.append(h)
        last = len(nodes) - 1
        extra = {nodes[i]: inj[i] for i in range(last) if i in inj}
        return tape.backward(nodes[last], g, extra_seeds=extra)[leaf]
    finally:
        tape.release()


def peak_live_bytes(meter: ad.MemoryMeter) -> int:
    return meter.peak
