"""Counter-based random streams addressed by (master seed, label).

Every draw is a pure function of ``(seed, label, shape)``: the label is hashed
into a Philox key and the counter always starts at zero, so any stream can be
replayed bit-for-bit at any time without carrying generator state around.
Gaussian variates come from Box-Muller on 53-bit uniforms.
"""

from __future__ import annotations

import hashlib
from collections.abc import Sequence

import numpy as np

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def stream_key(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}|{label}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def _raw(seed: int, label: str, n: int) -> np.ndarray:
    bitgen = np.random.Philox(key=stream_key(seed, label))
    return bitgen.random_raw(n)


class Streams:
    """Factory for labelled deterministic random draws.

    >>> s = Streams(7)
    >>> bool((s.normal("a", (3,)) == s.normal("a", (3,))).all())
    True
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __repr__(self) -> str:
        return f"Streams(seed={self.seed})"

    def child(self, seed_offset: int) -> "Streams":
        return Streams(stream_key(self.seed, f"child/{seed_offset}") % (2**63))

    def uniform(self, label: str, shape) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        n = int(np.prod(shape, dtype=np.int64))
        raw = _raw(self.seed, label, n)
        return ((raw >> np.uint64(11)).astype(np.float64) * _INV_2_53).reshape(shape)

    def normal(self, label: str, shape) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        raw = _raw(self.seed, label, 2 * m) >> np.uint64(11)
        # u1 in (0, 1] keeps the log finite
        u1 = (raw[:m].astype(np.float64) + 1.0) * _INV_2_53
        u2 = raw[m:].astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(_TWO_PI * u2), r * np.sin(_TWO_PI * u2)])
        return z[:n].reshape(shape)

    def normal_stack(self, labels: Sequence[str], shape) -> np.ndarray:
        """Stack independent draws (one per label) along axis 0."""
        if len(labels) == 1:
            return self.normal(labels[0], shape)
        return np.concatenate([self.normal(lab, shape) for lab in labels], axis=0)

    def rademacher(self, label: str, shape) -> np.ndarray:
        return np.where(self.uniform(label, shape) < 0.5, -1.0, 1.0)

    def integers(self, label: str, low: int, high: int, size: int) -> np.ndarray:
        """Uniform integers in [low, high)."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(label, (size,))
        return np.minimum(low + np.floor(u * span).astype(np.int64), high - 1)

    def choice(self, label: str, population: Sequence[int], k: int) -> list[int]:
        """``k`` distinct items drawn without replacement, returned sorted."""
        pop = list(population)
        if k > len(pop):
            raise ValueError(f"cannot draw {k} distinct items from {len(pop)}")
        order = np.argsort(self.uniform(label, (len(pop),)), kind="stable")
        return sorted(pop[i] for i in order[:k])

    def permutation(self, label: str, n: int) -> np.ndarray:
        return np.argsort(self.uniform(label, (n,)), kind="stable")
