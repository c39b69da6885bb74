"""Synthetic 2-D (or padded higher-dimensional) classification sets in [0, 1]^d."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..rng import Streams

KINDS = ("blobs", "moons", "rings")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    n_points: int = 512
    noise_scale: float = 0.05
    seed: int = 0
    data_dim: int = 2
    num_classes: int = 2
    clusters_per_class: int = 2
    spread: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.n_points < 2 * self.num_classes:
            raise ValueError(f"n_points={self.n_points} < 2 * num_classes")
        if self.data_dim < 2:
            raise ValueError("data_dim must be >= 2")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.clusters_per_class < 1:
            raise ValueError("clusters_per_class must be >= 1")
        if self.spread is not None and not 0 < self.spread < 1:
            raise ValueError("spread must lie in (0, 1)")
        if self.kind == "moons" and self.num_classes != 2:
            raise ValueError("moons has exactly 2 classes")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    spec: DatasetSpec

    def __len__(self) -> int:
        return len(self.y)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return (Dataset(self.x[:n_first], self.y[:n_first], self.spec),
                Dataset(self.x[n_first:], self.y[n_first:], self.spec))

    def tobytes(self) -> bytes:
        return self.x.tobytes() + self.y.astype(np.int64).tobytes()


def _blob_centres(k: int, per_class: int, spread: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Checkerboard grid: with 2 classes and 2 clusters each this is the XOR layout.

    ``spread`` is the distance between neighbouring centres (default 1/g for a g x g grid).
    """
    n = k * per_class
    g = int(np.ceil(np.sqrt(n)))
    cells = [(i, j) for i in range(g) for j in range(g)]
    cells.sort(key=lambda c: (c[0] + c[1]) % k)
    centres, labels = [], []
    for c in range(k):
        own = [cell for cell in cells if (cell[0] + cell[1]) % k == c]
        if len(own) < per_class:
            own = [cell for cell in cells if cell not in centres][:per_class]
        for cell in own[:per_class]:
            centres.append(cell)
            labels.append(c)
    spread = 1.0 / g if spread is None else spread
    pts = 0.5 + spread * (np.array(centres, dtype=np.float64) - (g - 1) / 2.0)
    if pts.min() < 0 or pts.max() > 1:
        raise ValueError(f"spread {spread} puts blob centres outside [0, 1]")
    return pts, np.array(labels)


def gen_dataset(spec: DatasetSpec) -> Dataset:
    """Deterministic labelled sample; labels cycle through the classes so counts differ by at most 1."""
    st = Streams(spec.seed)
    n, k = spec.n_points, spec.num_classes
    y = np.arange(n) % k
    y = y[st.permutation(f"data/{spec.kind}/order", n)]
    noise = spec.noise_scale * st.normal(f"data/{spec.kind}/noise", (n, 2))
    if spec.kind == "blobs":
        centres, owners = _blob_centres(k, spec.clusters_per_class, spec.spread)
        which = np.zeros(n, dtype=np.int64)
        for c in range(k):
            idx = np.flatnonzero(y == c)
            mine = np.flatnonzero(owners == c)
            which[idx] = mine[np.arange(len(idx)) % len(mine)]
        base = centres[which]
    elif spec.kind == "moons":
        theta = np.pi * st.uniform("data/moons/theta", (n,))
        upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
        raw = np.where((y == 0)[:, None], upper, lower)
        # raw spans [-1, 2] x [-0.5, 1]
        base = np.stack([(raw[:, 0] + 1.0) / 3.0, (raw[:, 1] + 0.5) / 1.5 * 0.5 + 0.25], axis=1)
        base = 0.1 + 0.8 * base
    else:
        theta = 2 * np.pi * st.uniform("data/rings/theta", (n,))
        radius = 0.1 + 0.3 * (y + 1) / k
        base = 0.5 + radius[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    x2 = base + noise
    if spec.data_dim > 2:
        extra = 0.5 + spec.noise_scale * st.normal("data/pad", (n, spec.data_dim - 2))
        x2 = np.concatenate([x2, extra], axis=1)
    return Dataset(np.clip(x2, 0.0, 1.0), y.astype(np.int64), spec)
