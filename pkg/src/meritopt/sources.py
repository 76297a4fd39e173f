"""Datasets the trainer draws gradients from.

A source is a fixed array of samples plus an id and a role. Roles:

* ``target-train``      -- drawn from the distribution we care about
* ``auxiliary``         -- any other pool of data
* ``target-validation`` -- held-out target data used to score weights

On disk a source is a text file: a ``dim=<d>`` header line followed by one
comma-separated sample per line. Floats are written with 17 significant
digits so save/load round-trips exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .validation import substream

ROLE_TARGET_TRAIN = "target-train"
ROLE_AUXILIARY = "auxiliary"
ROLE_TARGET_VALIDATION = "target-validation"
ROLES = (ROLE_TARGET_TRAIN, ROLE_AUXILIARY, ROLE_TARGET_VALIDATION)


@dataclass
class DataSource:
    id: str
    data: np.ndarray
    role: str = ROLE_AUXILIARY
    kind: str = "gaussian"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError(
                f"source {self.id!r} needs a 2-d sample array with at least one row"
            )
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}; expected one of {ROLES}")

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def sample_dim(self) -> int:
        return self.data.shape[1]


def unit_vector(dim: int, seed: int) -> np.ndarray:
    v = substream(seed, 11).standard_normal(dim)
    e = v / np.linalg.norm(v)
    # renormalization leaves at most a couple of ulps of error
    assert abs(float(np.linalg.norm(e)) - 1.0) <= 1e-12
    return e


def make_gaussian_source(
    source_id: str,
    dim: int,
    size: int,
    seed: int,
    mean: str = "zero",
    mu: float = 0.0,
    unit_seed: int | None = None,
    noise_scale: float = 1.0,
    role: str = ROLE_AUXILIARY,
) -> DataSource:
    """Isotropic Gaussian samples around a configurable mean.

    ``mean`` is one of ``zero``, ``scaled-ones`` (mu times the ones vector)
    or ``random-unit`` (a fixed unit-norm direction drawn from ``unit_seed``,
    falling back to ``seed``).
    """
    if dim < 1 or size < 1:
        raise ValueError("dim and size must be at least 1")
    if mean == "zero":
        center = np.zeros(dim)
    elif mean == "scaled-ones":
        center = float(mu) * np.ones(dim)
    elif mean == "random-unit":
        center = unit_vector(dim, seed if unit_seed is None else unit_seed)
    else:
        raise ValueError(f"unknown mean spec {mean!r}")
    rng = substream(seed, 10)
    data = center + float(noise_scale) * rng.standard_normal((size, dim))
    meta = {
        "mean_vector": center.copy(),
        "noise_scale": float(noise_scale),
        "problem": "mean-estimation",
    }
    return DataSource(source_id, data, role=role, kind="gaussian", meta=meta)


def make_regression_source(
    source_id: str,
    dim: int,
    size: int,
    seed: int,
    x_true: np.ndarray | None = None,
    noise: float = 0.1,
    role: str = ROLE_AUXILIARY,
) -> DataSource:
    """Rows are [features..., response] with a linear ground truth."""
    rng = substream(seed, 10)
    if x_true is None:
        x_true = unit_vector(dim, seed)
    else:
        x_true = np.asarray(x_true, dtype=float)
        if x_true.shape != (dim,):
            raise ValueError("x_true must have shape (dim,)")
    feats = rng.standard_normal((size, dim))
    y = feats @ x_true + float(noise) * rng.standard_normal(size)
    data = np.column_stack([feats, y])
    meta = {"x_true": x_true.copy(), "noise": float(noise), "problem": "linear-regression"}
    return DataSource(source_id, data, role=role, kind="linear", meta=meta)


def make_classification_source(
    source_id: str,
    dim: int,
    size: int,
    seed: int,
    x_true: np.ndarray | None = None,
    role: str = ROLE_AUXILIARY,
) -> DataSource:
    """Rows are [features..., label] with Bernoulli labels from a logistic model."""
    rng = substream(seed, 10)
    if x_true is None:
        x_true = 2.0 * unit_vector(dim, seed)
    else:
        x_true = np.asarray(x_true, dtype=float)
        if x_true.shape != (dim,):
            raise ValueError("x_true must have shape (dim,)")
    feats = rng.standard_normal((size, dim))
    p = 1.0 / (1.0 + np.exp(-feats @ x_true))
    y = (rng.random(size) < p).astype(float)
    data = np.column_stack([feats, y])
    meta = {"x_true": x_true.copy(), "problem": "logistic-regression"}
    return DataSource(source_id, data, role=role, kind="logistic", meta=meta)


def sample_minibatch(source: DataSource, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform minibatch without replacement."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    if batch_size > source.size:
        raise ValueError(
            f"batch_size {batch_size} exceeds source {source.id!r} size {source.size}"
        )
    rows = rng.choice(source.size, size=batch_size, replace=False)
    return source.data[rows]


def allocate_adaptive_batches(
    sizes, total: int, min_bound: int, max_bound: int
) -> np.ndarray:
    """Split a total batch budget across sources proportionally to their sizes.

    Solves for lambda such that sum_i clip(lambda * size_i, min_bound,
    min(max_bound, size_i)) == total, then rounds by largest remainder
    (ties to the lowest index). The sum may fall short of ``total`` only
    when every source is clamped at its cap.
    """
    sizes = np.asarray(sizes, dtype=float)
    if sizes.ndim != 1 or sizes.shape[0] < 1:
        raise ValueError("sizes must be a non-empty 1-d sequence")
    if np.any(sizes < 1):
        raise ValueError("infeasible batch plan: every source needs at least one sample")
    n = sizes.shape[0]
    total = int(total)
    lo = int(min_bound)
    if lo < 1 or int(max_bound) < lo:
        raise ValueError(
            f"infeasible batch plan: bounds [{min_bound}, {max_bound}] are not ordered"
        )
    hi = np.minimum(float(max_bound), sizes)
    if np.any(hi < lo):
        short = int(np.argmin(hi))
        raise ValueError(
            f"infeasible batch plan: source index {short} holds {int(sizes[short])} "
            f"samples, below the per-source minimum {lo}"
        )
    if n * lo > total:
        raise ValueError(
            f"infeasible batch plan: {n} sources at minimum {lo} exceed total {total}"
        )

    if total >= float(hi.sum()):
        # every source clamps at its cap; the only case the sum may deviate
        return hi.astype(int)

    def coverage(lam: float) -> float:
        return float(np.clip(lam * sizes, lo, hi).sum())

    breakpoints = np.unique(np.concatenate([lo / sizes, hi / sizes]))
    prev = 0.0
    cross = breakpoints[-1]
    for bp in breakpoints:
        if coverage(float(bp)) >= total:
            cross = float(bp)
            break
        prev = float(bp)
    mid = 0.5 * (prev + cross)
    at_lo = mid * sizes <= lo
    at_hi = mid * sizes >= hi
    free = ~(at_lo | at_hi)
    fixed_sum = lo * int(at_lo.sum()) + float(hi[at_hi].sum())
    free_mass = float(sizes[free].sum())
    lam = cross if free_mass == 0.0 else (total - fixed_sum) / free_mass
    cont = np.clip(lam * sizes, lo, hi)

    base = np.floor(cont).astype(int)
    remainder = cont - base
    missing = total - int(base.sum())
    if missing > 0:
        eligible = np.flatnonzero(base < hi)
        order = eligible[np.argsort(-remainder[eligible], kind="stable")]
        base[order[:missing]] += 1
    return base


@dataclass
class BatchPlan:
    sizes: np.ndarray
    mode: str


class SourceRegistry:
    """Tracks which training sources are still active.

    Target sources are protected from drops unless the caller explicitly
    allows it; dropping the last active source is always an error.
    """

    def __init__(self, sources: list[DataSource]):
        ids = [s.id for s in sources]
        if len(set(ids)) != len(ids):
            raise ValueError("source ids must be unique")
        if not sources:
            raise ValueError("need at least one source")
        self.sources = list(sources)
        self._active = [True] * len(sources)

    def __len__(self) -> int:
        return len(self.sources)

    def index_of(self, source_id: str) -> int:
        for i, s in enumerate(self.sources):
            if s.id == source_id:
                return i
        raise KeyError(f"no source with id {source_id!r}")

    def is_active(self, index: int) -> bool:
        return self._active[index]

    def active_indices(self) -> list[int]:
        return [i for i, a in enumerate(self._active) if a]

    def active_sources(self) -> list[DataSource]:
        return [self.sources[i] for i in self.active_indices()]

    def active_mask(self) -> np.ndarray:
        return np.array(self._active, dtype=bool)

    def drop(self, source_id: str, allow_target_drop: bool = False) -> int:
        i = self.index_of(source_id)
        if not self._active[i]:
            raise ValueError(f"source {source_id!r} is already inactive")
        src = self.sources[i]
        if src.role != ROLE_AUXILIARY and not allow_target_drop:
            raise ValueError(f"refusing to drop target source {source_id!r}")
        if len(self.active_indices()) == 1:
            raise ValueError("cannot drop the last active source")
        self._active[i] = False
        return i


def drop_source(registry: SourceRegistry, source_id: str, allow_target_drop: bool = False) -> int:
    return registry.drop(source_id, allow_target_drop=allow_target_drop)


def save_source_data(path: str, data: np.ndarray, atomic: bool = True) -> None:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be 2-d")
    lines = [f"dim={data.shape[1]}"]
    for row in data:
        lines.append(",".join(f"{v:.17g}" for v in row))
    text = "\n".join(lines) + "\n"
    if atomic:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def load_source_data(path: str) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("dim="):
        raise ValueError(f"{path}: missing 'dim=<d>' header")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise ValueError(f"{path}: malformed dim header {lines[0]!r}") from None
    if dim < 1:
        raise ValueError(f"{path}: dim must be positive")
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != dim:
            raise ValueError(f"{path}: line {k} has {len(parts)} values, expected {dim}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"{path}: line {k} holds a non-numeric value") from None
    if not rows:
        raise ValueError(f"{path}: no samples after the header")
    return np.asarray(rows, dtype=float)


def epoch_length(target_size: int, target_batch: int) -> int:
    return max(1, math.ceil(target_size / max(1, target_batch)))
