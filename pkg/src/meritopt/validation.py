"""Small argument-checking helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a 1-d array, got shape {x.shape}")
    return x


def require_finite(x: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def require_same_dim(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"{name_a} and {name_b} must have the same shape, "
            f"got {a.shape} and {b.shape}"
        )


def check_weights(w, n: int | None = None, tol: float = 1e-9) -> np.ndarray:
    """Validate a point on the probability simplex."""
    w = as_vector(w, "weights")
    if n is not None and w.shape[0] != n:
        raise ValueError(f"weights must have length {n}, got {w.shape[0]}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if abs(float(w.sum()) - 1.0) > tol:
        raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
    return w


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_nonnegative_int(value: int, name: str) -> int:
    if int(value) != value or int(value) < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...).

    Streams with different keys are statistically independent, so consumers
    can draw from one without perturbing another. Used to keep minibatch
    sampling reproducible per (source, step) regardless of evaluation order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))
