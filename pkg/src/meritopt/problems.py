"""Loss models. Each exposes loss(x, batch) and gradient(x, batch)."""

from __future__ import annotations

import numpy as np

from .validation import as_vector


class MeanEstimation:
    """Squared distance to the samples: mean over the batch of ||x - xi||^2."""

    kind = "mean-estimation"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def sample_dim(self) -> int:
        return self.dim

    def _check(self, x, batch):
        x = as_vector(x, "x")
        batch = np.asarray(batch, dtype=float)
        if batch.ndim != 2 or batch.shape[1] != self.dim or x.shape[0] != self.dim:
            raise ValueError(
                f"mean-estimation expects x of dim {self.dim} and batch rows of "
                f"width {self.dim}, got x {x.shape} and batch {batch.shape}"
            )
        return x, batch

    def loss(self, x, batch) -> float:
        x, batch = self._check(x, batch)
        diff = x[None, :] - batch
        return float(np.mean(np.sum(diff * diff, axis=1)))

    def gradient(self, x, batch) -> np.ndarray:
        x, batch = self._check(x, batch)
        return 2.0 * (x - batch.mean(axis=0))

    def empirical_optimum(self, data):
        _, data = self._check(np.zeros(self.dim), data)
        x_star = data.mean(axis=0)
        return x_star, self.loss(x_star, data)


class LinearRegression:
    """Rows are [features..., y]; loss is mean squared residual."""

    kind = "linear-regression"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def sample_dim(self) -> int:
        return self.dim + 1

    def _check(self, x, batch):
        x = as_vector(x, "x")
        batch = np.asarray(batch, dtype=float)
        if batch.ndim != 2 or batch.shape[1] != self.dim + 1 or x.shape[0] != self.dim:
            raise ValueError(
                f"linear-regression expects batch rows of width {self.dim + 1} "
                f"(features plus response), got batch {batch.shape}"
            )
        return x, batch[:, :-1], batch[:, -1]

    def loss(self, x, batch) -> float:
        x, feats, y = self._check(x, batch)
        r = feats @ x - y
        return float(np.mean(r * r))

    def gradient(self, x, batch) -> np.ndarray:
        x, feats, y = self._check(x, batch)
        r = feats @ x - y
        return 2.0 * feats.T @ r / feats.shape[0]

    def empirical_optimum(self, data):
        x0 = np.zeros(self.dim)
        _, feats, y = self._check(x0, data)
        x_star, *_ = np.linalg.lstsq(feats, y, rcond=None)
        return x_star, self.loss(x_star, data)


class LogisticRegression:
    """Rows are [features..., label in {0,1}]; loss is mean logistic loss."""

    kind = "logistic-regression"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def sample_dim(self) -> int:
        return self.dim + 1

    def _check(self, x, batch):
        x = as_vector(x, "x")
        batch = np.asarray(batch, dtype=float)
        if batch.ndim != 2 or batch.shape[1] != self.dim + 1 or x.shape[0] != self.dim:
            raise ValueError(
                f"logistic-regression expects batch rows of width {self.dim + 1} "
                f"(features plus label), got batch {batch.shape}"
            )
        return x, batch[:, :-1], batch[:, -1]

    def loss(self, x, batch) -> float:
        x, feats, y = self._check(x, batch)
        z = feats @ x
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def gradient(self, x, batch) -> np.ndarray:
        x, feats, y = self._check(x, batch)
        z = feats @ x
        p = 1.0 / (1.0 + np.exp(-z))
        return feats.T @ (p - y) / feats.shape[0]


_PROBLEMS = {
    "mean-estimation": MeanEstimation,
    "linear-regression": LinearRegression,
    "logistic-regression": LogisticRegression,
}


def make_problem(kind: str, dim: int):
    try:
        cls = _PROBLEMS[kind]
    except KeyError:
        raise ValueError(
            f"unknown problem kind {kind!r}; expected one of {sorted(_PROBLEMS)}"
        ) from None
    return cls(dim)


def model_dim_for(kind: str, sample_dim: int) -> int:
    """Parameter dimension implied by the width of the stored samples."""
    if kind == "mean-estimation":
        return sample_dim
    if kind in ("linear-regression", "logistic-regression"):
        if sample_dim < 2:
            raise ValueError(f"{kind} needs rows of width at least 2")
        return sample_dim - 1
    raise ValueError(f"unknown problem kind {kind!r}")


def closed_form_optimum(model, source):
    """Population optimum implied by a synthetic source's generator metadata.

    Raises when the model has no closed form (logistic regression) or when
    the source carries no generator metadata (for example, loaded from disk).
    """
    meta = getattr(source, "meta", None) or {}
    if isinstance(model, LogisticRegression):
        raise ValueError("closed-form optimum is unsupported for logistic-regression")
    if isinstance(model, MeanEstimation):
        if "mean_vector" not in meta:
            raise ValueError(
                f"source {source.id!r} carries no generator metadata; "
                "closed-form optimum is unavailable"
            )
        mean = np.asarray(meta["mean_vector"], dtype=float)
        sigma = float(meta.get("noise_scale", 1.0))
        return mean, model.dim * sigma * sigma
    if isinstance(model, LinearRegression):
        if "x_true" not in meta:
            raise ValueError(
                f"source {source.id!r} carries no generator metadata; "
                "closed-form optimum is unavailable"
            )
        x_true = np.asarray(meta["x_true"], dtype=float)
        noise = float(meta.get("noise", 0.0))
        return x_true, noise * noise
    raise ValueError(f"closed-form optimum is unsupported for {type(model).__name__}")
