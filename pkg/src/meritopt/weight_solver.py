"""Simplex-constrained weighting of per-source gradients.

At a training step the trainer holds the iterate x, one stochastic gradient
per source, and a step size. The merit of a weight vector w is the validation
loss after a trial step along the w-weighted gradient sum:

    phi(w) = val_loss( opt_step_trial(x, sum_i w_i g_i, gamma) )

phi is minimized over the probability simplex by stochastic mirror descent
with entropy geometry, i.e. multiplicative weights:

    w <- w * exp(-eta * grad_phi(w)) / sum(...)

The largest exponent is shifted to zero before exponentiation; the shift
cancels in the normalization, so the update is invariant to adding a
constant to the gradient and cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .opt_steps import OptStep
from .validation import as_vector, check_weights

FD_STEP = 1e-5

GRAD_MODES = ("finite-difference", "analytic-frozen")


def uniform_weights(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one source")
    return np.full(n, 1.0 / n)


def smd_step(w, grad, eta: float) -> np.ndarray:
    """One multiplicative-weights update; returns a renormalized simplex point.

    Components of w that are exactly zero stay exactly zero.
    """
    w = check_weights(w)
    grad = as_vector(grad, "grad")
    if grad.shape != w.shape:
        raise ValueError(
            f"gradient length {grad.shape[0]} does not match weights length {w.shape[0]}"
        )
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite MD gradient")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    z = eta * grad
    z = z - z.min()
    y = w * np.exp(-z)
    s = float(y.sum())
    if not np.isfinite(s) or s <= 0.0:
        raise ValueError("degenerate SMD update")
    return y / s


@dataclass
class GradientBundle:
    """Per-source stochastic gradients stacked row-wise, in source order."""

    grads: np.ndarray
    source_ids: tuple
    batch_sizes: tuple

    def __post_init__(self):
        self.grads = np.asarray(self.grads, dtype=float)
        if self.grads.ndim != 2:
            raise ValueError("grads must be a 2-d (n_sources, dim) array")
        if len(self.source_ids) != self.grads.shape[0]:
            raise ValueError("one source id per gradient row is required")

    @property
    def n(self) -> int:
        return self.grads.shape[0]


@dataclass
class PhiProblem:
    """Everything needed to score a candidate weight vector.

    ``opt_step`` is never mutated here; trial steps run on clones so the
    trainer's real optimizer state stays untouched.
    """

    x: np.ndarray
    grads: GradientBundle
    gamma: float
    opt_step: OptStep
    model: object
    val_data: np.ndarray

    def trial_step(self, w_arr: np.ndarray):
        opt = self.opt_step.clone()
        g = w_arr @ self.grads.grads
        x_new = opt.step(self.x, g, self.gamma)
        return x_new, opt


def _phi_raw(problem: PhiProblem, w_arr: np.ndarray, batch: np.ndarray) -> float:
    x_new, _ = problem.trial_step(w_arr)
    return float(problem.model.loss(x_new, batch))


def phi_value(problem: PhiProblem, w, batch: np.ndarray | None = None) -> float:
    """Validation loss after a trial step with weights w (full data by default)."""
    w = check_weights(w, n=problem.grads.n)
    if batch is None:
        batch = problem.val_data
    value = _phi_raw(problem, w, batch)
    if not np.isfinite(value):
        raise ValueError(f"non-finite trial loss at weights {w.tolist()}")
    return value


def phi_gradient(
    problem: PhiProblem,
    w,
    batch: np.ndarray | None = None,
    mode: str = "finite-difference",
    fd_step: float = FD_STEP,
) -> np.ndarray:
    """Gradient of the trial validation loss with respect to the weights.

    finite-difference: central differences per coordinate, then the component
    mean is subtracted. The raw FD estimate lives in the ambient space; only
    its projection onto the simplex tangent is meaningful, and the mirror
    update is invariant to the removed constant.

    analytic-frozen: d(trial x)/d(w_i) with the optimizer's preconditioner
    frozen at its post-step value, contracted against the validation gradient
    at the trial point. Exact for plain SGD.
    """
    w = check_weights(w, n=problem.grads.n)
    if batch is None:
        batch = problem.val_data
    if mode == "finite-difference":
        n = w.shape[0]
        grad = np.empty(n)
        for i in range(n):
            wp = w.copy()
            wm = w.copy()
            wp[i] += fd_step
            wm[i] -= fd_step
            grad[i] = (_phi_raw(problem, wp, batch) - _phi_raw(problem, wm, batch)) / (
                2.0 * fd_step
            )
        grad -= grad.mean()
    elif mode == "analytic-frozen":
        x_new, opt = problem.trial_step(w)
        scale, denom = opt.weight_sensitivity()
        val_grad = problem.model.gradient(x_new, batch)
        grad = -problem.gamma * scale * ((problem.grads.grads / denom) @ val_grad)
    else:
        raise ValueError(f"unknown grad mode {mode!r}; expected one of {GRAD_MODES}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite phi gradient")
    return grad


@dataclass
class MdConfig:
    """Knobs for the inner mirror-descent solve."""

    eta: float = 0.1
    iterations: int = 5
    val_batch_size: int | None = None
    resample_val_per_iter: bool = False
    warm_start: bool = False
    grad_mode: str = "finite-difference"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be a non-negative integer, got {self.iterations}")
        self.iterations = int(self.iterations)
        if self.val_batch_size is not None and int(self.val_batch_size) < 1:
            raise ValueError("val_batch_size must be at least 1 when set")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(
                f"unknown grad mode {self.grad_mode!r}; expected one of {GRAD_MODES}"
            )


def _draw_val_batch(problem: PhiProblem, cfg: MdConfig, rng) -> np.ndarray:
    data = problem.val_data
    if cfg.val_batch_size is None or rng is None or cfg.val_batch_size >= data.shape[0]:
        return data
    rows = rng.choice(data.shape[0], size=int(cfg.val_batch_size), replace=False)
    return data[rows]


def solve_weights(
    problem: PhiProblem,
    cfg: MdConfig,
    init=None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Run cfg.iterations mirror-descent updates and return the final weights.

    With a single source the answer is forced. Validation minibatches come
    from ``rng``: one batch drawn up front, or one per iteration when
    ``resample_val_per_iter`` is set. Without an rng the full validation
    data is used, which makes the solve deterministic.
    """
    n = problem.grads.n
    if n == 1:
        return np.ones(1)
    w = uniform_weights(n) if init is None else check_weights(init, n=n).copy()
    if cfg.iterations == 0:
        return w
    batch = None if cfg.resample_val_per_iter else _draw_val_batch(problem, cfg, rng)
    for _ in range(cfg.iterations):
        if cfg.resample_val_per_iter:
            batch = _draw_val_batch(problem, cfg, rng)
        grad = phi_gradient(problem, w, batch, mode=cfg.grad_mode)
        w = smd_step(w, grad, cfg.eta)
    return w
