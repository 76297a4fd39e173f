"""First-order update rules used by the trainer.

Each rule is a small stateful object: ``step(x, g, gamma)`` returns the new
iterate and advances internal state, ``clone()`` snapshots the rule so trial
steps can be taken without touching the original. ``weight_sensitivity()``
reports the linearization of the last step with respect to the gradient
aggregation weights (preconditioner held fixed), which the weight solver's
analytic mode consumes.
"""

from __future__ import annotations

import copy

import numpy as np

from .validation import as_vector, require_same_dim


class OptStep:
    """Base class; subclasses implement _apply(x, g, gamma)."""

    kind = "base"

    def __init__(self):
        self.step_count = 0

    def step(self, x, g, gamma: float) -> np.ndarray:
        x = as_vector(x, "x")
        g = as_vector(g, "g")
        require_same_dim(x, g, "x", "g")
        self.step_count += 1
        return self._apply(x, g, float(gamma))

    def _apply(self, x, g, gamma):
        raise NotImplementedError

    def clone(self):
        return copy.deepcopy(self)

    def weight_sensitivity(self):
        """(scale, denom) such that d(new x)/d(w_i) = -gamma * scale * g_i / denom.

        Valid immediately after step(); denom is per-coordinate or scalar.
        """
        raise NotImplementedError


class SgdStep(OptStep):
    kind = "sgd"

    def _apply(self, x, g, gamma):
        return x - gamma * g

    def weight_sensitivity(self):
        return 1.0, 1.0


class AdamStep(OptStep):
    """Bias-corrected first/second moment rule."""

    kind = "adam"

    def __init__(self, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8):
        super().__init__()
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = None
        self.v = None

    def _apply(self, x, g, gamma):
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        t = self.step_count
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** t)
        v_hat = self.v / (1.0 - self.beta2 ** t)
        return x - gamma * m_hat / (np.sqrt(v_hat) + self.eps)

    def weight_sensitivity(self):
        t = self.step_count
        if t == 0 or self.v is None:
            raise RuntimeError("weight_sensitivity requires a completed step")
        scale = (1.0 - self.beta1) / (1.0 - self.beta1 ** t)
        v_hat = self.v / (1.0 - self.beta2 ** t)
        return scale, np.sqrt(v_hat) + self.eps


class RmspropStep(OptStep):
    """Per-coordinate running second moment.

    The accumulator holds the decayed mean of g^2 only; eps joins at use time,
    never inside the recursion, so it cannot compound across steps.
    """

    kind = "rmsprop"

    def __init__(self, beta2: float = 0.98, eps: float = 1e-8, b0: float = 0.0):
        super().__init__()
        if not 0.0 <= beta2 < 1.0:
            raise ValueError("beta2 must lie in [0, 1)")
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.b0 = float(b0)
        self.sq_avg = None

    def _apply(self, x, g, gamma):
        if self.sq_avg is None:
            self.sq_avg = np.full_like(g, self.b0 * self.b0)
        self.sq_avg = self.beta2 * self.sq_avg + (1.0 - self.beta2) * g * g
        denom = np.sqrt(self.sq_avg) + self.eps
        return x - gamma * g / denom

    def divisor(self) -> np.ndarray:
        if self.sq_avg is None:
            raise RuntimeError("divisor requires a completed step")
        return np.sqrt(self.sq_avg) + self.eps

    def weight_sensitivity(self):
        return 1.0, self.divisor()


class AdagradNormStep(OptStep):
    """Single global step-size damp b_t = sqrt(b0^2 + sum of ||g||^2 so far).

    The accumulator is kept in squared form; on a stream of unit-norm
    gradients it then advances by exactly 1.0 per step, so b_t stays exact in
    floating point for any realistic horizon.
    """

    kind = "adagrad-norm"

    def __init__(self, b0: float = 1.0):
        super().__init__()
        if not b0 > 0:
            raise ValueError("b0 must be positive")
        self.b_sq = float(b0) * float(b0)

    @property
    def b(self) -> float:
        return float(np.sqrt(self.b_sq))

    def _apply(self, x, g, gamma):
        # accumulator is advanced before it divides the step
        self.b_sq = self.b_sq + float(np.dot(g, g))
        return x - (gamma / self.b) * g

    def weight_sensitivity(self):
        return 1.0, self.b


_KINDS = {
    "sgd": SgdStep,
    "adam": AdamStep,
    "rmsprop": RmspropStep,
    "adagrad-norm": AdagradNormStep,
}


def make_opt_step(kind: str, **hyper) -> OptStep:
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown optimizer kind {kind!r}; expected one of {sorted(_KINDS)}"
        ) from None
    return cls(**hyper)
