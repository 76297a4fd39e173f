"""Training loop that reweights per-source gradients every step.

The estimator follows the familiar fit() shape: hyperparameters in the
constructor, data in fit, trailing-underscore attributes afterwards. The
weighting policies and heuristics it composes (fixed-mode weights, drop,
cycle) are plain module functions so they can be exercised directly.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .opt_steps import make_opt_step
from .problems import make_problem, model_dim_for
from .sources import (
    ROLE_AUXILIARY,
    ROLE_TARGET_TRAIN,
    ROLE_TARGET_VALIDATION,
    SourceRegistry,
    allocate_adaptive_batches,
    epoch_length,
    sample_minibatch,
)
from .validation import check_weights, substream
from .weight_solver import (
    GradientBundle,
    MdConfig,
    PhiProblem,
    solve_weights,
    uniform_weights,
)

MODES = ("meritopt", "uniform-weights", "target-only", "no-target")
HEURISTICS = ("none", "drop", "cycle", "two-phase")

# substream tags; one namespace per consumer so draws never interleave
_TAG_TRAIN_BATCH = 1
_TAG_VAL_BATCH = 2


@dataclass
class TrajectoryRecord:
    step: int
    mode: str
    weights: np.ndarray
    train_losses: np.ndarray
    val_loss: float
    grad_norm: float
    active: np.ndarray
    wall_time: float


def fixed_mode_weights(mode: str, roles) -> np.ndarray:
    """Weights for the non-adaptive modes, given the roles of the active sources."""
    roles = list(roles)
    n = len(roles)
    if n == 0:
        raise ValueError("need at least one active source")
    if mode == "uniform-weights":
        return uniform_weights(n)
    if mode == "target-only":
        mask = np.array([r == ROLE_TARGET_TRAIN for r in roles], dtype=float)
    elif mode == "no-target":
        mask = np.array([r == ROLE_AUXILIARY for r in roles], dtype=float)
    else:
        raise ValueError(f"no fixed weights for mode {mode!r}")
    total = mask.sum()
    if total == 0:
        raise ValueError(f"mode {mode!r} leaves no source with positive weight")
    return mask / total


def apply_drop_heuristic(weights, threshold: float, protected=None):
    """Drop below-threshold sources and renormalize the survivors.

    Returns (kept_mask, new_weights) where new_weights covers the kept
    sources in order. Protected entries are never dropped. Raises if the
    rule would leave nothing.
    """
    weights = check_weights(weights)
    n = weights.shape[0]
    if protected is None:
        protected = np.zeros(n, dtype=bool)
    else:
        protected = np.asarray(protected, dtype=bool)
        if protected.shape != (n,):
            raise ValueError("protected mask must match the weights length")
    droppable = (weights < float(threshold)) & ~protected
    kept = ~droppable
    if not kept.any():
        raise ValueError("drop heuristic would remove every active source")
    if not droppable.any():
        return kept, weights.copy()
    survivors = weights[kept]
    total = survivors.sum()
    if total <= 0.0:
        return kept, uniform_weights(int(kept.sum()))
    return kept, survivors / total


def cycle_mode(epoch_index: int, period: int = 2, meritopt_epochs: int = 1) -> str:
    """Which policy an epoch runs under when cycling: 'meritopt' or 'top1'."""
    if period < 2 or not 1 <= meritopt_epochs < period:
        raise ValueError(
            "cycle needs period >= 2 and 1 <= meritopt_epochs < period, "
            f"got period={period}, meritopt_epochs={meritopt_epochs}"
        )
    if epoch_index < 0:
        raise ValueError("epoch_index must be non-negative")
    return "meritopt" if epoch_index % period < meritopt_epochs else "top1"


def cosine_step_size(t: int, steps: int, gamma_max: float, gamma_min: float) -> float:
    if steps <= 1:
        return gamma_max
    frac = (t - 1) / (steps - 1)
    return gamma_min + 0.5 * (gamma_max - gamma_min) * (1.0 + math.cos(math.pi * frac))


class MeritOptTrainer(BaseEstimator):
    """Gradient-weighted training across heterogeneous sources.

    Parameters
    ----------
    problem : str or loss model
        "mean-estimation", "linear-regression", "logistic-regression", or an
        object with loss/gradient methods.
    steps : int
        Number of optimizer steps.
    step_size : float
        Peak step size gamma.
    schedule : str
        "constant" or "cosine". Cosine decays to step_size_min, which
        defaults to step_size / 3.
    optimizer : str
        "sgd", "adam", "rmsprop", or "adagrad-norm". beta1/beta2/eps feed
        adam and rmsprop; rmsprop_b0 and adagrad_b0 seed their accumulators.
    mode : str
        "meritopt" solves for weights each step; "uniform-weights",
        "target-only", and "no-target" are the fixed baselines.
    batch_mode : str
        "fraction" takes ceil(batch_fraction * size) per source, "fixed"
        uses batch_sizes (int or per-source list), "adaptive" splits
        batch_total across sources proportionally to size within
        [batch_min, batch_max].
    md_* : inner-solver knobs
        md_eta and md_iterations drive the mirror-descent solve;
        md_val_batch_size subsamples validation data per solve (None uses
        all of it); md_resample redraws it every iteration; md_warm_start
        starts from the previous step's weights; md_grad_mode is
        "finite-difference" or "analytic-frozen".
    heuristic : str
        "none", "drop" (drop sources whose weight falls below
        drop_threshold at epoch ends), "cycle" (alternate meritopt epochs
        with epochs that train only the current top-weight source), or
        "two-phase" (uniform warm-up for phase1_steps steps or until
        patience evaluations pass without validation improvement, then
        meritopt).
    x0 : None, scalar, or array
        Initial iterate; None means zeros.
    eval_every : int
        Trajectory recording stride (the last step is always recorded).
    seed : int
        Root seed for every stream of randomness in the run.
    parallel : bool
        Evaluate per-source gradients in a thread pool. Results are
        identical to the sequential path.

    Attributes
    ----------
    x_ : final iterate
    weights_ : final per-source weights (zeros for dropped sources)
    trajectory_ : list of TrajectoryRecord
    source_ids_ : ids of the training sources, in order
    active_ : boolean mask of sources still active at the end
    """

    def __init__(
        self,
        problem="mean-estimation",
        steps=100,
        step_size=0.1,
        schedule="constant",
        step_size_min=None,
        optimizer="sgd",
        beta1=0.9,
        beta2=0.98,
        eps=1e-8,
        rmsprop_b0=0.0,
        adagrad_b0=1.0,
        mode="meritopt",
        batch_mode="fraction",
        batch_fraction=0.1,
        batch_sizes=None,
        batch_total=512,
        batch_min=32,
        batch_max=128,
        md_eta=0.1,
        md_iterations=5,
        md_val_batch_size=None,
        md_resample=False,
        md_warm_start=False,
        md_grad_mode="finite-difference",
        heuristic="none",
        drop_threshold=0.15,
        allow_target_drop=False,
        epoch_len=None,
        cycle_period=2,
        cycle_meritopt_epochs=1,
        phase1_steps=0,
        patience=10,
        x0=None,
        eval_every=1,
        seed=0,
        parallel=False,
    ):
        self.problem = problem
        self.steps = steps
        self.step_size = step_size
        self.schedule = schedule
        self.step_size_min = step_size_min
        self.optimizer = optimizer
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.rmsprop_b0 = rmsprop_b0
        self.adagrad_b0 = adagrad_b0
        self.mode = mode
        self.batch_mode = batch_mode
        self.batch_fraction = batch_fraction
        self.batch_sizes = batch_sizes
        self.batch_total = batch_total
        self.batch_min = batch_min
        self.batch_max = batch_max
        self.md_eta = md_eta
        self.md_iterations = md_iterations
        self.md_val_batch_size = md_val_batch_size
        self.md_resample = md_resample
        self.md_warm_start = md_warm_start
        self.md_grad_mode = md_grad_mode
        self.heuristic = heuristic
        self.drop_threshold = drop_threshold
        self.allow_target_drop = allow_target_drop
        self.epoch_len = epoch_len
        self.cycle_period = cycle_period
        self.cycle_meritopt_epochs = cycle_meritopt_epochs
        self.phase1_steps = phase1_steps
        self.patience = patience
        self.x0 = x0
        self.eval_every = eval_every
        self.seed = seed
        self.parallel = parallel

    # -- construction helpers -------------------------------------------------

    def _build_model(self, sample_dim: int):
        if isinstance(self.problem, str):
            dim = model_dim_for(self.problem, sample_dim)
            return make_problem(self.problem, dim)
        return self.problem

    def _build_opt(self):
        kind = self.optimizer
        if kind == "sgd":
            return make_opt_step("sgd")
        if kind == "adam":
            return make_opt_step("adam", beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        if kind == "rmsprop":
            return make_opt_step("rmsprop", beta2=self.beta2, eps=self.eps, b0=self.rmsprop_b0)
        if kind == "adagrad-norm":
            return make_opt_step("adagrad-norm", b0=self.adagrad_b0)
        raise ValueError(f"unknown optimizer {kind!r}")

    def _init_x(self, dim: int) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(dim)
        if np.isscalar(self.x0):
            return np.full(dim, float(self.x0))
        x = np.asarray(self.x0, dtype=float)
        if x.shape != (dim,):
            raise ValueError(f"x0 must have shape ({dim},), got {x.shape}")
        return x.copy()

    def _step_size_at(self, t: int) -> float:
        gamma = float(self.step_size)
        if self.schedule == "constant":
            return gamma
        if self.schedule == "cosine":
            gmin = gamma / 3.0 if self.step_size_min is None else float(self.step_size_min)
            return cosine_step_size(t, int(self.steps), gamma, gmin)
        raise ValueError(f"unknown schedule {self.schedule!r}")

    def _batch_sizes_for(self, registry: SourceRegistry, active: list[int]) -> np.ndarray:
        sizes = np.array([registry.sources[i].size for i in active])
        if self.batch_mode == "fraction":
            frac = float(self.batch_fraction)
            if not 0.0 < frac <= 1.0:
                raise ValueError(f"batch_fraction must lie in (0, 1], got {frac}")
            return np.maximum(1, np.ceil(frac * sizes).astype(int))
        if self.batch_mode == "fixed":
            if self.batch_sizes is None:
                raise ValueError("batch_mode 'fixed' needs batch_sizes")
            if np.isscalar(self.batch_sizes):
                return np.full(len(active), int(self.batch_sizes))
            per_source = np.asarray(self.batch_sizes, dtype=int)
            if per_source.shape[0] != len(registry):
                raise ValueError(
                    f"batch_sizes lists {per_source.shape[0]} entries for "
                    f"{len(registry)} sources"
                )
            return per_source[active]
        if self.batch_mode == "adaptive":
            return allocate_adaptive_batches(
                sizes, int(self.batch_total), int(self.batch_min), int(self.batch_max)
            )
        raise ValueError(f"unknown batch_mode {self.batch_mode!r}")

    # -- fitting ---------------------------------------------------------------

    def fit(self, sources, y=None):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.heuristic not in HEURISTICS:
            raise ValueError(
                f"unknown heuristic {self.heuristic!r}; expected one of {HEURISTICS}"
            )
        steps = int(self.steps)
        if steps < 1:
            raise ValueError("steps must be at least 1")
        eval_every = int(self.eval_every)
        if eval_every < 1:
            raise ValueError("eval_every must be at least 1")

        sources = list(sources)
        val_sources = [s for s in sources if s.role == ROLE_TARGET_VALIDATION]
        train_sources = [s for s in sources if s.role != ROLE_TARGET_VALIDATION]
        if len(val_sources) != 1:
            raise ValueError(
                f"exactly one source must have role {ROLE_TARGET_VALIDATION!r}, "
                f"got {len(val_sources)}"
            )
        if not train_sources:
            raise ValueError("need at least one training source")
        val = val_sources[0]
        widths = {s.sample_dim for s in sources}
        if len(widths) != 1:
            raise ValueError(f"sources disagree on sample width: {sorted(widths)}")

        model = self._build_model(val.sample_dim)
        if model.sample_dim() != val.sample_dim:
            raise ValueError(
                f"model expects sample width {model.sample_dim()}, "
                f"sources provide {val.sample_dim}"
            )
        dim = int(model.dim)
        x = self._init_x(dim)
        opt = self._build_opt()
        registry = SourceRegistry(train_sources)
        n = len(registry)
        roles = [s.role for s in train_sources]
        md_cfg = MdConfig(
            eta=float(self.md_eta),
            iterations=int(self.md_iterations),
            val_batch_size=self.md_val_batch_size,
            resample_val_per_iter=bool(self.md_resample),
            warm_start=bool(self.md_warm_start),
            grad_mode=self.md_grad_mode,
        )

        # epoch boundaries are pinned by the initial plan so they never wobble
        first_plan = self._batch_sizes_for(registry, list(range(n)))
        if self.epoch_len is not None:
            epoch_len = int(self.epoch_len)
            if epoch_len < 1:
                raise ValueError("epoch_len must be at least 1")
        else:
            anchor = next(
                (i for i, r in enumerate(roles) if r == ROLE_TARGET_TRAIN), 0
            )
            epoch_len = epoch_length(registry.sources[anchor].size, int(first_plan[anchor]))

        seed = int(self.seed)
        pool = ThreadPoolExecutor(max_workers=min(n, 8)) if self.parallel else None
        records: list[TrajectoryRecord] = []
        w_full = np.zeros(n)
        last_md_full = None
        in_phase1 = self.heuristic == "two-phase" and int(self.phase1_steps) > 0
        best_val = math.inf
        stale_evals = 0
        started = time.monotonic()

        try:
            for t in range(1, steps + 1):
                if in_phase1 and t > int(self.phase1_steps):
                    in_phase1 = False
                gamma = self._step_size_at(t)
                active = registry.active_indices()
                plan = self._batch_sizes_for(registry, active)

                batches = [
                    sample_minibatch(
                        registry.sources[i],
                        int(b),
                        substream(seed, _TAG_TRAIN_BATCH, i, t),
                    )
                    for i, b in zip(active, plan)
                ]
                if pool is not None:
                    grads = list(pool.map(lambda b: model.gradient(x, b), batches))
                else:
                    grads = [model.gradient(x, b) for b in batches]
                grads = np.asarray(grads)

                label = self._step_label(t, in_phase1, epoch_len)
                if label == "meritopt":
                    bundle = GradientBundle(
                        grads,
                        tuple(registry.sources[i].id for i in active),
                        tuple(int(b) for b in plan),
                    )
                    phi = PhiProblem(x, bundle, gamma, opt, model, val.data)
                    init = None
                    if md_cfg.warm_start and last_md_full is not None:
                        prev = last_md_full[active]
                        total = prev.sum()
                        init = prev / total if total > 0 else None
                    w_active = solve_weights(
                        phi, md_cfg, init=init, rng=substream(seed, _TAG_VAL_BATCH, t)
                    )
                    last_md_full = np.zeros(n)
                    last_md_full[active] = w_active
                elif label == "top1":
                    w_active = self._top1_weights(active, roles, last_md_full)
                else:
                    w_active = fixed_mode_weights(label, [roles[i] for i in active])

                g = w_active @ grads
                x = opt.step(x, g, gamma)
                if not np.all(np.isfinite(x)):
                    raise RuntimeError(f"non-finite iterate at step {t}")
                w_full = np.zeros(n)
                w_full[active] = w_active

                if t % eval_every == 0 or t == steps:
                    val_loss = float(model.loss(x, val.data))
                    grad_norm = float(np.linalg.norm(model.gradient(x, val.data)))
                    train_losses = np.array(
                        [model.loss(x, s.data) for s in registry.sources]
                    )
                    if not np.isfinite(val_loss) or not np.all(np.isfinite(train_losses)):
                        raise RuntimeError(f"non-finite loss at step {t}")
                    records.append(
                        TrajectoryRecord(
                            step=t,
                            mode=label,
                            weights=w_full.copy(),
                            train_losses=train_losses,
                            val_loss=val_loss,
                            grad_norm=grad_norm,
                            active=registry.active_mask(),
                            wall_time=time.monotonic() - started,
                        )
                    )
                    if in_phase1:
                        if val_loss < best_val:
                            best_val = val_loss
                            stale_evals = 0
                        else:
                            stale_evals += 1
                            if stale_evals >= int(self.patience):
                                in_phase1 = False

                if (
                    self.heuristic == "drop"
                    and t % epoch_len == 0
                    and t < steps
                    and len(active) > 1
                ):
                    protected = np.array(
                        [
                            roles[i] != ROLE_AUXILIARY and not self.allow_target_drop
                            for i in active
                        ]
                    )
                    kept, new_w = apply_drop_heuristic(
                        w_active, float(self.drop_threshold), protected
                    )
                    for pos, keep in enumerate(kept):
                        if not keep:
                            registry.drop(
                                registry.sources[active[pos]].id,
                                allow_target_drop=self.allow_target_drop,
                            )
                    w_full = np.zeros(n)
                    w_full[[active[p] for p in np.flatnonzero(kept)]] = new_w
                    if last_md_full is not None:
                        last_md_full = last_md_full * registry.active_mask()
        finally:
            if pool is not None:
                pool.shutdown()

        self.model_ = model
        self.x_ = x
        self.weights_ = w_full
        self.trajectory_ = records
        self.source_ids_ = [s.id for s in registry.sources]
        self.active_ = registry.active_mask()
        self.val_loss_ = records[-1].val_loss if records else None
        return self

    def _step_label(self, t: int, in_phase1: bool, epoch_len: int) -> str:
        if self.heuristic == "two-phase":
            if in_phase1:
                return "uniform-weights"
            base = self.mode
        elif self.heuristic == "cycle":
            epoch = (t - 1) // epoch_len
            policy = cycle_mode(
                epoch, int(self.cycle_period), int(self.cycle_meritopt_epochs)
            )
            if policy == "top1":
                return "top1"
            base = self.mode
        else:
            base = self.mode
        if (
            base == "meritopt"
            and int(self.md_iterations) == 0
            and not self.md_warm_start
        ):
            # a zero-iteration solve from scratch is literally uniform weighting
            return "uniform-weights"
        return base

    def _top1_weights(self, active, roles, last_md_full) -> np.ndarray:
        w = np.zeros(len(active))
        if last_md_full is not None and last_md_full[active].sum() > 0:
            pick = int(np.argmax(last_md_full[active]))
        else:
            # no solved weights yet; favor the target source, else the first
            pick = next(
                (k for k, i in enumerate(active) if roles[i] == ROLE_TARGET_TRAIN), 0
            )
        w[pick] = 1.0
        return w

    # -- post-fit conveniences -------------------------------------------------

    def predict(self, X=None):
        """Return the final iterate; X is accepted for interface compatibility."""
        self._check_fitted()
        return self.x_.copy()

    def score(self, sources=None, y=None):
        """Negative validation loss of the fitted iterate (higher is better)."""
        self._check_fitted()
        if sources is None:
            return -float(self.val_loss_)
        val = [s for s in sources if s.role == ROLE_TARGET_VALIDATION]
        if not val:
            raise ValueError("score needs a target-validation source")
        return -float(self.model_.loss(self.x_, val[0].data))

    def _check_fitted(self):
        if not hasattr(self, "x_"):
            raise RuntimeError("this trainer is not fitted yet; call fit first")
