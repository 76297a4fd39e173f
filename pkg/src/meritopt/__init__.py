"""Training for a target distribution from heterogeneous data sources.

Every optimizer step, per-source stochastic gradients are combined with
weights solved on the probability simplex by stochastic mirror descent, so
that each source contributes in proportion to how much it helps the
validation objective right now.
"""

from .opt_steps import (
    AdagradNormStep,
    AdamStep,
    OptStep,
    RmspropStep,
    SgdStep,
    make_opt_step,
)
from .problems import (
    LinearRegression,
    LogisticRegression,
    MeanEstimation,
    closed_form_optimum,
    make_problem,
)
from .sources import (
    DataSource,
    SourceRegistry,
    allocate_adaptive_batches,
    drop_source,
    load_source_data,
    make_classification_source,
    make_gaussian_source,
    make_regression_source,
    sample_minibatch,
    save_source_data,
)
from .trainer import (
    MeritOptTrainer,
    TrajectoryRecord,
    apply_drop_heuristic,
    cycle_mode,
    fixed_mode_weights,
)
from .verify import (
    VerificationReport,
    check_neighborhood_convergence,
    check_optimizer_invariants,
    check_variance_bound,
    estimate_delta,
    ideal_weights,
    simplex_grid,
)
from .weight_solver import (
    GradientBundle,
    MdConfig,
    PhiProblem,
    phi_gradient,
    phi_value,
    smd_step,
    solve_weights,
    uniform_weights,
)

__version__ = "0.1.0"

__all__ = [
    "AdagradNormStep",
    "AdamStep",
    "DataSource",
    "GradientBundle",
    "LinearRegression",
    "LogisticRegression",
    "MdConfig",
    "MeanEstimation",
    "MeritOptTrainer",
    "OptStep",
    "PhiProblem",
    "RmspropStep",
    "SgdStep",
    "SourceRegistry",
    "TrajectoryRecord",
    "VerificationReport",
    "allocate_adaptive_batches",
    "apply_drop_heuristic",
    "check_neighborhood_convergence",
    "check_optimizer_invariants",
    "check_variance_bound",
    "closed_form_optimum",
    "cycle_mode",
    "drop_source",
    "estimate_delta",
    "fixed_mode_weights",
    "ideal_weights",
    "load_source_data",
    "make_classification_source",
    "make_gaussian_source",
    "make_opt_step",
    "make_problem",
    "make_regression_source",
    "phi_gradient",
    "phi_value",
    "sample_minibatch",
    "save_source_data",
    "simplex_grid",
    "smd_step",
    "solve_weights",
    "uniform_weights",
]
