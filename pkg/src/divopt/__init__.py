"""divopt: sampling-based black-box global optimization with per-iteration
divergence-decrease diagnostics.

Four proposal-update rules (natural-gradient, partial weighted ML, mixture
ML, heavy-tail Student ML) share a quantile/rank-weight substrate, and every
run can verify its own improvement certificates, either by Monte Carlo with
declared standard errors or exactly on enumerable discrete domains.
"""

from .core import (
    DiscreteModel,
    Objective,
    QuantilePair,
    SampleBatch,
    WeightFn,
    empirical_quantile,
    exact_quantile_pair,
    preference,
    rank_weights,
    weighted_expectation,
)
from .proposals import (
    BernoulliParams,
    GaussianParams,
    MixtureParams,
    MomentParams,
    StudentParams,
    gamma_factor,
    gaussian_kl,
    log_density,
    moment_embed,
    moment_unembed,
    params_from_dict,
    params_to_dict,
    responsibilities,
    sample,
)
from .algorithms import (
    StepConfig,
    Trajectory,
    igo_ml_step,
    igo_ng_step,
    mixture_ml_step,
    mixture_ml_step_latent,
    optimize,
    student_ml_step,
)
from .diagnostics import (
    DiagnosticsConfig,
    ExactReport,
    IterationReport,
    check_igo_delta_formula,
    check_improvement_bound,
    estimate_J,
    estimate_target_kl,
    estimate_target_renyi,
    exact_report,
    quantile_bound_check,
)
from .harness import (
    ExperimentConfig,
    RunLog,
    make_objective,
    run_exact_oracle,
    run_experiment,
    summarize,
)
from .rng import substream

__version__ = "0.1.0"
