"""The four proposal-update rules in finite-sample form, plus the outer
optimization loop.

All expectations under the reweighted target are replaced by self-normalized
rank-weighted sample means.  The two exponential-family rules operate in
moment coordinates, where both updates are convex combinations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Objective, SampleBatch, WeightFn, rank_weights, weighted_mean
from .errors import (
    ConfigurationError,
    DegenerateBatchError,
    FactorizationError,
    StepFailureError,
)
from .proposals import (
    BernoulliParams,
    GaussianParams,
    MixtureParams,
    ProposalParams,
    StudentParams,
    degenerate_width_floor,
    gamma_factor,
    moment_embed,
    moment_unembed,
    responsibilities,
    sample,
)
from .rng import substream

__all__ = [
    "StepConfig",
    "Trajectory",
    "draw_batch",
    "igo_ng_step",
    "igo_ml_step",
    "proposal_width_collapsed",
    "mixture_ml_step",
    "mixture_ml_step_latent",
    "student_ml_step",
    "optimize",
]

RULES = ("igo_ng", "igo_ml", "mixture_ml", "student_ml")

LAMBDA_MIN = 1e-6


@dataclass(frozen=True)
class StepConfig:
    rule: str
    weight_fn: WeightFn
    batch_size: int
    step_size: float = 1.0
    sigma_variant: str = "gamma_normalized"  # student_ml only
    tie_mode: str = "strict"

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigurationError(f"unknown rule {self.rule!r}")
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be >= 2")
        if self.tie_mode not in ("strict", "tie_averaged"):
            raise ConfigurationError(f"unknown tie mode {self.tie_mode!r}")
        if self.sigma_variant not in ("gamma_normalized", "weight_normalized"):
            raise ConfigurationError(f"unknown sigma variant {self.sigma_variant!r}")
        zw = self.weight_fn.mass
        tau = self.step_size
        if self.rule == "igo_ml" and not (0.0 < tau <= 1.0):
            raise ConfigurationError("igo_ml needs step size in (0, 1]")
        if self.rule == "igo_ng" and not (0.0 < tau * zw <= 1.0):
            raise ConfigurationError("igo_ng needs step_size * Z_w in (0, 1]")


@dataclass
class Trajectory:
    params_history: list
    reports: list
    config: StepConfig
    run_seed: int
    failure: Optional[str] = None
    stopped: Optional[str] = None


def _matrix_width_collapsed(cov: np.ndarray, center: np.ndarray) -> bool:
    """True when the sampling width is within ~10 decimal digits of the
    floating-point resolution around the center, where further likelihood
    fits compare rounding noise rather than geometry."""
    scale = float(np.max(np.abs(center)))
    limit = (1e5 * np.finfo(float).eps * scale) ** 2
    return limit > 0.0 and float(np.trace(cov)) / cov.shape[0] < limit


def proposal_width_collapsed(params) -> bool:
    """Convergence test: has any live scale matrix collapsed to the
    floating-point grid around its location?"""
    if isinstance(params, GaussianParams):
        return _matrix_width_collapsed(params.cov, params.mean)
    if isinstance(params, StudentParams):
        return _matrix_width_collapsed(params.scale, params.location)
    if isinstance(params, MixtureParams):
        return any(params.weights[j] > LAMBDA_MIN
                   and _matrix_width_collapsed(c.cov, c.mean)
                   for j, c in enumerate(params.components))
    return False


def draw_batch(params: ProposalParams, obj: Objective, w: WeightFn, n: int,
               stream: np.random.Generator, tie_mode: str = "strict") -> SampleBatch:
    """Sample n points, evaluate f, and attach rank-based weights."""
    points = sample(params, stream, n)
    fvals = obj(points)
    rw = rank_weights(fvals, w, tie_mode=tie_mode)
    return SampleBatch(points=points, f_values=fvals, rank_weights=rw,
                       origin_params=params, tie_mode=tie_mode)


def _moment_estimate(params, batch: SampleBatch):
    """Self-normalized estimate of the target's moment coordinates."""
    pts = batch.points
    w = batch.rank_weights
    first = weighted_mean(pts, w)
    if isinstance(params, GaussianParams):
        second = weighted_mean(pts[:, :, None] * pts[:, None, :], w)
        return first, second
    return first, None


def _blend_and_unembed(params, batch: SampleBatch, alpha: float):
    """eta_{k+1} = (1 - alpha) eta_k + alpha eta_hat, mapped back to natural
    parameters."""
    eta = moment_embed(params)
    first_hat, second_hat = _moment_estimate(params, batch)
    first = (1.0 - alpha) * eta.first + alpha * first_hat
    if eta.second is None:
        return moment_unembed(type(eta)(first=first, family=eta.family))
    second = (1.0 - alpha) * eta.second + alpha * second_hat
    try:
        return moment_unembed(type(eta)(first=first, second=second, family=eta.family))
    except FactorizationError as exc:
        raise StepFailureError(f"updated covariance not positive definite: {exc}") from exc


def igo_ng_step(params, batch: SampleBatch, tau: float, z_w: float):
    """Natural-gradient step: convex combination with coefficient tau * Z_w in
    moment coordinates."""
    alpha = tau * z_w
    if not (0.0 <= alpha <= 1.0):
        raise ConfigurationError("igo_ng requires tau * Z_w in [0, 1]")
    return _blend_and_unembed(params, batch, alpha)


def igo_ml_step(params, batch: SampleBatch, tau: float, z_w: float):
    """Partial weighted-ML step: coefficient tau*Z_w / ((1-tau) + tau*Z_w)."""
    if not (0.0 <= tau <= 1.0):
        raise ConfigurationError("igo_ml requires tau in [0, 1]")
    alpha = tau * z_w / ((1.0 - tau) + tau * z_w)
    return _blend_and_unembed(params, batch, alpha)


def _mixture_m_step(mix: MixtureParams, batch: SampleBatch, resp: np.ndarray,
                    lambda_min: float) -> MixtureParams:
    """Shared M-step for responsibility- and indicator-based updates."""
    w = batch.rank_weights
    total = float(np.sum(w))
    if total <= 0.0:
        raise DegenerateBatchError("all rank weights are zero")
    pts = batch.points
    lam_hat = (w @ resp) / total
    new_weights = np.empty_like(lam_hat)
    new_comps = []
    n_frozen = 0
    for j, comp in enumerate(mix.components):
        if lam_hat[j] < lambda_min:
            # Effective mass too small for a well-posed M-step: keep the
            # component, floor its weight.
            new_weights[j] = lambda_min
            new_comps.append(comp)
            n_frozen += 1
            continue
        new_weights[j] = lam_hat[j]
        wj = w * resp[:, j]
        mu = weighted_mean(pts, wj)
        diff = pts - mu
        cov = weighted_mean(diff[:, :, None] * diff[:, None, :], wj)
        try:
            new_comps.append(GaussianParams(mean=mu, cov=degenerate_width_floor(cov, mu)))
        except FactorizationError as exc:
            raise StepFailureError(f"mixture component {j} update failed: {exc}") from exc
    if n_frozen == mix.n_components:
        raise StepFailureError("every mixture component is frozen")
    return MixtureParams(weights=new_weights, components=tuple(new_comps))


def mixture_ml_step(mix: MixtureParams, batch: SampleBatch,
                    lambda_min: float = LAMBDA_MIN) -> MixtureParams:
    """Rao-Blackwellized EM-style update of mixture weights and components."""
    resp = responsibilities(mix, batch.points)
    return _mixture_m_step(mix, batch, resp, lambda_min)


def mixture_ml_step_latent(mix: MixtureParams, batch: SampleBatch, indicators: np.ndarray,
                           lambda_min: float = LAMBDA_MIN) -> MixtureParams:
    """Comparison mode: same update driven by one-hot component indicators
    instead of responsibilities."""
    xi = np.asarray(indicators, dtype=float)
    if xi.shape != (batch.size, mix.n_components):
        raise ConfigurationError("indicators must have shape (N, J)")
    return _mixture_m_step(mix, batch, xi, lambda_min)


def student_ml_step(st: StudentParams, batch: SampleBatch,
                    variant: str = "gamma_normalized") -> StudentParams:
    """Heavy-tail location/scale update with fixed degrees of freedom.

    ``gamma_normalized`` divides the centered second moment by the mean latent
    precision; ``weight_normalized`` keeps the undivided maximizer.  Both move the
    location to the gamma-reweighted mean.
    """
    w = batch.rank_weights
    total = float(np.sum(w))
    if total <= 0.0:
        raise DegenerateBatchError("all rank weights are zero")
    pts = batch.points
    gam = gamma_factor(st, pts)
    wg = w * gam
    mu = weighted_mean(pts, wg)
    diff = pts - mu
    outer = diff[:, :, None] * diff[:, None, :]
    if variant == "gamma_normalized":
        scale = weighted_mean(outer, wg)
    elif variant == "weight_normalized":
        scale = np.tensordot(wg, outer, axes=(0, 0)) / total
    else:
        raise ConfigurationError(f"unknown sigma variant {variant!r}")
    try:
        return StudentParams(location=mu, scale=degenerate_width_floor(scale, mu), dof=st.dof)
    except FactorizationError as exc:
        raise StepFailureError(f"student scale update failed: {exc}") from exc


def apply_step(params, batch: SampleBatch, cfg: StepConfig):
    """Dispatch one update according to the configured rule."""
    zw = cfg.weight_fn.mass
    if cfg.rule == "igo_ng":
        return igo_ng_step(params, batch, cfg.step_size, zw)
    if cfg.rule == "igo_ml":
        return igo_ml_step(params, batch, cfg.step_size, zw)
    if cfg.rule == "mixture_ml":
        return mixture_ml_step(params, batch)
    return student_ml_step(params, batch, variant=cfg.sigma_variant)


def optimize(initial: ProposalParams, obj: Objective, cfg: StepConfig, iterations: int,
             seed: int, diag: "DiagnosticsConfig | None" = None) -> Trajectory:
    """Run the outer loop: sample, weight, step, diagnose, repeat.

    Deterministic for fixed (cfg, seed).  Step failures abort the loop and
    leave a partial trajectory with the failure message recorded.
    """
    from .diagnostics import DiagnosticsConfig, iteration_report  # no cycle: diagnostics is lower

    traj = Trajectory(params_history=[initial], reports=[], config=cfg, run_seed=seed)
    params = initial
    for k in range(iterations):
        if proposal_width_collapsed(params):
            traj.stopped = (f"iteration {k}: proposal width reached "
                            "floating-point resolution")
            break
        try:
            batch = draw_batch(params, obj, cfg.weight_fn, cfg.batch_size,
                               substream(seed, k, "optimize"), tie_mode=cfg.tie_mode)
            nxt = apply_step(params, batch, cfg)
        except (StepFailureError, DegenerateBatchError) as exc:
            traj.failure = f"iteration {k}: {exc}"
            break
        if diag is not None and diag.enabled:
            traj.reports.append(iteration_report(params, nxt, obj, cfg, k, seed, diag))
        params = nxt
        traj.params_history.append(params)
    return traj
