"""Estimators and pass/fail checkers for every per-iteration improvement
quantity: the reformulated objective J, target divergences, the quantified
decrease Delta, and quantile bounds.

Monte Carlo estimates always come with a standard error; the checking
discipline everywhere is "inequality holds within three propagated standard
errors".  Exact counterparts by enumeration live in :func:`exact_report`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    DiscreteModel,
    Objective,
    QuantilePair,
    SampleBatch,
    WeightFn,
    empirical_quantile,
    empirical_quantile_stderr,
    preference,
)
from .errors import DomainError
from .proposals import ProposalParams, family_kl, log_density, sample
from .rng import substream

__all__ = [
    "DiagnosticsConfig",
    "IterationReport",
    "ExactReport",
    "estimate_J",
    "estimate_J_against_reference",
    "estimate_target_kl",
    "estimate_target_renyi",
    "check_improvement_bound",
    "quantile_bound_check",
    "check_igo_delta_formula",
    "exact_report",
    "iteration_report",
]


@dataclass(frozen=True)
class DiagnosticsConfig:
    enabled: bool = True
    batch_size: Optional[int] = None  # None: reuse the optimization batch size
    renyi_alphas: tuple = ()
    compute_quantiles: bool = True
    quantile_q: Optional[float] = None  # None: use Z_w
    igo_delta_check: bool = True


@dataclass
class IterationReport:
    iteration: int
    j_hat: float
    j_stderr: float
    kl_target_prev: float
    kl_prev_stderr: float
    kl_target_next: float
    kl_next_stderr: float
    delta_hat: float
    delta_stderr: float
    q_hat_prev: Optional[float] = None
    q_hat_next: Optional[float] = None
    q_prev_stderr: Optional[float] = None
    q_next_stderr: Optional[float] = None
    renyi_target: dict = field(default_factory=dict)
    infinite_kl: bool = False
    bound_checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "iteration": self.iteration,
            "j_hat": self.j_hat,
            "j_stderr": self.j_stderr,
            "kl_target_prev": self.kl_target_prev,
            "kl_prev_stderr": self.kl_prev_stderr,
            "kl_target_next": self.kl_target_next,
            "kl_next_stderr": self.kl_next_stderr,
            "delta_hat": self.delta_hat,
            "delta_stderr": self.delta_stderr,
            "infinite_kl": self.infinite_kl,
            "bound_checks": self.bound_checks,
        }
        if self.q_hat_prev is not None:
            out.update(q_hat_prev=self.q_hat_prev, q_hat_next=self.q_hat_next,
                       q_prev_stderr=self.q_prev_stderr, q_next_stderr=self.q_next_stderr)
        if self.renyi_target:
            out["renyi_target"] = {str(a): [e, s] for a, (e, s) in self.renyi_target.items()}
        return out


@dataclass
class ExactReport:
    """Every target/divergence quantity computed by full enumeration."""

    j_prev: float
    j_next: float
    kl_target_prev: float
    kl_target_next: float
    renyi_target_prev: dict
    q_prev: float
    q_next: float
    delta: float
    w_values: np.ndarray
    target_probs: np.ndarray


# ---------------------------------------------------------------------------
# self-normalized helpers

def _self_normalized(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Estimate and standard error of a self-normalized weighted mean."""
    total = float(np.sum(weights))
    est = float(np.sum(weights * values) / total)
    se = float(np.sqrt(np.sum(weights ** 2 * (values - est) ** 2)) / total)
    return est, se


def _fold_stderr(batch: SampleBatch, w: WeightFn, estimator, k: int = 20,
                 min_n: int = 400) -> Optional[float]:
    """Subsampling standard error for rank-weighted estimators.

    Rank weights couple every sample through the order statistics, so the
    plain weighted-mean stderr misses their contribution.  Re-running the
    whole estimator (ranks included) on k disjoint folds captures it; the
    fold spread over sqrt(k) estimates the full-batch standard error.

    ``estimator(points, w_hat, weights) -> float | None`` mirrors one fold of
    the full computation.  Returns None when the batch is too small or too
    many folds degenerate, in which case the caller keeps its analytic value.
    """
    from .core import rank_weights  # local import keeps module deps one-way

    n = batch.size
    if n < min_n:
        return None
    bounds = np.linspace(0, n, k + 1).astype(int)
    ests = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        rw = rank_weights(batch.f_values[a:b], w, tie_mode=batch.tie_mode)
        alive = rw > 0.0
        if not np.any(alive):
            continue
        val = estimator(batch.points[a:b][alive], (b - a) * rw[alive], rw[alive])
        if val is None or not math.isfinite(val):
            continue
        ests.append(val)
    if len(ests) < 2:
        return None
    return float(np.std(ests, ddof=1) / math.sqrt(len(ests)))


def _block_preferences(w: WeightFn, lt: np.ndarray, leq: np.ndarray,
                       tie_mode: str) -> np.ndarray:
    """Preference value per tie block from its empirical CDF interval."""
    lt = np.clip(lt, 0.0, 1.0)
    leq = np.clip(leq, 0.0, 1.0)
    if tie_mode == "strict":
        return np.asarray(w(np.minimum(leq, np.nextafter(lt, 1.0))), dtype=float)
    if w.kind == "indicator":
        with np.errstate(invalid="ignore"):
            out = (np.minimum(w.q, leq) - np.minimum(w.q, lt)) / (leq - lt)
        return np.where(leq > lt, out, w(leq))
    return np.array([preference(w, QuantilePair(a, max(a, b)))
                     for a, b in zip(lt, leq)])


def _tie_bootstrap_se(batch: SampleBatch, w: WeightFn, point_vals: np.ndarray,
                      combine, n_reps: int = 64) -> Optional[float]:
    """Bootstrap standard error for rank-weighted estimators on tied batches.

    With tie blocks straddling the weighting's support boundary the estimators
    are not smooth in the block frequencies (fractional preferences enter
    through roots and logs), so neither the weighted-mean stderr nor fold
    subsampling finds the right scale.  Resampling the block counts does.
    The objective values enter only through the block structure, which keeps
    every downstream log invariant under monotone transforms of f.

    ``point_vals`` holds the per-point density term; ``combine(p, W, vbar)``
    maps block masses, block preferences, and resampled block means of that
    term to one estimate (or None when undefined).
    """
    fv = batch.f_values
    n = fv.size
    if n < 400:
        return None
    _, inv, counts = np.unique(fv, return_inverse=True, return_counts=True)
    if counts.size == n:
        return None  # no ties: the regular-case errors are fine
    finite = np.isfinite(point_vals)
    safe_vals = np.where(finite, point_vals, 0.0)
    sums = np.bincount(inv, weights=safe_vals)
    sq = np.bincount(inv, weights=safe_vals ** 2)
    n_finite = np.bincount(inv, weights=finite.astype(float))
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(n_finite > 0, sums / n_finite, -math.inf)
        variances = np.clip(sq / np.maximum(n_finite, 1.0) - means ** 2, 0.0, None)
    all_finite = np.bincount(inv, weights=(~finite).astype(float)) == 0

    stream = np.random.default_rng(batch.seed_tag + 0x5EED)
    probs = counts / n
    reps = []
    for _ in range(n_reps):
        m = stream.multinomial(n, probs)
        cum = np.cumsum(m)
        W = _block_preferences(w, (cum - m) / n, cum / n, batch.tie_mode)
        alive = (W > 0.0) & (m > 0) & all_finite
        if not np.any(alive):
            continue
        vbar = (means[alive]
                + stream.standard_normal(int(np.sum(alive)))
                * np.sqrt(variances[alive] / m[alive]))
        est = combine(m[alive] / n, W[alive], vbar)
        if est is not None and math.isfinite(est):
            reps.append(est)
    if len(reps) < 8:
        return None
    return float(np.std(reps, ddof=1))


# ---------------------------------------------------------------------------
# estimators

def _preferences_against(ref_sorted: np.ndarray, fv: np.ndarray, w: WeightFn) -> np.ndarray:
    """Preference value of each f-value against a sorted reference sample."""
    m = ref_sorted.size
    lt = np.searchsorted(ref_sorted, fv, side="left") / m
    leq = np.searchsorted(ref_sorted, fv, side="right") / m
    return _block_preferences(w, lt, leq, "tie_averaged")


def estimate_J_against_reference(next_params: ProposalParams, ref_fvalues: np.ndarray,
                                 obj: Objective, w: WeightFn, n: int,
                                 stream: np.random.Generator) -> tuple[float, float]:
    """J(theta_next | theta_cur) estimated against a frozen reference sample
    of f-values drawn under the current proposal.

    The standard error combines the spread over next-proposal draws with the
    uncertainty of the reference empirical CDF, measured by re-evaluating J
    against disjoint reference folds.
    """
    ref = np.sort(np.asarray(ref_fvalues, dtype=float))
    pts = sample(next_params, stream, n)
    fv = obj(pts)
    wv = _preferences_against(ref, fv, w)
    se_next = float(np.std(wv, ddof=1) / math.sqrt(n))
    se_ref = 0.0
    k = 10
    if ref.size >= 10 * k:
        raw = np.asarray(ref_fvalues, dtype=float)
        bounds = np.linspace(0, raw.size, k + 1).astype(int)
        folds = [float(np.mean(_preferences_against(np.sort(raw[a:b]), fv, w)))
                 for a, b in zip(bounds[:-1], bounds[1:])]
        se_ref = float(np.std(folds, ddof=1) / math.sqrt(k))
    return float(np.mean(wv)), math.sqrt(se_next ** 2 + se_ref ** 2)


def estimate_J(next_params: ProposalParams, cur_params: ProposalParams, obj: Objective,
               w: WeightFn, n: int, stream: np.random.Generator) -> tuple[float, float]:
    """Two-sample estimate of J(next | cur): an empirical f-distribution under
    the current proposal, then preference values on fresh next-points."""
    if n < 2:
        raise DomainError("estimate_J needs n >= 2")
    ref = obj(sample(cur_params, stream, n))
    return estimate_J_against_reference(next_params, ref, obj, w, n, stream)


def estimate_target_kl(cur_batch: SampleBatch, other: ProposalParams,
                       w: WeightFn) -> tuple[float, float, bool]:
    """Estimate KL(pi_cur, p_other) from a rank-weighted batch under the
    current proposal.

    Returns (estimate, stderr, infinite_flag); the flag is set when the other
    proposal has zero density at a surviving point (the estimate is +inf).
    """
    zw = w.mass
    n = cur_batch.size
    weights = cur_batch.rank_weights
    alive = weights > 0.0
    if not np.any(alive):
        raise DomainError("no surviving samples in batch")
    log_ratio = (log_density(cur_batch.origin_params, cur_batch.points)
                 - log_density(other, cur_batch.points))
    if np.any(np.isposinf(log_ratio[alive])) or np.any(np.isnan(log_ratio[alive])):
        return math.inf, 0.0, True
    wa = weights[alive]
    w_hat = n * wa  # W(x) recovered from the rank weight
    g = np.log(w_hat / zw) + log_ratio[alive]
    est, se = _self_normalized(g, wa)

    def _combine(p, W, vbar):
        wts = p * W
        return float(np.sum(wts * (np.log(W / zw) + vbar)) / np.sum(wts))

    def _fold(pts_f, w_hat_f, weights_f):
        gf = (np.log(w_hat_f / zw) + log_density(cur_batch.origin_params, pts_f)
              - log_density(other, pts_f))
        return _self_normalized(gf, weights_f)[0]

    # the declared error is the most pessimistic of the applicable estimates:
    # each can miss part of the rank-coupling noise on its own
    candidates = [se,
                  _tie_bootstrap_se(cur_batch, w, log_ratio, _combine),
                  _fold_stderr(cur_batch, w, _fold)]
    return est, max(c for c in candidates if c is not None), False


def estimate_target_renyi(cur_batch: SampleBatch, other: ProposalParams, w: WeightFn,
                          alpha: float, require_binary: bool = False) -> tuple[float, float]:
    """Estimate the Renyi divergence D_alpha(pi_cur, p_other), alpha in (0,1).

    The generic estimator reweights by (W/Z_w)^(alpha-1) so it remains valid
    with ties; with ``require_binary`` the preference values must be exactly
    {0,1} (indicator weighting, no ties) or the call is refused.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    zw = w.mass
    n = cur_batch.size
    weights = cur_batch.rank_weights
    alive = weights > 0.0
    if not np.any(alive):
        raise DomainError("no surviving samples in batch")
    w_hat = n * weights[alive]
    if require_binary:
        if w.kind != "indicator" or not np.all(np.isin(w_hat, (0.0, 1.0))):
            raise DomainError("binary preference precondition unverifiable (ties present?)")
    pts = cur_batch.points[alive]

    def _estimate(pts_f, w_hat_f, weights_f):
        ratio = np.exp((1.0 - alpha) * (log_density(other, pts_f)
                                        - log_density(cur_batch.origin_params, pts_f)))
        vals = (w_hat_f / zw) ** (alpha - 1.0) * ratio
        mean, mean_se = _self_normalized(vals, weights_f)
        if mean <= 0.0:
            return None
        return math.log(mean) / (alpha - 1.0), mean_se / (abs(alpha - 1.0) * mean)

    out = _estimate(pts, w_hat, weights[alive])
    if out is None:
        return math.inf, 0.0
    est, se = out

    def _combine(p, W, vbar):
        wts = p * W
        mean = float(np.sum(wts * (W / zw) ** (alpha - 1.0) * vbar) / np.sum(wts))
        if mean <= 0.0:
            return None
        return math.log(mean) / (alpha - 1.0)

    with np.errstate(over="ignore"):
        ratio_all = np.exp((1.0 - alpha) * (log_density(other, cur_batch.points)
                                            - log_density(cur_batch.origin_params,
                                                          cur_batch.points)))
    candidates = [se,
                  _tie_bootstrap_se(cur_batch, w, ratio_all, _combine),
                  _fold_stderr(cur_batch, w,
                               lambda p, wh, wt: (_estimate(p, wh, wt) or (None,))[0])]
    return est, max(c for c in candidates if c is not None)


# ---------------------------------------------------------------------------
# checkers

def check_improvement_bound(report: IterationReport, z_w: float) -> dict:
    """Pass/fail outcomes for the J-improvement chain.

    (a) j_hat >= exp(delta_hat) * Z_w within propagated tolerance;
    (b) j_hat > Z_w whenever delta_hat is significantly positive;
    (c) the quantile did not increase whenever (b) applies and passed.
    """
    rhs = math.exp(report.delta_hat) * z_w
    se = math.sqrt(report.j_stderr ** 2 + (rhs * report.delta_stderr) ** 2)
    out = {
        "j_exp_delta_bound": bool(report.j_hat >= rhs - 3.0 * se),
        "j_exp_delta_slack": report.j_hat - rhs,
    }
    delta_positive = report.delta_hat > 3.0 * report.delta_stderr
    out["increase_applicable"] = bool(delta_positive)
    out["increase_condition"] = bool(report.j_hat + 3.0 * report.j_stderr > z_w) if delta_positive else None
    if delta_positive and out["increase_condition"] and report.q_hat_prev is not None:
        tol = 3.0 * math.sqrt((report.q_prev_stderr or 0.0) ** 2 + (report.q_next_stderr or 0.0) ** 2)
        out["quantile_monotone"] = bool(report.q_hat_next <= report.q_hat_prev + tol)
    else:
        out["quantile_monotone"] = None
    return out


def quantile_bound_check(next_fvalues: np.ndarray, q_next: float, q_prev: float,
                         delta_hat: float, delta_stderr: float, q: float,
                         q_prev_stderr: float = 0.0, q_next_stderr: float = 0.0) -> dict:
    """Quantitative quantile bound via the empirical CDF of f under the next
    proposal.

    Tolerances: delta_hat is shrunk by three standard errors before inverting
    the CDF (the bound is monotone in delta), and the final comparison allows
    three combined standard errors of the two estimated quantiles.
    """
    f = np.sort(np.asarray(next_fvalues, dtype=float))
    n = f.size
    cdf_qnext = np.searchsorted(f, q_next, side="right") / n
    target = math.exp(delta_hat) * cdf_qnext
    out = {"vacuous": bool(target > 1.0)}
    if out["vacuous"]:
        out.update(rhs=None, bound_pass=None, linearized_rhs=None)
        return out
    shrunk = math.exp(delta_hat - 3.0 * delta_stderr) * cdf_qnext
    idx = max(0, min(n - 1, math.ceil(shrunk * n) - 1))
    rhs = float(f[idx])
    # finite-difference slope of the inverse CDF at q
    h = max(1.0 / n, 1.0 / math.sqrt(n))
    lo = f[max(0, min(n - 1, math.ceil(max(q - h, 1e-12) * n) - 1))]
    hi = f[max(0, min(n - 1, math.ceil(min(q + h, 1.0) * n) - 1))]
    slope = (hi - lo) / (2.0 * h)
    q_tol = 3.0 * math.sqrt(q_prev_stderr ** 2 + q_next_stderr ** 2)
    out.update(
        rhs=rhs,
        bound_pass=bool(q_prev >= rhs - q_tol),
        linearized_rhs=float(q_next + q * delta_hat * slope),
    )
    return out


def check_igo_delta_formula(prev: ProposalParams, nxt: ProposalParams, tau: float,
                            z_w: float, rule: str, kl_prev: float, kl_prev_se: float,
                            kl_next: float, kl_next_se: float) -> dict:
    """Check the quantified exponential-family decrease: the predicted Delta
    from the closed-form family KL must fit under the estimated decrease."""
    if rule == "igo_ng":
        coeff = (1.0 - tau * z_w) / (tau * z_w)
    elif rule == "igo_ml":
        coeff = (1.0 - tau) / (tau * z_w)
    else:
        raise DomainError("delta formula applies to igo_ng and igo_ml only")
    delta_pred = coeff * family_kl(prev, nxt)
    tol = 3.0 * math.sqrt(kl_prev_se ** 2 + kl_next_se ** 2)
    return {
        "delta_pred": delta_pred,
        "quantified_decrease": bool(kl_next + delta_pred <= kl_prev + tol),
        "slack": kl_prev - kl_next - delta_pred,
    }


# ---------------------------------------------------------------------------
# exact oracle

def _exact_quantile(fvals: np.ndarray, probs: np.ndarray, q: float) -> float:
    """Largest atom u with P[f <= u] >= q and P[f >= u] >= 1 - q."""
    order = np.argsort(fvals)
    f = fvals[order]
    p = probs[order]
    cdf = np.cumsum(p)
    sf = np.cumsum(p[::-1])[::-1]  # P[f >= f_i] for sorted atoms
    # collapse ties: evaluate conditions at the last index of each tie block
    tol = 1e-12
    best = f[0]
    for i in range(f.size):
        if i + 1 < f.size and f[i + 1] == f[i]:
            continue
        if cdf[i] >= q - tol and sf[np.searchsorted(f, f[i], side="left")] >= (1.0 - q) - tol:
            best = f[i]
    return float(best)


def exact_report(model: DiscreteModel, obj: Objective, w: WeightFn,
                 prev: ProposalParams, nxt: ProposalParams,
                 renyi_alphas: tuple = ()) -> ExactReport:
    """Compute W, the target, J, divergences, and quantiles by enumeration."""
    pts = model.points
    p_prev = np.exp(log_density(prev, pts))
    p_prev = p_prev / np.sum(p_prev)
    p_next = np.exp(log_density(nxt, pts))
    p_next = p_next / np.sum(p_next)
    fvals = obj(pts)
    zw = w.mass

    order = np.argsort(fvals)
    f_sorted = fvals[order]
    p_sorted = p_prev[order]
    cdf = np.cumsum(p_sorted)
    lt = np.searchsorted(f_sorted, fvals, side="left")
    leq = np.searchsorted(f_sorted, fvals, side="right")
    q_lt = np.where(lt > 0, cdf[np.maximum(lt - 1, 0)], 0.0)
    q_leq = cdf[leq - 1]
    wv = np.array([preference(w, QuantilePair(min(a, 1.0), min(max(a, b), 1.0)))
                   for a, b in zip(np.clip(q_lt, 0, 1), np.clip(q_leq, 0, 1))])

    target = wv * p_prev / zw
    j_prev = float(np.sum(wv * p_prev))
    j_next = float(np.sum(wv * p_next))

    def _kl(pi, p):
        mask = pi > 0.0
        return float(np.sum(pi[mask] * np.log(pi[mask] / p[mask])))

    def _renyi(pi, p, a):
        mask = pi > 0.0
        return float(np.log(np.sum(pi[mask] ** a * p[mask] ** (1.0 - a))) / (a - 1.0))

    q = w.q if w.kind == "indicator" else zw
    return ExactReport(
        j_prev=j_prev,
        j_next=j_next,
        kl_target_prev=_kl(target, p_prev),
        kl_target_next=_kl(target, p_next),
        renyi_target_prev={a: _renyi(target, p_prev, a) for a in renyi_alphas},
        q_prev=_exact_quantile(fvals, p_prev, q),
        q_next=_exact_quantile(fvals, p_next, q),
        delta=_kl(target, p_prev) - _kl(target, p_next),
        w_values=wv,
        target_probs=target,
    )


# ---------------------------------------------------------------------------
# per-iteration report assembly

def iteration_report(cur: ProposalParams, nxt: ProposalParams, obj: Objective,
                     cfg, k: int, seed: int, diag: DiagnosticsConfig) -> IterationReport:
    """Assemble the full diagnostics record for one optimization step.

    Diagnostic batches are fresh and purpose-tagged, never the batch the
    stepper consumed, so the improvement checks are free of selection bias.
    """
    from .algorithms import draw_batch  # late import to avoid a module cycle

    w = cfg.weight_fn
    m = diag.batch_size or cfg.batch_size
    cur_batch = draw_batch(cur, obj, w, m, substream(seed, k, "diag-cur"),
                           tie_mode=cfg.tie_mode)
    kl_prev, kl_prev_se, inf_prev = estimate_target_kl(cur_batch, cur, w)
    kl_next, kl_next_se, inf_next = estimate_target_kl(cur_batch, nxt, w)
    delta = kl_prev - kl_next
    delta_se = math.sqrt(kl_prev_se ** 2 + kl_next_se ** 2)

    j_hat, j_se = estimate_J_against_reference(
        nxt, cur_batch.f_values, obj, w, m, substream(seed, k, "diag-next"))

    report = IterationReport(
        iteration=k,
        j_hat=j_hat, j_stderr=j_se,
        kl_target_prev=kl_prev, kl_prev_stderr=kl_prev_se,
        kl_target_next=kl_next, kl_next_stderr=kl_next_se,
        delta_hat=delta, delta_stderr=delta_se,
        infinite_kl=inf_prev or inf_next,
    )

    for a in diag.renyi_alphas:
        report.renyi_target[a] = estimate_target_renyi(cur_batch, nxt, w, a)

    next_f = None
    if diag.compute_quantiles:
        q = diag.quantile_q or w.mass
        next_f = obj(sample(nxt, substream(seed, k, "diag-quantile"), m))
        report.q_hat_prev = empirical_quantile(cur_batch.f_values, q)
        report.q_hat_next = empirical_quantile(next_f, q)
        report.q_prev_stderr = empirical_quantile_stderr(cur_batch.f_values, q)
        report.q_next_stderr = empirical_quantile_stderr(next_f, q)

    report.bound_checks = check_improvement_bound(report, w.mass)
    if diag.compute_quantiles and not report.infinite_kl:
        q = diag.quantile_q or w.mass
        report.bound_checks["quantile_bound"] = quantile_bound_check(
            next_f, report.q_hat_next, report.q_hat_prev, delta, delta_se, q,
            q_prev_stderr=report.q_prev_stderr or 0.0,
            q_next_stderr=report.q_next_stderr or 0.0)
    if diag.igo_delta_check and cfg.rule in ("igo_ng", "igo_ml") and not report.infinite_kl:
        report.bound_checks["igo_delta"] = check_igo_delta_formula(
            cur, nxt, cfg.step_size, w.mass, cfg.rule,
            kl_prev, kl_prev_se, kl_next, kl_next_se)
    return report
