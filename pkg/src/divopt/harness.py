"""Benchmark objectives, experiment configuration, run logging, and summary
emission.

Logs are JSON lines: one header object, one record per iteration, one footer.
Serialization is canonical (sorted keys, shortest-repr floats) so identical
(config, seed) pairs produce byte-identical logs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .algorithms import StepConfig, Trajectory, optimize
from .core import DiscreteModel, Objective, WeightFn
from .diagnostics import DiagnosticsConfig, exact_report
from .errors import ConfigurationError, DomainError
from .proposals import (
    BernoulliParams,
    params_from_dict,
    params_to_dict,
)

__all__ = [
    "make_objective",
    "ExperimentConfig",
    "RunLog",
    "run_experiment",
    "run_exact_oracle",
    "summarize",
    "write_summary_csv",
]

__version__ = "0.1.0"


# ---------------------------------------------------------------------------
# objectives

def _sphere(x):
    return np.sum(x * x, axis=1)


def _rosenbrock(x):
    return np.sum(100.0 * (x[:, 1:] - x[:, :-1] ** 2) ** 2 + (1.0 - x[:, :-1]) ** 2, axis=1)


def _rastrigin(x):
    return 10.0 * x.shape[1] + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x), axis=1)


def make_objective(name: str, d: int, coeffs=None, table=None,
                   well_center=None, well_offset: float = 0.0) -> Objective:
    """Standard benchmark objectives plus a user-supplied discrete table."""
    if name == "sphere":
        return Objective("sphere", "continuous", d, _sphere)
    if name == "rosenbrock":
        if d < 2:
            raise ConfigurationError("rosenbrock needs d >= 2")
        return Objective("rosenbrock", "continuous", d, _rosenbrock)
    if name == "rastrigin":
        return Objective("rastrigin", "continuous", d, _rastrigin)
    if name == "two_well":
        a = np.asarray(well_center if well_center is not None else [2.0] + [0.0] * (d - 1),
                       dtype=float)
        off = float(well_offset)

        def _two_well(x, a=a, off=off):
            return np.minimum(np.sum((x - a) ** 2, axis=1),
                              np.sum((x + a) ** 2, axis=1)) + off

        return Objective("two_well", "continuous", d, _two_well)
    if name == "onemax":
        return Objective("onemax", "discrete_bits", d, lambda x: -np.sum(x, axis=1))
    if name == "linear":
        c = np.asarray(coeffs if coeffs is not None else np.ones(d), dtype=float)

        def _linear(x, c=c):
            return x @ c

        return Objective("linear", "discrete_bits", d, _linear)
    if name == "user_table":
        vals = np.asarray(table, dtype=float)
        if vals.size != 2 ** d:
            raise ConfigurationError("user_table needs 2**d values")
        powers = 2 ** np.arange(d - 1, -1, -1)

        def _table(x, vals=vals, powers=powers):
            idx = (x.astype(int) @ powers)
            return vals[idx]

        return Objective("user_table", "discrete_bits", d, _table)
    raise ConfigurationError(f"unknown objective {name!r}")


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    objective: str
    dim: int
    initial_params: dict
    rule: str
    batch_size: int
    iterations: int
    seed: int = 0
    step_size: float = 1.0
    weight: dict = field(default_factory=lambda: {"kind": "indicator", "q": 0.3})
    tie_mode: str = "strict"
    sigma_variant: str = "gamma_normalized"
    diag_batch_size: Optional[int] = None
    renyi_alphas: list = field(default_factory=list)
    compute_quantiles: bool = True
    igo_delta_check: bool = True
    diagnostics: bool = True
    objective_coeffs: Optional[list] = None
    objective_table: Optional[list] = None
    objective_transform: Optional[str] = None
    well_center: Optional[list] = None
    well_offset: float = 0.0
    out: Optional[str] = None

    def __post_init__(self):
        if self.dim < 1 or self.iterations < 0 or self.batch_size < 2:
            raise ConfigurationError("need dim >= 1, iterations >= 0, batch_size >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def build_objective(self) -> Objective:
        obj = make_objective(self.objective, self.dim, coeffs=self.objective_coeffs,
                             table=self.objective_table, well_center=self.well_center,
                             well_offset=self.well_offset)
        if self.objective_transform is None:
            return obj
        if self.objective_transform != "exp":
            raise ConfigurationError(
                f"unknown objective transform {self.objective_transform!r}")
        # strictly increasing warp; rank-based machinery must not notice it
        return Objective(f"exp({obj.name})", obj.domain_kind, obj.dim,
                         lambda x, f=obj.fn: np.exp(f(x)))

    def build_step_config(self) -> StepConfig:
        return StepConfig(rule=self.rule, weight_fn=WeightFn.from_dict(self.weight),
                          batch_size=self.batch_size, step_size=self.step_size,
                          sigma_variant=self.sigma_variant, tie_mode=self.tie_mode)

    def build_diag_config(self) -> DiagnosticsConfig:
        return DiagnosticsConfig(enabled=self.diagnostics,
                                 batch_size=self.diag_batch_size,
                                 renyi_alphas=tuple(self.renyi_alphas),
                                 compute_quantiles=self.compute_quantiles,
                                 igo_delta_check=self.igo_delta_check)

    def build_initial_params(self):
        return params_from_dict(self.initial_params)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


@dataclass
class RunLog:
    header: dict
    records: list
    footer: dict

    def to_lines(self) -> list[str]:
        return [_dumps(self.header)] + [_dumps(r) for r in self.records] + [_dumps(self.footer)]

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path: str) -> "RunLog":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        return cls(header=lines[0], records=lines[1:-1], footer=lines[-1])


def _params_digest(params) -> str:
    import hashlib

    blob = _dumps(params_to_dict(params)).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _finite(x):
    return x if x is not None and isinstance(x, (int, float)) and math.isfinite(x) else None


def _footer_from_trajectory(traj: Trajectory, compute_quantiles: bool) -> dict:
    reports = traj.reports
    checks = {}

    def _tally(name, flags):
        flags = [f for f in flags if f is not None]
        checks[name] = {"passes": int(sum(flags)), "total": len(flags),
                        "pass": bool(all(flags)) if flags else True}

    _tally("j_exp_delta_bound", [r.bound_checks.get("j_exp_delta_bound") for r in reports])
    _tally("increase_condition", [r.bound_checks.get("increase_condition") for r in reports])
    _tally("quantile_monotone", [r.bound_checks.get("quantile_monotone") for r in reports])
    _tally("quantile_bound",
           [r.bound_checks.get("quantile_bound", {}).get("bound_pass") for r in reports])
    _tally("igo_delta",
           [r.bound_checks.get("igo_delta", {}).get("quantified_decrease") for r in reports])

    footer = {"kind": "footer", "iterations_completed": len(traj.params_history) - 1,
              "failure": traj.failure, "stopped": traj.stopped, "checks": checks}
    if compute_quantiles and reports:
        qs = [r.q_hat_next for r in reports]
        violations = 0
        prev = reports[0].q_hat_prev
        prev_se = reports[0].q_prev_stderr or 0.0
        for r in reports:
            tol = 3.0 * math.sqrt(prev_se ** 2 + (r.q_next_stderr or 0.0) ** 2)
            if r.q_hat_next > prev + tol:
                violations += 1
            prev, prev_se = r.q_hat_next, r.q_next_stderr or 0.0
        footer["final_q_hat"] = qs[-1]
        footer["quantile_violations"] = violations
    return footer


def run_experiment(cfg: ExperimentConfig) -> RunLog:
    """Execute one experiment; deterministic per (config, seed)."""
    obj = cfg.build_objective()
    step_cfg = cfg.build_step_config()
    diag = cfg.build_diag_config()
    initial = cfg.build_initial_params()

    traj = optimize(initial, obj, step_cfg, cfg.iterations, cfg.seed, diag=diag)

    header = {"kind": "header", "version": __version__, "seed": cfg.seed,
              "threads": os.environ.get("QD_THREADS"), "config": cfg.to_dict()}
    records = []
    for i, rep in enumerate(traj.reports):
        rec = {"kind": "iteration", **rep.to_dict(),
               "params_digest": _params_digest(traj.params_history[i + 1])}
        records.append(rec)
    if not traj.reports:
        # diagnostics disabled: still log the parameter digests
        for i, p in enumerate(traj.params_history[1:]):
            records.append({"kind": "iteration", "iteration": i,
                            "params_digest": _params_digest(p)})
    footer = _footer_from_trajectory(traj, cfg.compute_quantiles and cfg.diagnostics)
    log = RunLog(header=header, records=records, footer=footer)
    if cfg.out:
        os.makedirs(os.path.dirname(cfg.out) or ".", exist_ok=True)
        log.write(cfg.out)
    return log


def run_exact_oracle(cfg: ExperimentConfig) -> RunLog:
    """Exact discrete mode: run the loop on an enumerable domain and log
    enumeration-based reports instead of Monte Carlo estimates."""
    obj = cfg.build_objective()
    if obj.domain_kind != "discrete_bits":
        raise DomainError("exact oracle mode requires a discrete-bits objective")
    model = DiscreteModel.bits(cfg.dim)
    step_cfg = cfg.build_step_config()
    initial = cfg.build_initial_params()
    if not isinstance(initial, BernoulliParams):
        raise DomainError("exact oracle mode requires Bernoulli-product proposals")

    traj = optimize(initial, obj, step_cfg, cfg.iterations, cfg.seed, diag=None)
    zw = step_cfg.weight_fn.mass
    records = []
    all_pass = True
    for i in range(len(traj.params_history) - 1):
        prev, nxt = traj.params_history[i], traj.params_history[i + 1]
        rep = exact_report(model, obj, step_cfg.weight_fn, prev, nxt,
                           renyi_alphas=tuple(cfg.renyi_alphas))
        prop1 = rep.j_next >= math.exp(rep.delta) * zw - 1e-12
        prop4ii = rep.kl_target_prev <= -math.log(zw) + 1e-12
        all_pass = all_pass and prop1 and prop4ii
        records.append({"kind": "iteration", "iteration": i,
                        "j_prev": rep.j_prev, "j_next": rep.j_next,
                        "kl_target_prev": rep.kl_target_prev,
                        "kl_target_next": rep.kl_target_next,
                        "delta": rep.delta, "q_prev": rep.q_prev, "q_next": rep.q_next,
                        "renyi_target_prev": {str(a): v for a, v in rep.renyi_target_prev.items()},
                        "prop1_exact": prop1, "prop4ii_exact": prop4ii})
    header = {"kind": "header", "version": __version__, "seed": cfg.seed,
              "mode": "exact", "config": cfg.to_dict()}
    footer = {"kind": "footer", "iterations_completed": len(records),
              "failure": traj.failure,
              "checks": {"exact_bounds": {"passes": int(sum(r["prop1_exact"] and r["prop4ii_exact"]
                                                            for r in records)),
                                          "total": len(records), "pass": bool(all_pass)}}}
    log = RunLog(header=header, records=records, footer=footer)
    if cfg.out:
        os.makedirs(os.path.dirname(cfg.out) or ".", exist_ok=True)
        log.write(cfg.out)
    return log


# ---------------------------------------------------------------------------
# summaries

def summarize(logs: list[RunLog]) -> dict:
    """Aggregate pass rates and quantile trajectories across runs sharing a
    config shape."""
    if not logs:
        raise DomainError("summarize needs at least one log")
    shapes = {tuple(sorted(log.footer.get("checks", {}))) for log in logs}
    if len(shapes) > 1:
        raise DomainError("logs have mixed check shapes")

    checks = {}
    for name in logs[0].footer.get("checks", {}):
        per_run = [log.footer["checks"][name] for log in logs]
        runs_pass = sum(c["pass"] for c in per_run)
        checks[name] = {
            "runs_pass": int(runs_pass),
            "runs_total": len(per_run),
            "run_pass_rate": runs_pass / len(per_run),
            "iteration_pass_rate": (sum(c["passes"] for c in per_run)
                                    / max(1, sum(c["total"] for c in per_run))),
        }

    q_traj = []
    for log in logs:
        qs = [r.get("q_hat_next") for r in log.records if r.get("q_hat_next") is not None]
        if qs:
            q_traj.append(qs)
    quantiles = None
    if q_traj:
        k = min(len(t) for t in q_traj)
        arr = np.array([t[:k] for t in q_traj])
        quantiles = {
            "median": np.median(arr, axis=0).tolist(),
            "q25": np.percentile(arr, 25, axis=0).tolist(),
            "q75": np.percentile(arr, 75, axis=0).tolist(),
        }
    return {"n_runs": len(logs), "checks": checks, "quantile_trajectory": quantiles}


def write_summary_csv(summary: dict, path: str) -> None:
    """Emit the summary as two delimited sections: per-check pass rates and
    the quantile trajectory."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "runs_pass", "runs_total", "run_pass_rate",
                         "iteration_pass_rate"])
        for name, c in summary["checks"].items():
            writer.writerow([name, c["runs_pass"], c["runs_total"],
                             c["run_pass_rate"], c["iteration_pass_rate"]])
        qt = summary.get("quantile_trajectory")
        if qt:
            writer.writerow([])
            writer.writerow(["iteration", "q_median", "q_q25", "q_q75"])
            for i, (m, a, b) in enumerate(zip(qt["median"], qt["q25"], qt["q75"])):
                writer.writerow([i, m, a, b])
