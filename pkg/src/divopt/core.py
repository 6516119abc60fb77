"""Shared substrate: weighting functions, quantile machinery, rank-based
weights, and self-normalized weighted expectations.

The weighting function ``w`` is restricted to piecewise-constant steps on
[0, 1] so that its mass and the preference-function integrals are exact
(no quadrature error enters any downstream check).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateBatchError, DomainError, UnsupportedDomainError

__all__ = [
    "Objective",
    "WeightFn",
    "QuantilePair",
    "SampleBatch",
    "DiscreteModel",
    "rank_weights",
    "weighted_expectation",
    "weighted_mean",
    "empirical_quantile",
    "empirical_quantile_stderr",
    "exact_quantile_pair",
]


@dataclass(frozen=True)
class Objective:
    """A deterministic black-box objective.

    ``domain_kind`` is ``"continuous"`` (points in R^dim) or
    ``"discrete_bits"`` (points in {0,1}^dim).
    """

    name: str
    domain_kind: str
    dim: int
    fn: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.domain_kind not in ("continuous", "discrete_bits"):
            raise DomainError(f"unknown domain kind {self.domain_kind!r}")
        if self.dim < 1:
            raise DomainError("dimension must be >= 1")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate f on a batch of points (rows)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(self.fn(points), dtype=float)


class WeightFn:
    """Non-increasing, non-negative step weighting on [0, 1].

    Two kinds are supported:

    * ``indicator(q)``: w(u) = 1 iff u <= q, else 0.
    * ``table(breaks, values)``: left-closed steps, ``values[i]`` on
      ``[breaks[i], breaks[i+1])`` with the last interval closed at 1.

    The mass ``Z_w = int_0^1 w(u) du`` is exact in both cases.
    """

    def __init__(self, kind: str, q: float | None = None,
                 breaks: Sequence[float] | None = None,
                 values: Sequence[float] | None = None):
        self.kind = kind
        if kind == "indicator":
            if q is None or not (0.0 < q < 1.0):
                raise ConfigurationError("indicator weighting requires q in (0, 1)")
            self.q = float(q)
            self._breaks = np.array([0.0, self.q, 1.0])
            self._values = np.array([1.0, 0.0])
        elif kind == "table":
            b = np.asarray(breaks, dtype=float)
            v = np.asarray(values, dtype=float)
            if b.ndim != 1 or v.ndim != 1 or len(b) != len(v) + 1:
                raise ConfigurationError("table weighting needs len(breaks) == len(values) + 1")
            if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
                raise ConfigurationError("breaks must increase strictly from 0 to 1")
            if np.any(v < 0):
                raise ConfigurationError("weighting values must be non-negative")
            if np.any(np.diff(v) > 0):
                raise ConfigurationError("weighting must be non-increasing")
            self.q = None
            self._breaks = b
            self._values = v
        else:
            raise ConfigurationError(f"unknown weighting kind {kind!r}")
        if self.mass <= 0.0:
            raise ConfigurationError("weighting has zero mass; targets are undefined")

    @classmethod
    def indicator(cls, q: float) -> "WeightFn":
        return cls("indicator", q=q)

    @classmethod
    def table(cls, breaks: Sequence[float], values: Sequence[float]) -> "WeightFn":
        return cls("table", breaks=breaks, values=values)

    @property
    def mass(self) -> float:
        """Exact Z_w = int_0^1 w(u) du."""
        if self.kind == "indicator":
            return self.q
        return float(np.sum(np.diff(self._breaks) * self._values))

    @property
    def max_value(self) -> float:
        return float(self._values[0])

    def __call__(self, u):
        """Evaluate w pointwise; accepts scalars or arrays in [0, 1]."""
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise DomainError("weighting argument must lie in [0, 1]")
        if self.kind == "indicator":
            out = (arr <= self.q).astype(float)
        else:
            idx = np.searchsorted(self._breaks[1:-1], arr, side="right")
            out = self._values[idx]
        return float(out) if np.isscalar(u) else out

    def integral(self, a: float, b: float) -> float:
        """Exact int_a^b w(u) du for 0 <= a <= b <= 1."""
        if not (0.0 <= a <= b <= 1.0):
            raise DomainError("integration bounds must satisfy 0 <= a <= b <= 1")
        if self.kind == "indicator":
            return max(0.0, min(b, self.q) - a)
        lo = np.clip(self._breaks[:-1], a, b)
        hi = np.clip(self._breaks[1:], a, b)
        return float(np.sum((hi - lo) * self._values))

    def to_dict(self) -> dict:
        if self.kind == "indicator":
            return {"kind": "indicator", "q": self.q}
        return {"kind": "table", "breaks": self._breaks.tolist(), "values": self._values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightFn":
        if d["kind"] == "indicator":
            return cls.indicator(d["q"])
        return cls.table(d["breaks"], d["values"])


@dataclass(frozen=True)
class QuantilePair:
    """Probabilities (P[f(X) < f(x)], P[f(X) <= f(x)]) under a proposal."""

    q_lt: float
    q_leq: float

    def __post_init__(self):
        if not (0.0 <= self.q_lt <= self.q_leq <= 1.0):
            raise DomainError(f"invalid quantile pair ({self.q_lt}, {self.q_leq})")


def preference(w: WeightFn, qp: QuantilePair) -> float:
    """Quantile-based preference value at a point.

    Returns w(q_leq) when there is no tie mass, otherwise the exact average
    of w over [q_lt, q_leq].
    """
    if qp.q_leq == qp.q_lt:
        return float(w(qp.q_leq))
    return w.integral(qp.q_lt, qp.q_leq) / (qp.q_leq - qp.q_lt)


def rank_weights(f_values: np.ndarray, w: WeightFn, tie_mode: str = "strict") -> np.ndarray:
    """Rank-based weights hat-w_n = (1/N) w((rk_n + 1/2)/N).

    ``strict`` uses the strict-less rank for every sample (tied samples share
    a weight).  ``tie_averaged`` gives each member of an m-long tie block the
    mean of the m slot weights the block occupies, matching the averaging
    branch of the preference function.
    """
    f = np.asarray(f_values, dtype=float)
    if f.size == 0:
        raise DomainError("rank weights need at least one sample")
    n = f.size
    slot_w = w((np.arange(n) + 0.5) / n) / n
    order = np.sort(f)
    lo = np.searchsorted(order, f, side="left")
    if tie_mode == "strict":
        return slot_w[lo]
    if tie_mode == "tie_averaged":
        hi = np.searchsorted(order, f, side="right")
        csum = np.concatenate(([0.0], np.cumsum(slot_w)))
        return (csum[hi] - csum[lo]) / (hi - lo)
    raise ConfigurationError(f"unknown tie mode {tie_mode!r}")


@dataclass
class SampleBatch:
    """Points drawn from a proposal with their objective values and
    rank-based weights."""

    points: np.ndarray
    f_values: np.ndarray
    rank_weights: np.ndarray
    origin_params: object = None
    seed_tag: int = 0
    tie_mode: str = "strict"

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.f_values = np.asarray(self.f_values, dtype=float)
        self.rank_weights = np.asarray(self.rank_weights, dtype=float)
        n = self.points.shape[0]
        if self.f_values.shape != (n,) or self.rank_weights.shape != (n,):
            raise DomainError("batch arrays must share length N")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def weight_sum(self) -> float:
        return float(np.sum(self.rank_weights))


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Self-normalized weighted mean along axis 0."""
    weights = np.asarray(weights, dtype=float)
    total = float(np.sum(weights))
    if total <= 0.0:
        raise DegenerateBatchError("all rank weights are zero")
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return float(np.sum(weights * values) / total)
    return np.tensordot(weights, values, axes=(0, 0)) / total


def weighted_expectation(batch: SampleBatch, h: Callable[[np.ndarray], np.ndarray]):
    """Self-normalized estimate of E_{X ~ pi}[h(X)] from a rank-weighted batch."""
    values = np.asarray([h(x) for x in batch.points], dtype=float)
    return weighted_mean(values, batch.rank_weights)


def empirical_quantile(f_values: np.ndarray, q: float) -> float:
    """Largest sample value u with #{f <= u}/N >= q and #{f >= u}/N >= 1-q.

    Candidates are the observed values themselves; the defining supremum is
    attained at an atom of the empirical distribution.
    """
    f = np.sort(np.asarray(f_values, dtype=float))
    n = f.size
    if n == 0:
        raise DomainError("empirical quantile of an empty sample")
    if not (0.0 < q < 1.0):
        raise DomainError("q must lie in (0, 1)")
    # #{f <= f[i]} = hi[i], #{f >= f[i]} = n - lo[i] for the sorted array.
    lo = np.searchsorted(f, f, side="left")
    hi = np.searchsorted(f, f, side="right")
    ok = (hi >= q * n) & ((n - lo) >= (1.0 - q) * n)
    if not np.any(ok):
        # q*n below every attainable count can not happen; guard anyway.
        return float(f[0])
    return float(f[np.nonzero(ok)[0][-1]])


def empirical_quantile_stderr(f_values: np.ndarray, q: float) -> float:
    """Sampling error (one sigma) of the empirical q-quantile.

    Small samples use the order-statistic spread at one binomial standard
    deviation.  Larger samples bootstrap the sample counts instead: on atomic
    distributions the quantile hops between neighbouring atoms, and the
    count resampling reproduces that two-point behaviour where a fixed-width
    order-statistic window can miss it.
    """
    f = np.sort(np.asarray(f_values, dtype=float))
    n = f.size
    r = int(np.clip(round(q * n), 0, n - 1))
    s = max(1, int(round(np.sqrt(n * q * (1.0 - q)))))
    spread = float((f[min(n - 1, r + s)] - f[max(0, r - s)]) / 2.0)
    if n < 400:
        return spread
    stream = np.random.default_rng(0x51AB)
    reps = np.empty(32)
    target = q * n
    for t in range(reps.size):
        cum = np.cumsum(stream.multinomial(n, np.full(n, 1.0 / n)))
        # largest observed atom whose preceding cumulative count is <= q*n
        idx = int(np.searchsorted(cum, target, side="right"))
        reps[t] = f[min(idx, n - 1)]
    return max(spread, float(np.std(reps, ddof=1)))


class DiscreteModel:
    """An enumerable search space, enabling exact computation of every
    target/divergence quantity by brute force."""

    MAX_POINTS = 2 ** 20

    def __init__(self, points: np.ndarray):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[0] > self.MAX_POINTS:
            raise UnsupportedDomainError(
                f"domain with {points.shape[0]} points exceeds the enumeration cap")
        self.points = points

    @classmethod
    def bits(cls, d: int) -> "DiscreteModel":
        """All of {0,1}^d, lexicographic order."""
        if d < 1 or 2 ** d > cls.MAX_POINTS:
            raise UnsupportedDomainError(f"cannot enumerate {{0,1}}^{d}")
        grid = ((np.arange(2 ** d)[:, None] >> np.arange(d - 1, -1, -1)) & 1).astype(float)
        return cls(grid)

    @property
    def size(self) -> int:
        return self.points.shape[0]


def exact_quantile_pair(model: DiscreteModel, obj: Objective, params, x: np.ndarray) -> QuantilePair:
    """Exact (P[f < f(x)], P[f <= f(x)]) under a discrete proposal, by full
    enumeration of the model."""
    if params is None:
        probs = np.full(model.size, 1.0 / model.size)
    else:
        from .proposals import log_density  # deferred: proposals imports core

        probs = np.exp(log_density(params, model.points))
        probs = probs / np.sum(probs)
    fvals = obj(model.points)
    fx = float(obj(np.atleast_2d(x))[0])
    return QuantilePair(
        q_lt=float(np.sum(probs[fvals < fx])),
        q_leq=float(np.sum(probs[fvals <= fx])),
    )
