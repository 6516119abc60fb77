"""Proposal families: parameter records, samplers, log-densities,
closed-form divergences, and moment-coordinate maps.

Four families are provided: Gaussian, Student (fixed degrees of freedom),
Gaussian mixtures, and Bernoulli products on bit vectors.  Parameter records
are immutable values; samplers take an explicit generator so that substream
derivation stays with the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, FactorizationError
from . import rng as _rng  # noqa: F401  (re-exported for convenience)

__all__ = [
    "GaussianParams",
    "StudentParams",
    "MixtureParams",
    "BernoulliParams",
    "MomentParams",
    "ProposalParams",
    "sample",
    "log_density",
    "gaussian_kl",
    "bernoulli_kl",
    "family_kl",
    "degenerate_width_floor",
    "moment_embed",
    "moment_unembed",
    "responsibilities",
    "gamma_factor",
    "params_to_dict",
    "params_from_dict",
]

_LOG_2PI = math.log(2.0 * math.pi)


def chol_with_jitter(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of S, adding eps*I with escalating eps from
    1e-10*tr(S)/d up to 1e-4*tr(S)/d before giving up."""
    S = np.asarray(S, dtype=float)
    d = S.shape[0]
    if S.shape != (d, d) or not np.allclose(S, S.T, atol=1e-8):
        raise FactorizationError("matrix is not square symmetric")
    base = max(np.trace(S) / d, np.finfo(float).tiny)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    eps = 1e-10 * base
    while eps <= 1e-4 * base:
        try:
            return np.linalg.cholesky(S + eps * np.eye(d))
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise FactorizationError("matrix not positive definite after jitter repair")


def degenerate_width_floor(cov: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Keep a fitted covariance/scale above the width at which draws from it
    collapse onto the floating-point grid around ``center``.

    Below roughly 1e4 ulps of the center's magnitude, sampled points are
    indistinguishable from rounding noise and likelihood comparisons between
    successive fits stop being meaningful.  The shift is applied only once the
    matrix is already within ten orders of magnitude of that resolution, so
    fits at any sane scale are returned bit-unchanged.
    """
    d = cov.shape[-1]
    scale = float(np.max(np.abs(center)))
    floor = (1e4 * np.finfo(float).eps * scale) ** 2
    if floor > 0.0 and float(np.trace(cov)) / d < 1e10 * floor:
        return cov + floor * np.eye(d)
    return cov


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.dim, self.dim):
            raise DomainError("covariance shape mismatch")
        object.__setattr__(self, "chol", chol_with_jitter(self.cov))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class StudentParams:
    """Student location/scale family with fixed dof > 0 (dof=1 is Cauchy)."""

    location: np.ndarray
    scale: np.ndarray
    dof: float

    def __post_init__(self):
        object.__setattr__(self, "location", np.asarray(self.location, dtype=float).reshape(-1))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        if self.dof <= 0:
            raise DomainError("degrees of freedom must be positive")
        if self.scale.shape != (self.dim, self.dim):
            raise DomainError("scale shape mismatch")
        object.__setattr__(self, "chol", chol_with_jitter(self.scale))

    @property
    def dim(self) -> int:
        return self.location.size


@dataclass(frozen=True)
class MixtureParams:
    """Finite mixture with fixed component count."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if len(comps) != w.size or w.size < 1:
            raise DomainError("mixture needs one weight per component")
        if np.any(w < 0) or np.sum(w) <= 0:
            raise DomainError("mixture weights must be non-negative with positive sum")
        object.__setattr__(self, "weights", w / np.sum(w))
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


@dataclass(frozen=True)
class BernoulliParams:
    """Independent Bernoulli bits with probabilities clamped away from 0/1."""

    probs: np.ndarray
    p_min: float = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        floor = self.p_min if self.p_min is not None else 1.0 / p.size ** 2
        object.__setattr__(self, "p_min", float(floor))
        object.__setattr__(self, "probs", np.clip(p, floor, 1.0 - floor))

    @property
    def dim(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class MomentParams:
    """Moment (mean-value) coordinates: E[X], and E[X X^T] for Gaussians
    (``second`` is None for Bernoulli products)."""

    first: np.ndarray
    second: np.ndarray = None
    family: str = "gaussian"


ProposalParams = Union[GaussianParams, StudentParams, MixtureParams, BernoulliParams]


# ---------------------------------------------------------------------------
# sampling

def sample(params: ProposalParams, stream: np.random.Generator, n: int) -> np.ndarray:
    """Draw n i.i.d. points from the proposal, shape (n, dim)."""
    if n < 1:
        raise DomainError("need n >= 1 draws")
    if isinstance(params, GaussianParams):
        z = stream.standard_normal((n, params.dim))
        return params.mean + z @ params.chol.T
    if isinstance(params, StudentParams):
        # Gamma(nu/2, rate nu/2) latent scale, then Gaussian with cov Sigma/z.
        z = stream.gamma(params.dof / 2.0, 2.0 / params.dof, size=n)
        g = stream.standard_normal((n, params.dim))
        return params.location + (g @ params.chol.T) / np.sqrt(z)[:, None]
    if isinstance(params, MixtureParams):
        comp = stream.choice(params.n_components, size=n, p=params.weights)
        out = np.empty((n, params.dim))
        for j in range(params.n_components):
            idx = np.nonzero(comp == j)[0]
            if idx.size:
                out[idx] = sample(params.components[j], stream, idx.size)
        return out
    if isinstance(params, BernoulliParams):
        u = stream.random((n, params.dim))
        return (u < params.probs).astype(float)
    raise DomainError(f"unknown proposal family {type(params).__name__}")


# ---------------------------------------------------------------------------
# densities

def _gaussian_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    d = mean.size
    diff = np.atleast_2d(x) - mean
    y = np.linalg.solve(chol, diff.T)
    maha = np.sum(y * y, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * _LOG_2PI + logdet + maha)


def log_density(params: ProposalParams, x: np.ndarray) -> np.ndarray:
    """Exact log density at each row of x; returns shape (n,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(params, GaussianParams):
        return _gaussian_logpdf(x, params.mean, params.chol)
    if isinstance(params, StudentParams):
        d, nu = params.dim, params.dof
        diff = x - params.location
        y = np.linalg.solve(params.chol, diff.T)
        maha = np.sum(y * y, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(params.chol)))
        const = (math.lgamma((nu + d) / 2.0) - math.lgamma(nu / 2.0)
                 - 0.5 * d * math.log(nu * math.pi) - 0.5 * logdet)
        return const - 0.5 * (nu + d) * np.log1p(maha / nu)
    if isinstance(params, MixtureParams):
        logs = np.stack([log_density(c, x) for c in params.components], axis=1)
        with np.errstate(divide="ignore"):
            logs = logs + np.log(params.weights)
        m = np.max(logs, axis=1, keepdims=True)
        return (m + np.log(np.sum(np.exp(logs - m), axis=1, keepdims=True))).ravel()
    if isinstance(params, BernoulliParams):
        # 0 * log(0) is a vacuous term, not NaN, when a probability sits at an
        # endpoint (possible with p_min = 0)
        p = params.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            on = np.where(x > 0.0, x * np.log(p), 0.0)
            off = np.where(x < 1.0, (1.0 - x) * np.log1p(-p), 0.0)
        return np.sum(on + off, axis=1)
    raise DomainError(f"unknown proposal family {type(params).__name__}")


# ---------------------------------------------------------------------------
# closed-form divergences

def gaussian_kl(p1: GaussianParams, p2: GaussianParams) -> float:
    """KL(N(mu1, S1) || N(mu2, S2)) in closed form."""
    d = p1.dim
    l2 = p2.chol
    y = np.linalg.solve(l2, p1.chol)
    tr = float(np.sum(y * y))
    diff = np.linalg.solve(l2, p2.mean - p1.mean)
    quad = float(diff @ diff)
    logdet1 = 2.0 * np.sum(np.log(np.diag(p1.chol)))
    logdet2 = 2.0 * np.sum(np.log(np.diag(l2)))
    return max(0.0, 0.5 * (tr + quad - d + logdet2 - logdet1))


def bernoulli_kl(p1: BernoulliParams, p2: BernoulliParams) -> float:
    """Componentwise sum of Bernoulli KL divergences."""
    a, b = p1.probs, p2.probs
    terms = a * np.log(a / b) + (1.0 - a) * np.log((1.0 - a) / (1.0 - b))
    return max(0.0, float(np.sum(terms)))


def family_kl(p1: ProposalParams, p2: ProposalParams) -> float:
    """Closed-form KL for exponential families (Gaussian, Bernoulli product)."""
    if isinstance(p1, GaussianParams) and isinstance(p2, GaussianParams):
        return gaussian_kl(p1, p2)
    if isinstance(p1, BernoulliParams) and isinstance(p2, BernoulliParams):
        return bernoulli_kl(p1, p2)
    raise DomainError("closed-form KL only for Gaussian and Bernoulli families")


# ---------------------------------------------------------------------------
# moment coordinates

def moment_embed(params) -> MomentParams:
    """Map natural parameters to moment coordinates (E[X], E[X X^T])."""
    if isinstance(params, GaussianParams):
        mu = params.mean
        return MomentParams(first=mu.copy(), second=params.cov + np.outer(mu, mu),
                            family="gaussian")
    if isinstance(params, BernoulliParams):
        return MomentParams(first=params.probs.copy(), family="bernoulli")
    raise DomainError("moment coordinates defined for Gaussian and Bernoulli only")


def moment_unembed(m: MomentParams):
    """Inverse of moment_embed; Gaussian covariance gets jitter repair if the
    second-moment gap is numerically indefinite."""
    if m.family == "gaussian":
        cov = m.second - np.outer(m.first, m.first)
        cov = 0.5 * (cov + cov.T)
        return GaussianParams(mean=m.first, cov=degenerate_width_floor(cov, m.first))
    if m.family == "bernoulli":
        return BernoulliParams(probs=m.first)
    raise DomainError(f"unknown moment family {m.family!r}")


def sufficient_statistics(params, points: np.ndarray) -> MomentParams:
    """Self-normalization-ready sufficient statistics per point, stacked so the
    caller can take weighted means: Gamma(x) = (x, x x^T) or x."""
    points = np.atleast_2d(points)
    if isinstance(params, GaussianParams):
        second = points[:, :, None] * points[:, None, :]
        return MomentParams(first=points, second=second, family="gaussian")
    if isinstance(params, BernoulliParams):
        return MomentParams(first=points, family="bernoulli")
    raise DomainError("sufficient statistics defined for Gaussian and Bernoulli only")


# ---------------------------------------------------------------------------
# mixture / Student helpers

def responsibilities(mix: MixtureParams, x: np.ndarray) -> np.ndarray:
    """Posterior component probabilities at each row of x, shape (n, J).

    Computed in log-space with max subtraction so far-tail points do not
    underflow.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    logs = np.stack([log_density(c, x) for c in mix.components], axis=1)
    with np.errstate(divide="ignore"):
        logs = logs + np.log(mix.weights)
    m = np.max(logs, axis=1, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise DomainError("all component densities underflow at some point")
    r = np.exp(logs - m)
    return r / np.sum(r, axis=1, keepdims=True)


def gamma_factor(st: StudentParams, x: np.ndarray) -> np.ndarray:
    """Latent-precision posterior mean (nu+d)/(nu + Mahalanobis^2) per point."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    diff = x - st.location
    y = np.linalg.solve(st.chol, diff.T)
    maha = np.sum(y * y, axis=0)
    return (st.dof + st.dim) / (st.dof + maha)


# ---------------------------------------------------------------------------
# serialization

def params_to_dict(params: ProposalParams) -> dict:
    if isinstance(params, GaussianParams):
        return {"family": "gaussian", "mean": params.mean.tolist(), "cov": params.cov.tolist()}
    if isinstance(params, StudentParams):
        return {"family": "student", "location": params.location.tolist(),
                "scale": params.scale.tolist(), "dof": params.dof}
    if isinstance(params, MixtureParams):
        return {"family": "mixture", "weights": params.weights.tolist(),
                "components": [params_to_dict(c) for c in params.components]}
    if isinstance(params, BernoulliParams):
        return {"family": "bernoulli", "probs": params.probs.tolist()}
    raise DomainError(f"unknown proposal family {type(params).__name__}")


def params_from_dict(d: dict) -> ProposalParams:
    fam = d["family"]
    if fam == "gaussian":
        return GaussianParams(mean=np.array(d["mean"]), cov=np.array(d["cov"]))
    if fam == "student":
        return StudentParams(location=np.array(d["location"]), scale=np.array(d["scale"]),
                             dof=float(d["dof"]))
    if fam == "mixture":
        return MixtureParams(weights=np.array(d["weights"]),
                             components=tuple(params_from_dict(c) for c in d["components"]))
    if fam == "bernoulli":
        return BernoulliParams(probs=np.array(d["probs"]))
    raise DomainError(f"unknown proposal family {fam!r}")
