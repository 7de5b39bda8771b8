"""Parameter-space exploration: Latin hypercube designs and nested sampling.

The nested sampler follows the classic deterministic-shrinkage scheme: the prior
volume after ``i`` replacements is ``X_i = exp(-i / n_live)``, each dead point
carries the trapezoid weight ``(X_{i-1} - X_{i+1}) / 2``, and the live set left
at termination contributes ``X_I / n_live`` per point.  New points are drawn
uniformly from a single enlarged bounding ellipsoid fitted to the live set in
unit-cube coordinates.  All evidence arithmetic is done in log space.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, ndtr

from .core import GAUSSIAN_TRUNCATION, PriorSpec, std_normal_quantile, weighted_quantiles
from .errors import (
    ConstrainedDrawError,
    DegenerateLiveSetError,
    DimensionError,
    DomainError,
    EmptyResultError,
    InvalidLikelihoodError,
    UnsupportedPriorError,
)

logger = logging.getLogger(__name__)

TERMINATION_RULES = ("peak", "remaining")

# Unit-cube limits corresponding to the +/- 6 sigma Gaussian truncation.
_U_LO = float(ndtr(-GAUSSIAN_TRUNCATION))
_U_HI = float(ndtr(GAUSSIAN_TRUNCATION))

_DRAW_BATCH = 64


# ---------------------------------------------------------------------------
# Designs and transforms

def lhc_sample(n: int, prior: PriorSpec, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube design of ``n`` points over a uniform-box prior.

    Each dimension's range is cut into ``n`` equal strata; every stratum holds
    exactly one point, placed uniformly within it, with the stratum order
    permuted independently per dimension.  Returns an ``(n, J)`` array.
    """
    if prior.kind != "uniform":
        raise UnsupportedPriorError("Latin hypercube sampling needs a uniform-box prior")
    if n < 1:
        raise DomainError("n must be at least 1")
    J = prior.ndim
    strata = np.stack([rng.permutation(n) for _ in range(J)], axis=1)
    u = (strata + rng.random((n, J))) / n
    return prior.lower + u * (prior.upper - prior.lower)


def prior_transform(u, prior: PriorSpec) -> np.ndarray:
    """Map unit-cube coordinates to parameter space (works row-wise on 2-D input)."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != prior.ndim:
        raise DimensionError(f"expected {prior.ndim} coordinates, got {u.shape[-1]}")
    if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
        raise DomainError("unit-cube coordinates must lie in [0, 1]")
    if prior.kind == "uniform":
        return prior.lower + u * (prior.upper - prior.lower)
    z = std_normal_quantile(np.clip(u, _U_LO, _U_HI))
    z = np.clip(z, -GAUSSIAN_TRUNCATION, GAUSSIAN_TRUNCATION)
    return np.asarray(prior.mean) + np.asarray(prior.std) * z


# ---------------------------------------------------------------------------
# Bounding ellipsoid and constrained drawing

@dataclass(frozen=True)
class Ellipsoid:
    """The set ``{x : (x - center)^T shape^{-1} (x - center) <= 1}``."""

    center: np.ndarray
    shape: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of ``shape``

    @property
    def ndim(self) -> int:
        return self.center.shape[0]

    def mahalanobis(self, x) -> np.ndarray:
        """Squared scaled distance of each row of ``x`` from the center."""
        d = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        y = linalg.solve_triangular(self.chol, d.T, lower=True, check_finite=False)
        return np.sum(y * y, axis=0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` points drawn uniformly from the ellipsoid's interior."""
        z = rng.standard_normal((n, self.ndim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = rng.random(n) ** (1.0 / self.ndim)
        return self.center + (z * r[:, None]) @ self.chol.T


def fit_bounding_ellipsoid(points, erf: float = 0.8) -> Ellipsoid:
    """Ellipsoid enclosing all ``points``, then enlarged in volume by ``1 / erf``.

    The shape is the sample covariance scaled so the farthest point sits on the
    boundary, then multiplied by ``(1 / erf) ** (2 / J)`` (linear factor
    ``(1 / erf) ** (1 / J)``).
    """
    pts = np.asarray(points, dtype=float)
    n, J = pts.shape
    if n <= J:
        raise DegenerateLiveSetError(f"need more than {J} points to fit an ellipsoid, got {n}")
    if not 0.0 < erf <= 1.0:
        raise DomainError("erf must lie in (0, 1]")
    center = pts.mean(axis=0)
    cov = np.atleast_2d(np.cov(pts, rowvar=False))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(cov) / J
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(J))
        except np.linalg.LinAlgError:
            raise DegenerateLiveSetError("live-point covariance is singular") from None
        cov = cov + jitter * np.eye(J)
    y = linalg.solve_triangular(chol, (pts - center).T, lower=True, check_finite=False)
    scale = float(np.max(np.sum(y * y, axis=0)))
    if not scale > 0.0:
        raise DegenerateLiveSetError("all live points coincide")
    scale *= (1.0 / erf) ** (2.0 / J)
    return Ellipsoid(center=center, shape=cov * scale, chol=chol * math.sqrt(scale))


class Draw(NamedTuple):
    theta: np.ndarray
    log_like: float
    n_evals: int
    u: np.ndarray


def _checked(log_like) -> float:
    value = float(log_like)
    if not math.isfinite(value):
        raise InvalidLikelihoodError(f"log-likelihood returned non-finite value {value}")
    return value


def draw_constrained(ellipsoid: Ellipsoid, prior: PriorSpec, loglike_fn: Callable,
                     threshold: float, rng: np.random.Generator,
                     max_tries: int = 10_000) -> Draw:
    """Rejection-sample the ellipsoid until ``loglike_fn(theta) > threshold``.

    The ellipsoid lives in unit-cube coordinates; candidates outside the cube are
    discarded without a likelihood call.  Candidates are examined in draw order so
    the accepted point is always the lowest-index success.
    """
    if max_tries < 1:
        raise DomainError("max_tries must be at least 1")
    tries = 0
    n_evals = 0
    while tries < max_tries:
        batch = ellipsoid.sample(rng, min(_DRAW_BATCH, max_tries - tries))
        inside = np.all((batch >= 0.0) & (batch <= 1.0), axis=1)
        for u, ok in zip(batch, inside):
            tries += 1
            if not ok:
                continue
            theta = prior_transform(u, prior)
            value = _checked(loglike_fn(theta))
            n_evals += 1
            if value > threshold:
                return Draw(theta, value, n_evals, u)
    raise ConstrainedDrawError(
        f"no point above log-likelihood {threshold:.6g} in {max_tries} draws",
        {"n_evals": n_evals, "threshold": threshold},
    )


# ---------------------------------------------------------------------------
# Nested sampling

@dataclass(frozen=True)
class NsConfig:
    n_live: int = 300
    tol: float = 0.5
    erf: float = 0.8
    max_iter: int = 100_000
    seed: int = 0
    termination: str = "peak"
    max_tries: int = 10_000

    def __post_init__(self):
        if self.n_live < 2:
            raise DomainError("n_live must be at least 2")
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if not 0.0 < self.erf <= 1.0:
            raise DomainError("erf must lie in (0, 1]")
        if self.max_iter < 1 or self.max_tries < 1:
            raise DomainError("max_iter and max_tries must be at least 1")
        if self.termination not in TERMINATION_RULES:
            raise DomainError(f"termination must be one of {TERMINATION_RULES}")


@dataclass
class LiveSet:
    points: np.ndarray
    u: np.ndarray
    log_likes: np.ndarray


class WeightedSample(NamedTuple):
    theta: np.ndarray
    log_like: float
    log_weight: float
    log_importance: float


@dataclass
class NestedRunResult:
    """Dead points in removal order followed by the final live set (ascending likelihood).

    ``iterations`` counts the dead points; the remaining ``n_live`` rows are the
    live points that supplied the final evidence increment.
    """

    thetas: np.ndarray
    log_likes: np.ndarray
    log_weights: np.ndarray
    log_importance: np.ndarray
    log_evidence: float
    iterations: int
    n_like_evals: int
    wall_time: float
    n_live: int
    converged: bool = True

    @property
    def samples(self) -> list[WeightedSample]:
        return [WeightedSample(t, float(l), float(w), float(p)) for t, l, w, p in
                zip(self.thetas, self.log_likes, self.log_weights, self.log_importance)]

    @property
    def importance(self) -> np.ndarray:
        return np.exp(self.log_importance)

    @property
    def information(self) -> float:
        """KL divergence of posterior from prior, in nats."""
        p = self.importance
        return float(np.sum(p * (self.log_likes - self.log_evidence)))

    @property
    def log_evidence_error(self) -> float:
        return math.sqrt(max(self.information, 0.0) / self.n_live)


def dead_log_weight(i: int, n_live: int) -> float:
    """``ln w_i`` with ``w_i = (X_{i-1} - X_{i+1}) / 2`` and ``X_i = exp(-i / n_live)``."""
    return -(i - 1) / n_live + math.log(0.5) + math.log(-math.expm1(-2.0 / n_live))


def jsonl_progress(stream) -> Callable[[dict], None]:
    """Progress callback writing one JSON record per iteration to ``stream``."""
    def emit(record: dict) -> None:
        stream.write(json.dumps(record) + "\n")
    return emit


def nested_sampling(loglike_fn: Callable, prior: PriorSpec, cfg: NsConfig = NsConfig(),
                    progress: Callable[[dict], None] | None = None) -> NestedRunResult:
    """Run nested sampling of ``loglike_fn`` over ``prior``.

    Stops when ``max(L_live) * X_i < exp(tol) * Z`` (``termination="peak"``) or
    when the remaining-evidence bound falls below ``(exp(tol) - 1) * Z``
    (``termination="remaining"``), or after ``max_iter`` iterations.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n, J = cfg.n_live, prior.ndim
    if n <= J:
        raise DomainError(f"n_live must exceed the dimension ({J})")
    stop_offset = cfg.tol if cfg.termination == "peak" else math.log(math.expm1(cfg.tol))

    u = rng.random((n, J))
    theta = prior_transform(u, prior)
    log_l = np.array([_checked(loglike_fn(t)) for t in theta])
    n_evals = n

    dead_theta, dead_logl, dead_logw = [], [], []
    log_z = -math.inf
    converged = False
    i = 0
    while i < cfg.max_iter:
        i += 1
        worst = int(np.argmin(log_l))  # lowest index on ties
        log_li = float(log_l[worst])
        log_w = dead_log_weight(i, n)
        log_z = np.logaddexp(log_z, log_li + log_w)
        dead_theta.append(theta[worst].copy())
        dead_logl.append(log_li)
        dead_logw.append(log_w)

        try:
            ell = fit_bounding_ellipsoid(u, cfg.erf)
            draw = draw_constrained(ell, prior, loglike_fn, log_li, rng, cfg.max_tries)
        except (ConstrainedDrawError, DegenerateLiveSetError) as exc:
            diag = {"iteration": i, "n_like_evals": n_evals, "log_evidence": float(log_z)}
            if isinstance(exc, ConstrainedDrawError):
                diag["n_like_evals"] += exc.diagnostics.get("n_evals", 0)
            raise ConstrainedDrawError(f"nested sampling aborted at iteration {i}: {exc}",
                                       diag) from exc
        n_evals += draw.n_evals
        theta[worst], u[worst], log_l[worst] = draw.theta, draw.u, draw.log_like

        log_x = -i / n
        max_ll = float(np.max(log_l))
        if progress is not None:
            progress({"iteration": i, "log_like": log_li, "log_volume": log_x,
                      "log_evidence": float(log_z)})
        if max_ll + log_x < stop_offset + log_z:
            converged = True
            break

    iterations = i
    order = np.argsort(log_l, kind="stable")
    live_logw = -iterations / n - math.log(n)
    log_z = float(np.logaddexp(log_z, logsumexp(log_l) + live_logw))

    thetas = np.vstack([np.array(dead_theta).reshape(-1, J), theta[order]])
    log_likes = np.concatenate([dead_logl, log_l[order]])
    log_weights = np.concatenate([dead_logw, np.full(n, live_logw)])
    log_imp = log_likes + log_weights - log_z
    if not converged:
        logger.warning("nested sampling hit max_iter=%d before termination", cfg.max_iter)
    return NestedRunResult(
        thetas=thetas, log_likes=log_likes, log_weights=log_weights,
        log_importance=log_imp, log_evidence=log_z, iterations=iterations,
        n_like_evals=n_evals, wall_time=time.perf_counter() - start, n_live=n,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Posterior products

def _normalised_weights(result: NestedRunResult) -> np.ndarray:
    if result.thetas.shape[0] == 0:
        raise EmptyResultError("nested-sampling result holds no samples")
    p = np.exp(result.log_importance - np.max(result.log_importance))
    return p / p.sum()


def posterior_resample(result: NestedRunResult, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` equal-weight posterior draws (multinomial, with replacement)."""
    p = _normalised_weights(result)
    if n < 1:
        raise DomainError("n must be at least 1")
    idx = rng.choice(p.shape[0], size=n, replace=True, p=p)
    return result.thetas[idx].copy()


def posterior_mean(result: NestedRunResult) -> np.ndarray:
    p = _normalised_weights(result)
    return p @ result.thetas


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    std: np.ndarray
    quantiles: np.ndarray  # rows: 16th, 50th, 84th percentile
    map_theta: np.ndarray
    edges: list[np.ndarray]
    hist1d: list[np.ndarray]
    hist2d: dict[tuple[int, int], np.ndarray]

    def interval_width(self) -> np.ndarray:
        """Width of the central 68% credible interval per parameter."""
        return self.quantiles[2] - self.quantiles[0]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "q16": self.quantiles[0].tolist(),
            "q50": self.quantiles[1].tolist(),
            "q84": self.quantiles[2].tolist(),
            "map": self.map_theta.tolist(),
        }


def posterior_summary(result: NestedRunResult, prior: PriorSpec, bins: int = 50) -> PosteriorSummary:
    """Weighted mean, spread, MAP point and histogram data for a triangle plot."""
    p = _normalised_weights(result)
    x = result.thetas
    J = x.shape[1]
    mean = p @ x
    std = np.sqrt(np.maximum(p @ (x - mean) ** 2, 0.0))
    quantiles = np.array([weighted_quantiles(x[:, j], p, [0.16, 0.5, 0.84]) for j in range(J)]).T
    log_post = result.log_likes + np.array([prior.log_density(t) for t in x])
    map_theta = x[int(np.argmax(log_post))].copy()
    lo, hi = prior.lower, prior.upper
    edges = [np.linspace(lo[j], hi[j], bins + 1) for j in range(J)]
    hist1d = [np.histogram(x[:, j], bins=edges[j], weights=p)[0] for j in range(J)]
    hist2d = {}
    for a in range(J):
        for b in range(a + 1, J):
            hist2d[(a, b)] = np.histogram2d(x[:, a], x[:, b], bins=[edges[a], edges[b]],
                                            weights=p)[0]
    return PosteriorSummary(mean, std, quantiles, map_theta, edges, hist1d, hist2d)
