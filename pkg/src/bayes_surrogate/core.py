"""Shared data model: parameter vectors, output series, priors, noise model and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import (
    DegenerateInputError,
    DimensionError,
    DomainError,
    InvalidNoiseError,
)

# Gaussian priors are truncated here for bounded-support sampling.
GAUSSIAN_TRUNCATION = 6.0

_LOG_2PI = math.log(2.0 * math.pi)


def as_param_vector(values, J: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite 1-D parameter vector of length ``J``."""
    theta = np.asarray(values, dtype=float)
    if theta.ndim != 1:
        raise DimensionError(f"parameter vector must be 1-D, got shape {theta.shape}")
    if J is not None and theta.shape[0] != J:
        raise DimensionError(f"expected {J} parameters, got {theta.shape[0]}")
    if not np.all(np.isfinite(theta)):
        raise DimensionError("parameter vector has non-finite entries")
    return theta


def as_output_series(values, T: int | None = None, M: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite ``(T, M)`` output matrix."""
    z = np.asarray(values, dtype=float)
    if z.ndim != 2:
        raise DimensionError(f"output series must be 2-D (T, M), got shape {z.shape}")
    if (T is not None and z.shape[0] != T) or (M is not None and z.shape[1] != M):
        raise DimensionError(f"expected output shape ({T}, {M}), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DimensionError("output series has non-finite entries")
    return z


@dataclass(frozen=True)
class ObservedData:
    """Noisy observation ``data`` with per-cell Gaussian noise scale ``noise_sigma``."""

    data: np.ndarray
    noise_sigma: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        sigma = np.asarray(self.noise_sigma, dtype=float)
        if data.ndim != 2 or data.shape != sigma.shape:
            raise DimensionError(
                f"data {data.shape} and noise_sigma {sigma.shape} must be equal 2-D shapes"
            )
        if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
            raise InvalidNoiseError("every noise sigma must be positive and finite")
        data.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "noise_sigma", sigma)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class PriorSpec:
    """Uniform box or diagonal Gaussian prior over the hidden parameters.

    Values are held as tuples so specs compare and hash by value.
    """

    kind: str
    bounds: tuple[tuple[float, float], ...] = ()
    mean: tuple[float, ...] = ()
    std: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "uniform":
            bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
            if not bounds:
                raise DimensionError("uniform prior needs at least one (lower, upper) pair")
            for j, (lo, hi) in enumerate(bounds):
                if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                    raise DomainError(f"bounds[{j}] must satisfy lower < upper")
            object.__setattr__(self, "bounds", bounds)
        elif self.kind == "gaussian":
            mean = tuple(float(m) for m in self.mean)
            std = tuple(float(s) for s in self.std)
            if not mean or len(mean) != len(std):
                raise DimensionError("gaussian prior needs equal-length mean and std")
            if not all(s > 0 and math.isfinite(s) for s in std):
                raise DomainError("gaussian prior variances must be positive")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "std", std)
        else:
            raise DomainError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def uniform(cls, bounds: Sequence[Sequence[float]]) -> "PriorSpec":
        return cls(kind="uniform", bounds=tuple(tuple(b) for b in bounds))

    @classmethod
    def gaussian(cls, mean: Sequence[float], std: Sequence[float]) -> "PriorSpec":
        return cls(kind="gaussian", mean=tuple(mean), std=tuple(std))

    @property
    def ndim(self) -> int:
        return len(self.bounds) if self.kind == "uniform" else len(self.mean)

    @property
    def lower(self) -> np.ndarray:
        if self.kind == "uniform":
            return np.array([b[0] for b in self.bounds])
        return np.asarray(self.mean) - GAUSSIAN_TRUNCATION * np.asarray(self.std)

    @property
    def upper(self) -> np.ndarray:
        if self.kind == "uniform":
            return np.array([b[1] for b in self.bounds])
        return np.asarray(self.mean) + GAUSSIAN_TRUNCATION * np.asarray(self.std)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def log_density(self, theta) -> float:
        """Unnormalised log prior density (constant for the box, -inf outside support)."""
        theta = np.asarray(theta, dtype=float)
        if not self.contains(theta):
            return -math.inf
        if self.kind == "uniform":
            return float(-np.sum(np.log(self.upper - self.lower)))
        mu, sd = np.asarray(self.mean), np.asarray(self.std)
        return float(np.sum(-0.5 * ((theta - mu) / sd) ** 2 - np.log(sd) - 0.5 * _LOG_2PI))

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "bounds": [list(b) for b in self.bounds]}
        return {"kind": "gaussian", "mean": list(self.mean), "std": list(self.std)}


@dataclass(frozen=True)
class MetricPair:
    rmse: float
    pearson: float

    def __post_init__(self):
        if not self.rmse >= 0:
            raise ValueError(f"rmse must be nonnegative, got {self.rmse}")
        if not -1.0 <= self.pearson <= 1.0:
            raise ValueError(f"pearson must lie in [-1, 1], got {self.pearson}")


def _flat_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise DimensionError("empty input")
    return a, b


def rmse(a, b) -> float:
    """Root mean squared difference between two equal-length arrays."""
    a, b = _flat_pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def pearson(a, b) -> float:
    """Sample Pearson correlation, clamped to [-1, 1]."""
    a, b = _flat_pair(a, b)
    if a.size < 2:
        raise DimensionError("pearson needs at least two points")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.dot(da, da)))
    sb = math.sqrt(float(np.dot(db, db)))
    if sa == 0.0 or sb == 0.0:
        raise DegenerateInputError("pearson is undefined for a zero-variance input")
    r = float(np.dot(da, db)) / (sa * sb)
    return min(1.0, max(-1.0, r))


def metric_pair(pred, target) -> MetricPair:
    return MetricPair(rmse=rmse(pred, target), pearson=pearson(pred, target))


def log_likelihood(z, obs: ObservedData) -> float:
    """Gaussian log-likelihood of observation ``obs`` given noise-free output ``z``.

    Summed cell by cell in log space; no per-cell density is ever exponentiated.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != obs.data.shape:
        raise DimensionError(f"output shape {z.shape} does not match observation {obs.data.shape}")
    sigma = obs.noise_sigma
    if not np.all(sigma > 0):
        raise InvalidNoiseError("noise sigma must be positive")
    resid = (obs.data - z) / sigma
    return float(-0.5 * np.sum(_LOG_2PI + 2.0 * np.log(sigma) + resid * resid))


def max_log_likelihood(obs: ObservedData) -> float:
    """Value of :func:`log_likelihood` at zero residual."""
    return float(-0.5 * np.sum(_LOG_2PI + 2.0 * np.log(obs.noise_sigma)))


def weighted_quantiles(x, weights, qs) -> np.ndarray:
    """Quantiles of 1-D samples ``x`` under normalised ``weights``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(x, kind="stable")
    cdf = np.cumsum(w[order])
    cdf /= cdf[-1]
    return np.interp(np.asarray(qs, dtype=float), cdf - 0.5 * w[order] / w.sum(), x[order])


def std_normal_quantile(u):
    return special.ndtri(u)
