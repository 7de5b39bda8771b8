"""Deterministic forward models and synthetic observations."""

from __future__ import annotations

import functools
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ObservedData, as_output_series, as_param_vector
from .errors import DegenerateNoiseError, DimensionError, DomainError

# Fixed constants of the 8-parameter stand-in simulator.
MULTIFEATURE_DECAY = 0.1 * np.arange(1, 7)
MULTIFEATURE_FREQ = 0.2 + 0.05 * np.arange(1, 7)
MULTIFEATURE_GAMMA = 0.3

# (lower, upper) per parameter for the 8-parameter case, and its ground truth.
MULTIFEATURE_BOUNDS = (
    (0.2, 5.0),
    (0.2, 5.0),
    (0.2, 5.0),
    (0.1, 1.0),
    (0.1, 1.0),
    (0.75, 1.25),
    (0.75, 1.25),
    (0.75, 1.25),
)
MULTIFEATURE_TRUTH = (1.21, 0.3, 3.0, 0.26, 0.64, 1.0, 0.8, 1.2)


@dataclass(frozen=True)
class ToyConstants:
    phi: float = 0.1
    eta_c: float = 5.0


@dataclass(frozen=True)
class SimulatorSpec:
    name: str
    J: int
    M: int
    T: int
    delay_per_call: float = 0.0

    def __post_init__(self):
        if min(self.J, self.M, self.T) < 1:
            raise DimensionError("J, M and T must all be at least 1")
        if self.delay_per_call < 0:
            raise DomainError("delay_per_call must be nonnegative")


def simulate_bivariate(theta, constants: ToyConstants = ToyConstants(), T: int = 10) -> np.ndarray:
    """Two-parameter toy: ``z_t = cos(phi (th1 - t - eta_c)) cos(phi (th2 - t - eta_c))``.

    Returns a ``(T, 1)`` array for ``t = 1..T``.
    """
    th1, th2 = as_param_vector(theta, 2)
    if T < 1:
        raise DimensionError("T must be at least 1")
    t = np.arange(1, T + 1, dtype=float)
    phi, eta = constants.phi, constants.eta_c
    z = np.cos(phi * (th1 - t - eta)) * np.cos(phi * (th2 - t - eta))
    return z[:, None]


def simulate_multifeature(theta, T: int = 10) -> np.ndarray:
    """Eight-parameter, six-feature stand-in with decay plus a shared oscillation.

    ``z[t, m] = theta[m] exp(-lam_m t) + gamma theta[7] cos(omega_m t + theta[6])``
    with ``t = 1..T`` and ``m = 0..5``.
    """
    theta = as_param_vector(theta, 8)
    if T < 1:
        raise DimensionError("T must be at least 1")
    t = np.arange(1, T + 1, dtype=float)[:, None]
    decay = theta[:6] * np.exp(-MULTIFEATURE_DECAY * t)
    wave = MULTIFEATURE_GAMMA * theta[7] * np.cos(MULTIFEATURE_FREQ * t + theta[6])
    return decay + wave


@dataclass
class Simulator:
    """A forward model bound to its spec, with optional artificial per-call delay."""

    spec: SimulatorSpec
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, theta) -> np.ndarray:
        if self.spec.delay_per_call > 0:
            time.sleep(self.spec.delay_per_call)
        return self.fn(theta)


def make_simulator(name: str, T: int = 10, delay_per_call: float = 0.0,
                   constants: ToyConstants | None = None) -> Simulator:
    if name == "bivariate":
        consts = constants or ToyConstants()
        spec = SimulatorSpec(name, J=2, M=1, T=T, delay_per_call=delay_per_call)
        return Simulator(spec, functools.partial(simulate_bivariate, constants=consts, T=T))
    if name == "multifeature":
        spec = SimulatorSpec(name, J=8, M=6, T=T, delay_per_call=delay_per_call)
        return Simulator(spec, functools.partial(simulate_multifeature, T=T))
    raise DomainError(f"unknown simulator {name!r}")


def timed_call(sim: Simulator, theta) -> tuple[np.ndarray, float]:
    start = time.perf_counter()
    z = sim(theta)
    return z, time.perf_counter() - start


@dataclass
class CachingSimulator:
    """Memoise simulator outputs by exact parameter bytes.

    ``requests`` counts every call; ``executions`` counts actual simulator runs.
    Insertion is guarded by a lock so concurrent callers may share one cache.
    """

    simulator: Simulator
    requests: int = 0
    executions: int = 0
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def spec(self) -> SimulatorSpec:
        return self.simulator.spec

    def __call__(self, theta) -> np.ndarray:
        key = np.asarray(theta, dtype=float).tobytes()
        with self._lock:
            self.requests += 1
            hit = self._cache.get(key)
        if hit is not None:
            return hit.copy()
        z = self.simulator(theta)
        z.setflags(write=False)
        with self._lock:
            self.executions += 1
            self._cache.setdefault(key, z)
        return z.copy()


def make_observation(z, noise_frac: float, rng: np.random.Generator) -> ObservedData:
    """Add Gaussian noise scaled per feature to ``noise_frac * mean_t |z[:, m]|``."""
    if not noise_frac > 0:
        raise DomainError("noise_frac must be positive")
    z = as_output_series(z)
    sigma_m = noise_frac * np.mean(np.abs(z), axis=0)
    if np.any(sigma_m <= 0):
        bad = np.flatnonzero(sigma_m <= 0).tolist()
        raise DegenerateNoiseError(f"feature columns {bad} are identically zero")
    sigma = np.broadcast_to(sigma_m, z.shape).copy()
    data = z + sigma * rng.standard_normal(z.shape)
    return ObservedData(data=data, noise_sigma=sigma)
