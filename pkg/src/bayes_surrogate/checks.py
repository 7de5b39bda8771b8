"""Fast self-checks against independent oracles, shared by ``validate`` and the test-suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import neuralnet as nn
from .core import PriorSpec
from .sampler import NsConfig, lhc_sample, nested_sampling

GAUSS_CENTER = (0.5, 0.5)
GAUSS_VAR = 0.01
# Gaussian mass lies (to ~1e-200) inside the unit box, so the evidence is the full integral.
GAUSS_LOG_Z = math.log(2.0 * math.pi * GAUSS_VAR)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    value: float = math.nan


def gaussian_box_loglike(theta) -> float:
    d = np.asarray(theta, dtype=float) - GAUSS_CENTER
    return float(-0.5 * np.dot(d, d) / GAUSS_VAR)


def evidence_oracle(seed: int, n_live: int = 300, **ns) -> tuple[float, float]:
    """``(|lnZ_est - lnZ_true|, 3 sqrt(H / n_live))`` for one run on the Gaussian-in-box problem."""
    prior = PriorSpec.uniform([(0.0, 1.0), (0.0, 1.0)])
    res = nested_sampling(gaussian_box_loglike, prior, NsConfig(n_live=n_live, seed=seed, **ns))
    return abs(res.log_evidence - GAUSS_LOG_Z), 3.0 * math.sqrt(res.information / n_live)


def check_evidence(seed: int = 0) -> CheckResult:
    err, tol = evidence_oracle(seed)
    return CheckResult("evidence oracle", err < tol,
                       f"|lnZ_est - lnZ_true| = {err:.4f} (tolerance {tol:.4f})", err)


def gradient_check(net: nn.ComponentNet, rng: np.random.Generator, n_probe: int = 100,
                   batch: int = 4, step: float = 1e-5, corrupt: bool = False) -> tuple[float, int]:
    """Compare backprop against central differences on ``n_probe`` random parameters.

    Dropout masks are drawn once and frozen for both paths.  Returns the worst
    relative error over probes whose gradient magnitude is at least 1e-3 and the
    number of probes failing the combined rule (relative error < 1e-4, or
    absolute error < 1e-7 for smaller gradients).  ``corrupt`` perturbs the
    analytic gradient as a negative control.
    """
    x = rng.normal(size=(batch, net.n_in))
    target = rng.normal(size=(batch, net.n_out))
    y, cache = nn.forward(net, x, "train", rng=rng)
    grad = nn.backward(net, cache, 2.0 * (y - target) / y.size)
    if corrupt:
        grad = grad * 1.01 + 1e-3
    worst, failures = 0.0, 0
    for idx in rng.choice(net.n_params, size=min(n_probe, net.n_params), replace=False):
        fd = nn.finite_diff_grad(net, x, target, int(idx), step, masks=cache.masks)
        g = float(grad[idx])
        err = abs(g - fd)
        scale = max(abs(g), abs(fd))
        if scale >= 1e-3:
            rel = err / scale
            worst = max(worst, rel)
            failures += rel >= 1e-4
        else:
            failures += err >= 1e-7
    return worst, failures


def check_gradients(seed: int = 0, corrupt: bool = False) -> CheckResult:
    rng = np.random.default_rng(seed)
    net = nn.build_component_net(2, 1, 3, rng, dtype=np.float64)
    worst, failures = gradient_check(net, rng, corrupt=corrupt)
    return CheckResult("gradient check", failures == 0,
                       f"worst relative error {worst:.2e}, {failures} of 100 probes failing", worst)


def lhc_occupancy(samples: np.ndarray, prior: PriorSpec) -> np.ndarray:
    """Count of samples in each of ``n`` equal strata, per dimension: shape ``(J, n)``."""
    n = samples.shape[0]
    u = (samples - prior.lower) / (prior.upper - prior.lower)
    idx = np.clip(np.floor(u * n).astype(int), 0, n - 1)
    return np.stack([np.bincount(idx[:, j], minlength=n) for j in range(samples.shape[1])])


def check_lhc(seed: int = 0, n: int = 500) -> CheckResult:
    prior = PriorSpec.uniform([(0.0, 15.0), (0.0, 15.0), (-1.0, 3.0)])
    occ = lhc_occupancy(lhc_sample(n, prior, np.random.default_rng(seed)), prior)
    ok = bool(np.all(occ == 1))
    return CheckResult("LHC stratification", ok,
                       f"{n} samples, stratum occupancy min {occ.min()} max {occ.max()}")


def run_all(corrupt_gradient: bool = False) -> list[CheckResult]:
    return [check_evidence(), check_gradients(corrupt=corrupt_gradient), check_lhc()]
