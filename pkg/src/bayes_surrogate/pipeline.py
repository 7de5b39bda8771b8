"""Three-phase estimation pipeline and the experiments built on it.

Phase 1 samples the posterior with the real simulator (or skips that for pure
LHC training data), phase 2 trains and cross-validates a surrogate on the
collected simulator runs, and phase 3 samples the posterior again with the
surrogate standing in for the simulator.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ObservedData, PriorSpec, log_likelihood, metric_pair, MetricPair, rmse
from .errors import DimensionError, DomainError, PipelineError
from .sampler import (
    NestedRunResult,
    NsConfig,
    PosteriorSummary,
    lhc_sample,
    nested_sampling,
    posterior_mean,
    posterior_resample,
    posterior_summary,
)
from .simulators import CachingSimulator, ToyConstants, make_observation, make_simulator
from .surrogate import TRAINERS, TrainConfig, TrainingSet, save_model, surrogate_loglike

log = logging.getLogger(__name__)

SCHEMES = ("lhc", "posterior", "mixed")
MODEL_KINDS = tuple(TRAINERS)


def phase_rng(master_seed: int, phase: str) -> np.random.Generator:
    """Independent stream for one named phase of an experiment."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, zlib.crc32(phase.encode())]))


def phase_seed(master_seed: int, phase: str) -> int:
    return int(phase_rng(master_seed, phase).integers(2**63 - 1))


@dataclass(frozen=True)
class ExperimentConfig:
    simulator: str = "bivariate"
    T: int = 10
    delay_per_call: float = 0.0
    toy: ToyConstants = ToyConstants()
    prior: PriorSpec = PriorSpec.uniform([(0.0, 15.0), (0.0, 15.0)])
    truth: tuple[float, ...] = (10.0, 10.0)
    noise_frac: float = 0.05
    scheme: str = "mixed"
    n_train: int = 2000
    model: str = "drn"
    train: TrainConfig = TrainConfig()
    ns_phase1: NsConfig = NsConfig()
    ns_phase3: NsConfig = NsConfig()
    k_folds: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "truth", tuple(float(v) for v in self.truth))
        sim = self.make_simulator()
        J = sim.spec.J
        if self.prior.ndim != J or len(self.truth) != J:
            raise DimensionError(f"{self.simulator} takes {J} parameters; prior and truth must match")
        if not self.prior.contains(self.truth):
            raise DomainError("ground truth lies outside the prior support")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}")
        if self.model not in MODEL_KINDS:
            raise DomainError(f"model must be one of {MODEL_KINDS}")
        if not self.noise_frac > 0:
            raise DomainError("noise_frac must be positive")
        if self.k_folds < 2:
            raise DomainError("k_folds must be at least 2")
        if self.n_train < self.k_folds:
            raise DomainError("n_train must be at least k_folds")
        if self.scheme == "mixed" and self.n_train % 2:
            raise DomainError("the mixed scheme needs an even n_train")

    def make_simulator(self):
        return make_simulator(self.simulator, self.T, self.delay_per_call, self.toy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prior"] = self.prior.to_dict()
        d["truth"] = list(self.truth)
        return d


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    n_train: int
    n_test: int
    test: MetricPair
    train: MetricPair

    @property
    def rmse(self) -> float:
        return self.test.rmse

    @property
    def pearson(self) -> float:
        return self.test.pearson


@dataclass
class Timings:
    prepT: float = 0.0
    phase1T: float = 0.0
    cvT: float = 0.0
    trainT: float = 0.0
    execT: float = 0.0


@dataclass
class PipelineReport:
    config: ExperimentConfig
    complete: bool = False
    failed_phase: str | None = None
    error: str | None = None
    folds: list[FoldMetrics] = field(default_factory=list)
    estimation_rmse: float | None = None
    estimation_rmse_map: float | None = None
    phase1: PosteriorSummary | None = None
    phase3: PosteriorSummary | None = None
    phase1_result: NestedRunResult | None = None
    phase3_result: NestedRunResult | None = None
    timings: Timings = field(default_factory=Timings)
    n_like_evals_phase1: int = 0
    n_like_evals_phase3: int = 0
    simulator_requests: int = 0
    simulator_executions: int = 0
    observation: ObservedData | None = None
    model: object | None = None

    @property
    def cv_rmse(self) -> float:
        return float(np.mean([f.rmse for f in self.folds])) if self.folds else math.nan

    @property
    def cv_pearson(self) -> float:
        return float(np.mean([f.pearson for f in self.folds])) if self.folds else math.nan

    def to_dict(self) -> dict:
        def summary(s, res):
            if s is None:
                return None
            d = s.to_dict()
            d.update(log_evidence=res.log_evidence, log_evidence_error=res.log_evidence_error,
                     information=res.information, iterations=res.iterations,
                     n_like_evals=res.n_like_evals, wall_time=res.wall_time, converged=res.converged)
            return d

        return {
            "complete": self.complete,
            "failed_phase": self.failed_phase,
            "error": self.error,
            "config": self.config.to_dict(),
            "folds": [{"fold": f.fold, "n_train": f.n_train, "n_test": f.n_test,
                       "test_rmse": f.test.rmse, "test_pearson": f.test.pearson,
                       "train_rmse": f.train.rmse, "train_pearson": f.train.pearson}
                      for f in self.folds],
            "cv_mean_rmse": self.cv_rmse if self.folds else None,
            "cv_mean_pearson": self.cv_pearson if self.folds else None,
            "estimation_rmse": self.estimation_rmse,
            "estimation_rmse_map": self.estimation_rmse_map,
            "phase1": summary(self.phase1, self.phase1_result),
            "phase3": summary(self.phase3, self.phase3_result),
            "timings": asdict(self.timings),
            "n_like_evals": {"phase1": self.n_like_evals_phase1, "phase3": self.n_like_evals_phase3},
            "simulator": {"requests": self.simulator_requests, "executions": self.simulator_executions},
        }


# ---------------------------------------------------------------------------
# Phases

def observe(cfg: ExperimentConfig) -> ObservedData:
    """The single noisy observation used by every phase of an experiment."""
    z = cfg.make_simulator().fn(np.asarray(cfg.truth))
    return make_observation(z, cfg.noise_frac, phase_rng(cfg.seed, "observation"))


def simulator_loglike(simulator, obs: ObservedData) -> Callable:
    return lambda theta: log_likelihood(simulator(theta), obs)


def ns_config(cfg: ExperimentConfig, phase: str) -> NsConfig:
    """Sampler settings for ``phase``; both phases share one seed so their runs are matched."""
    ns = cfg.ns_phase1 if phase == "phase1" else cfg.ns_phase3
    return replace(ns, seed=phase_seed(cfg.seed, "nested-sampling"))


def collect_training_data(cfg: ExperimentConfig, obs: ObservedData, simulator: CachingSimulator,
                          rng: np.random.Generator, progress=None):
    """Training records under ``cfg.scheme``; returns ``(TrainingSet, phase-1 result or None)``.

    Posterior draws come from a phase-1 nested-sampling run on ``simulator``
    and are resampled with replacement.  Every record's outputs are obtained by
    calling ``simulator`` on its inputs.
    """
    n_lhc = {"lhc": cfg.n_train, "posterior": 0, "mixed": cfg.n_train // 2}[cfg.scheme]
    n_post = cfg.n_train - n_lhc
    thetas, tags, phase1 = [], [], None
    if n_lhc:
        thetas.append(lhc_sample(n_lhc, cfg.prior, rng))
        tags += ["lhc"] * n_lhc
    if n_post:
        phase1 = nested_sampling(simulator_loglike(simulator, obs), cfg.prior,
                                 ns_config(cfg, "phase1"), progress)
        thetas.append(posterior_resample(phase1, n_post, rng))
        tags += ["posterior"] * n_post
    inputs = np.vstack(thetas)
    outputs = np.stack([simulator(theta) for theta in inputs])
    return TrainingSet(inputs, outputs, tuple(tags)), phase1


def fold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled split of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if k < 2 or n < k:
        raise DomainError(f"need 2 <= k <= n, got k={k}, n={n}")
    return np.array_split(rng.permutation(n), k)


def kfold_cv(data: TrainingSet, k: int, trainer: Callable, rng: np.random.Generator) -> list[FoldMetrics]:
    """Train on ``k - 1`` folds and score flattened predictions on the held-out fold, for each fold.

    ``trainer(data, rng=...)`` must return a model with ``predict_batch``.
    """
    folds = fold_indices(len(data), k, rng)
    fold_rngs = rng.spawn(k)
    out = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        train, test = data.subset(train_idx), data.subset(test_idx)
        model = trainer(train, rng=fold_rngs[i])
        out.append(FoldMetrics(
            fold=i, n_train=len(train), n_test=len(test),
            test=metric_pair(model.predict_batch(test.inputs), test.outputs),
            train=metric_pair(model.predict_batch(train.inputs), train.outputs),
        ))
        log.info("fold %d/%d: test rmse %.4g pearson %.4f", i + 1, k, out[-1].rmse, out[-1].pearson)
    return out


def estimation_rmse(result: NestedRunResult, truth) -> float:
    return rmse(posterior_mean(result), truth)


def make_trainer(cfg: ExperimentConfig, kind: str | None = None) -> Callable:
    return partial(TRAINERS[kind or cfg.model], cfg=cfg.train)


def run_pipeline(cfg: ExperimentConfig, progress=None) -> PipelineReport:
    """Run all three phases; a failure raises :class:`PipelineError` carrying the partial report."""
    report = PipelineReport(config=cfg)
    phase = "observation"
    try:
        obs = report.observation = observe(cfg)
        simulator = CachingSimulator(cfg.make_simulator())

        phase = "collect"
        start = time.perf_counter()
        data, phase1 = collect_training_data(cfg, obs, simulator, phase_rng(cfg.seed, "collect"), progress)
        report.timings.prepT = time.perf_counter() - start
        report.simulator_requests = simulator.requests
        report.simulator_executions = simulator.executions
        if phase1 is not None:
            report.phase1_result = phase1
            report.phase1 = posterior_summary(phase1, cfg.prior)
            report.n_like_evals_phase1 = phase1.n_like_evals
            report.timings.phase1T = phase1.wall_time
        log.info("collected %d records in %.1fs", len(data), report.timings.prepT)

        phase = "cross-validation"
        trainer = make_trainer(cfg)
        start = time.perf_counter()
        report.folds = kfold_cv(data, cfg.k_folds, trainer, phase_rng(cfg.seed, "cv"))
        report.timings.cvT = time.perf_counter() - start

        phase = "train"
        start = time.perf_counter()
        model = report.model = trainer(data, rng=phase_rng(cfg.seed, "train"))
        report.timings.trainT = time.perf_counter() - start

        phase = "phase3"
        phase3 = nested_sampling(partial(surrogate_loglike, model, obs=obs), cfg.prior,
                                 ns_config(cfg, "phase3"), progress)
        report.phase3_result = phase3
        report.timings.execT = phase3.wall_time
        report.n_like_evals_phase3 = phase3.n_like_evals
        report.phase3 = posterior_summary(phase3, cfg.prior)
        report.estimation_rmse = estimation_rmse(phase3, cfg.truth)
        report.estimation_rmse_map = rmse(report.phase3.map_theta, cfg.truth)
        report.complete = True
    except Exception as exc:
        report.failed_phase = phase
        report.error = f"{type(exc).__name__}: {exc}"
        raise PipelineError(f"pipeline failed during {phase}: {exc}", report) from exc
    return report


# ---------------------------------------------------------------------------
# Experiments

def _map_cells(fn, cells, jobs: int):
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def _sweep_cell(cell):
    cfg, scheme, eta = cell
    row = {"scheme": scheme, "eta": eta, "mean_rmse": None, "mean_pearson": None,
           "estimation_rmse": None, "status": "ok"}
    try:
        rep = run_pipeline(replace(cfg, scheme=scheme, train=replace(cfg.train, complexity_eta=eta)))
        row.update(mean_rmse=rep.cv_rmse, mean_pearson=rep.cv_pearson,
                   estimation_rmse=rep.estimation_rmse)
    except Exception as exc:
        row["status"] = f"failed: {exc}"
    return row


def eta_sweep(cfg: ExperimentConfig, etas: Sequence[int], schemes: Sequence[str],
              jobs: int = 1) -> list[dict]:
    """One full pipeline run per (scheme, eta) cell, all sharing ``cfg``'s observation and seeds."""
    if not etas or not schemes:
        raise DomainError("eta and scheme grids must be nonempty")
    for s in schemes:
        if s not in SCHEMES:
            raise DomainError(f"unknown scheme {s!r}")
    cells = [(cfg, s, int(e)) for s in schemes for e in etas]
    return _map_cells(_sweep_cell, cells, jobs)


def _curve_cell(cell):
    cfg, data, size = cell
    folds = kfold_cv(data.subset(np.arange(size)), cfg.k_folds, make_trainer(cfg),
                     phase_rng(cfg.seed, f"curve-{size}"))
    row = {"size": size}
    for part in ("train", "test"):
        for metric in ("rmse", "pearson"):
            vals = np.array([getattr(getattr(f, part), metric) for f in folds])
            row[f"{part}_{metric}_mean"] = float(vals.mean())
            row[f"{part}_{metric}_2std"] = float(2.0 * vals.std(ddof=1))
    return row


def learning_curve(cfg: ExperimentConfig, sizes: Sequence[int], jobs: int = 1) -> list[dict]:
    """CV metrics on nested prefixes of one shuffled master dataset, with mean and 2 std bands."""
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise DomainError("sizes must be nonempty")
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise DomainError("sizes must be strictly ascending")
    if sizes[0] < cfg.k_folds:
        raise DomainError("every size must be at least k_folds")
    n_max = sizes[-1] + (sizes[-1] % 2 if cfg.scheme == "mixed" else 0)
    master_cfg = replace(cfg, n_train=n_max)
    obs = observe(master_cfg)
    simulator = CachingSimulator(master_cfg.make_simulator())
    data, _ = collect_training_data(master_cfg, obs, simulator, phase_rng(cfg.seed, "collect"))
    data = data.subset(phase_rng(cfg.seed, "curve-order").permutation(len(data)))
    return _map_cells(_curve_cell, [(cfg, data, s) for s in sizes], jobs)


# ---------------------------------------------------------------------------
# Artifacts

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_table(path, rows: list[dict]) -> None:
    header = list(rows[0]) if rows else []
    write_csv(path, header, ([r[h] for h in header] for r in rows))


def write_samples(path, result: NestedRunResult) -> None:
    J = result.thetas.shape[1]
    header = [f"theta_{j + 1}" for j in range(J)] + ["log_like", "log_weight", "importance"]
    rows = (list(t) + [ll, lw, p] for t, ll, lw, p in
            zip(result.thetas, result.log_likes, result.log_weights, result.importance))
    write_csv(path, header, rows)


def write_metrics(path, folds: Sequence[FoldMetrics]) -> None:
    write_csv(path, ["fold", "n_train", "n_test", "test_rmse", "test_pearson", "train_rmse", "train_pearson"],
              ([f.fold, f.n_train, f.n_test, f.test.rmse, f.test.pearson, f.train.rmse, f.train.pearson]
               for f in folds))


def write_triangle(path, summaries: dict[str, PosteriorSummary]) -> None:
    """1-D and 2-D histogram bins of each posterior; ``j``/``bin_j`` are blank for 1-D rows."""
    rows = []
    for name, s in summaries.items():
        for i, (edges, hist) in enumerate(zip(s.edges, s.hist1d)):
            for b, w in enumerate(hist):
                rows.append([name, "1d", i + 1, None, b, None, edges[b], edges[b + 1], None, None, w])
        for (i, j), hist in s.hist2d.items():
            ei, ej = s.edges[i], s.edges[j]
            for bi in range(hist.shape[0]):
                for bj in range(hist.shape[1]):
                    rows.append([name, "2d", i + 1, j + 1, bi, bj, ei[bi], ei[bi + 1],
                                 ej[bj], ej[bj + 1], hist[bi, bj]])
    write_csv(path, ["phase", "kind", "i", "j", "bin_i", "bin_j", "lo_i", "hi_i", "lo_j", "hi_j",
                     "weight"], rows)


def write_report_artifacts(report: PipelineReport, out_dir) -> None:
    """report.json plus whatever CSV and model files the report has data for."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    if report.folds:
        write_metrics(out / "metrics.csv", report.folds)
    if report.phase1_result is not None:
        write_samples(out / "samples_phase1.csv", report.phase1_result)
    if report.phase3_result is not None:
        write_samples(out / "samples_phase3.csv", report.phase3_result)
    summaries = {k: v for k, v in (("phase1", report.phase1), ("phase3", report.phase3)) if v is not None}
    if summaries:
        write_triangle(out / "triangle.csv", summaries)
    if report.model is not None:
        save_model(report.model, out / "model.json")
