import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from bayes_surrogate.config import load_config
from bayes_surrogate.errors import DimensionError, DomainError, PipelineError
from bayes_surrogate.pipeline import (
    ExperimentConfig,
    collect_training_data,
    estimation_rmse,
    eta_sweep,
    fold_indices,
    kfold_cv,
    learning_curve,
    observe,
    phase_rng,
    run_pipeline,
    write_report_artifacts,
)
from bayes_surrogate.sampler import NestedRunResult, NsConfig
from bayes_surrogate.simulators import CachingSimulator

from importlib.resources import files

QUICK_PATH = files("bayes_surrogate") / "configs" / "toy_quick.toml"


@pytest.fixture(scope="module")
def quick_cfg():
    return load_config(QUICK_PATH)


@pytest.fixture(scope="module")
def quick_report(quick_cfg):
    return run_pipeline(quick_cfg)


def test_config_validation():
    with pytest.raises(DomainError):
        ExperimentConfig(scheme="random")
    with pytest.raises(DomainError):
        ExperimentConfig(n_train=5, k_folds=10)
    with pytest.raises(DomainError):
        ExperimentConfig(n_train=201)
    with pytest.raises(DomainError):
        ExperimentConfig(truth=(20.0, 1.0))
    with pytest.raises(DimensionError):
        ExperimentConfig(simulator="multifeature")
    ExperimentConfig(n_train=201, scheme="lhc")


@pytest.mark.parametrize("scheme,n_lhc", [("lhc", 40), ("posterior", 0), ("mixed", 20)])
def test_collect_training_data_budget(scheme, n_lhc):
    cfg = ExperimentConfig(scheme=scheme, n_train=40, k_folds=2,
                           ns_phase1=NsConfig(n_live=30))
    sim = CachingSimulator(cfg.make_simulator())
    data, phase1 = collect_training_data(cfg, observe(cfg), sim, phase_rng(0, "collect"))
    assert len(data) == 40
    assert data.tags.count("lhc") == n_lhc
    assert data.tags.count("posterior") == 40 - n_lhc
    assert data.tags[:n_lhc] == ("lhc",) * n_lhc
    extra = phase1.n_like_evals if phase1 is not None else 0
    assert (phase1 is None) == (scheme == "lhc")
    assert sim.requests == 40 + extra
    assert sim.executions <= sim.requests
    for theta, z in zip(data.inputs, data.outputs):
        assert np.array_equal(cfg.make_simulator().fn(theta), z)


@pytest.mark.parametrize("n,k", [(10, 3), (23, 10), (7, 7), (100, 2)])
def test_fold_indices_partition(n, k):
    folds = fold_indices(n, k, np.random.default_rng(0))
    assert len(folds) == k
    joined = np.concatenate(folds)
    assert np.array_equal(np.sort(joined), np.arange(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    with pytest.raises(DomainError):
        fold_indices(3, 4, np.random.default_rng(0))


class _MeanModel:
    def __init__(self, data):
        self.mean = data.outputs.mean(axis=0)

    def predict_batch(self, thetas):
        return np.broadcast_to(self.mean, (len(thetas),) + self.mean.shape)


def test_kfold_cv_leave_one_out():
    cfg = ExperimentConfig(scheme="lhc", n_train=6, k_folds=6)
    data, _ = collect_training_data(cfg, observe(cfg), CachingSimulator(cfg.make_simulator()),
                                    np.random.default_rng(0))
    folds = kfold_cv(data, 6, lambda d, rng: _MeanModel(d), np.random.default_rng(1))
    assert [f.n_test for f in folds] == [1] * 6
    assert all(f.n_train == 5 for f in folds)


def _result_at(mean):
    return NestedRunResult(np.array([mean], dtype=float), np.zeros(1), np.zeros(1), np.zeros(1),
                           0.0, 1, 1, 0.0, 1)


def test_estimation_rmse_examples():
    assert estimation_rmse(_result_at([10.0, 10.0]), (10.0, 10.0)) == 0.0
    r = estimation_rmse(_result_at([10 + 3 / math.sqrt(2), 10 + 4 / math.sqrt(2)]), (10.0, 10.0))
    assert r == pytest.approx(2.5)


def test_quick_pipeline_report(quick_cfg, quick_report):
    rep = quick_report
    assert rep.complete and rep.failed_phase is None
    assert len(rep.folds) == quick_cfg.k_folds
    assert all(v >= 0 for v in vars(rep.timings).values())
    assert rep.simulator_requests == quick_cfg.n_train + rep.n_like_evals_phase1
    assert rep.phase1 is not None and rep.phase3 is not None
    assert rep.estimation_rmse == pytest.approx(
        math.sqrt(np.mean((rep.phase3.mean - np.array(quick_cfg.truth)) ** 2)))
    assert rep.estimation_rmse_map >= 0
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["complete"] and len(d["folds"]) == quick_cfg.k_folds


def test_pipeline_is_reproducible(quick_cfg, quick_report):
    again = run_pipeline(quick_cfg)
    assert [f.test for f in again.folds] == [f.test for f in quick_report.folds]
    assert again.estimation_rmse == quick_report.estimation_rmse
    assert np.array_equal(again.phase3_result.thetas, quick_report.phase3_result.thetas)
    assert again.n_like_evals_phase1 == quick_report.n_like_evals_phase1


def test_report_artifacts(tmp_path, quick_report):
    write_report_artifacts(quick_report, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"report.json", "metrics.csv", "samples_phase1.csv", "samples_phase3.csv",
                     "triangle.csv", "model.json"}
    with open(tmp_path / "samples_phase3.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == quick_report.phase3_result.thetas.shape[0]
    assert sum(float(r["importance"]) for r in rows) == pytest.approx(1.0, abs=1e-9)


def test_failure_yields_partial_report(quick_cfg):
    bad = replace(quick_cfg, ns_phase1=NsConfig(n_live=50, max_tries=1))
    with pytest.raises(PipelineError) as info:
        run_pipeline(bad)
    rep = info.value.report
    assert not rep.complete and rep.failed_phase == "collect"
    assert rep.observation is not None and rep.folds == []


def test_eta_sweep_rows(quick_cfg):
    cfg = replace(quick_cfg, n_train=40, k_folds=2, train=replace(quick_cfg.train, epochs=2),
                  ns_phase1=NsConfig(n_live=20), ns_phase3=NsConfig(n_live=20))
    rows = eta_sweep(cfg, [1, 2], ["lhc", "mixed"])
    assert len(rows) == 4
    assert [(r["scheme"], r["eta"]) for r in rows] == [("lhc", 1), ("lhc", 2), ("mixed", 1), ("mixed", 2)]
    assert all(r["status"] == "ok" for r in rows)
    single = eta_sweep(cfg, [2], ["lhc"])[0]
    direct = run_pipeline(replace(cfg, scheme="lhc", train=replace(cfg.train, complexity_eta=2)))
    assert single["mean_rmse"] == direct.cv_rmse
    with pytest.raises(DomainError):
        eta_sweep(cfg, [], ["lhc"])


def test_learning_curve_rows(quick_cfg):
    cfg = replace(quick_cfg, k_folds=3, train=replace(quick_cfg.train, epochs=2),
                  ns_phase1=NsConfig(n_live=20))
    rows = learning_curve(cfg, [30, 60])
    assert [r["size"] for r in rows] == [30, 60]
    assert set(rows[0]) == {"size"} | {f"{p}_{m}_{s}" for p in ("train", "test")
                                       for m in ("rmse", "pearson") for s in ("mean", "2std")}
    assert all(r["test_rmse_2std"] >= 0 for r in rows)
    with pytest.raises(DomainError):
        learning_curve(cfg, [60, 30])
