import numpy as np
import pytest

from bayes_surrogate import neuralnet as nn
from bayes_surrogate.core import ObservedData, PriorSpec, log_likelihood, max_log_likelihood
from bayes_surrogate.errors import DimensionError, DomainError, EmptyResultError
from bayes_surrogate.sampler import lhc_sample
from bayes_surrogate.simulators import simulate_bivariate
from bayes_surrogate.surrogate import (
    RnnCell,
    TrainConfig,
    TrainingSet,
    drn_predict,
    drn_train,
    load_model,
    ncdnn_train,
    rnn_loss_grad,
    rnn_unroll,
    save_model,
    stdrnn_train,
    surrogate_loglike,
)

QUICK = TrainConfig(epochs=8, minibatch=20, complexity_eta=3)


def toy_data(n, T=10, seed=0):
    prior = PriorSpec.uniform([(0, 15), (0, 15)])
    thetas = lhc_sample(n, prior, np.random.default_rng(seed))
    return TrainingSet(thetas, np.stack([simulate_bivariate(t, T=T) for t in thetas]))


@pytest.fixture(scope="module")
def toy_set():
    return toy_data(300)


@pytest.fixture(scope="module")
def drn(toy_set):
    return drn_train(toy_set, QUICK, np.random.default_rng(1))


def test_training_set_validation():
    with pytest.raises(DimensionError):
        TrainingSet(np.zeros((3, 2)), np.zeros((4, 10, 1)))
    with pytest.raises(DomainError):
        TrainingSet(np.zeros((2, 2)), np.zeros((2, 1, 1)), ("lhc", "bogus"))
    data = TrainingSet(np.zeros((2, 2)), np.zeros((2, 3, 1)))
    assert data.tags == ("lhc", "lhc") and (data.J, data.T, data.M) == (2, 3, 1)
    with pytest.raises(EmptyResultError):
        drn_train(data.subset([0]), QUICK)


def test_drn_structure(drn):
    assert len(drn.components) == 10
    assert drn.n_params == sum(c.n_params for c in drn.components) == 10 * drn.components[0].n_params
    assert all(c.widths == [3, 9, 36, 36, 3, 1] for c in drn.components)
    assert all(np.isfinite(loss).all() and loss[-1] < loss[0] for loss in drn.losses)


def test_drn_single_step_is_plain_regression(toy_set):
    data = TrainingSet(toy_set.inputs, toy_set.outputs[:, :1])
    model = drn_train(data, QUICK, np.random.default_rng(2))
    net = model.components[0]
    xs = nn.standardize_apply(model.input_scaler, data.inputs[:5])
    direct = nn.standardize_invert(model.output_scalers[0],
                                   nn.predict(net, np.hstack([xs, np.zeros((5, 1))])))
    np.testing.assert_array_equal(model.predict_batch(data.inputs[:5])[:, 0], direct)


def test_drn_constant_output_is_learned():
    rng = np.random.default_rng(3)
    thetas = rng.uniform(0, 15, size=(400, 2))
    data = TrainingSet(thetas, np.full((400, 4, 2), 2.5))
    model = drn_train(data, TrainConfig(complexity_eta=3), np.random.default_rng(4))
    held_out = rng.uniform(0, 15, size=(50, 2))
    assert np.max(np.abs(model.predict_batch(held_out) - 2.5)) < 1e-2


def test_drn_cascade_matches_manual_unroll(drn, toy_set):
    theta = toy_set.inputs[17]
    xs = nn.standardize_apply(drn.input_scaler, theta[None, :])
    prev = np.zeros((1, 1))
    manual = []
    for net, scaler in zip(drn.components, drn.output_scalers):
        prev = nn.forward(net, np.hstack([xs, prev]), "infer")[0].astype(float)
        manual.append(nn.standardize_invert(scaler, prev)[0])
    out = drn_predict(drn, theta)
    assert out.shape == (10, 1)
    assert np.array_equal(out, np.array(manual))
    assert np.array_equal(drn.predict(theta), out)


def test_drn_predict_dimension_error(drn):
    with pytest.raises(DimensionError):
        drn_predict(drn, [1.0, 2.0, 3.0])


def test_drn_training_is_deterministic(toy_set):
    a = drn_train(toy_set.subset(range(60)), QUICK, np.random.default_rng(9))
    b = drn_train(toy_set.subset(range(60)), QUICK, np.random.default_rng(9))
    for x, y in zip(a.components, b.components):
        assert np.array_equal(x.params, y.params)
    c = drn_train(toy_set.subset(range(60)), QUICK, np.random.default_rng(10))
    assert not np.array_equal(a.components[0].params, c.components[0].params)


def test_drn_seed_fallback_uses_config_seed(toy_set):
    cfg = TrainConfig(epochs=2, complexity_eta=2, seed=5)
    a = drn_train(toy_set.subset(range(40)), cfg)
    b = drn_train(toy_set.subset(range(40)), cfg, np.random.default_rng(5))
    assert np.array_equal(a.components[3].params, b.components[3].params)


@pytest.mark.parametrize("trainer", [drn_train, ncdnn_train, stdrnn_train])
def test_model_file_roundtrip(tmp_path, toy_set, trainer):
    kwargs = {"complexity_eta": 2} if trainer is ncdnn_train else {}
    model = trainer(toy_set.subset(range(50)), TrainConfig(epochs=2, complexity_eta=2),
                    np.random.default_rng(0), **kwargs)
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    probe = np.random.default_rng(1).uniform(0, 15, size=(100, 2))
    np.testing.assert_allclose(back.predict_batch(probe), model.predict_batch(probe), rtol=0, atol=1e-12)
    assert back.kind == model.kind


def test_ncdnn_shape_and_sizing(toy_set):
    model = ncdnn_train(toy_set.subset(range(50)), TrainConfig(epochs=2), np.random.default_rng(0),
                        complexity_eta=2)
    assert model.net.widths == [2, 4, 16, 16, 20, 10]
    assert model.predict(toy_set.inputs[0]).shape == (10, 1)
    assert np.all(np.isfinite(model.losses[0]))


def test_ncdnn_default_complexity():
    data = toy_data(20, T=3)
    model = ncdnn_train(data, TrainConfig(epochs=1), np.random.default_rng(0))
    assert model.net.widths == [2, 100, 400, 400, 150, 3]


def test_ncdnn_constant_output_is_learned():
    rng = np.random.default_rng(3)
    data = TrainingSet(rng.uniform(0, 15, size=(400, 2)), np.full((400, 3, 2), -1.5))
    model = ncdnn_train(data, TrainConfig(), np.random.default_rng(4), complexity_eta=3)
    assert np.max(np.abs(model.predict_batch(rng.uniform(0, 15, size=(50, 2))) + 1.5)) < 1e-2


def test_rnn_bptt_matches_finite_differences():
    rng = np.random.default_rng(0)
    cell = RnnCell.init(3, 5, 2, rng)
    cell.params += rng.normal(scale=0.1, size=cell.n_params)
    xs = rng.normal(size=(4, 1))
    targets = rng.normal(size=(4, 6, 2))
    _, grad = rnn_loss_grad(cell, xs, targets)
    for idx in range(cell.n_params):
        orig = cell.params[idx]
        cell.params[idx] = orig + 1e-6
        up = rnn_loss_grad(cell, xs, targets)[0]
        cell.params[idx] = orig - 1e-6
        down = rnn_loss_grad(cell, xs, targets)[0]
        cell.params[idx] = orig
        fd = (up - down) / 2e-6
        assert abs(fd - grad[idx]) <= 1e-6 + 1e-5 * abs(fd)


def test_rnn_weight_sharing(toy_set):
    cfg = TrainConfig(epochs=2, complexity_eta=2)
    short = stdrnn_train(TrainingSet(toy_set.inputs[:30], toy_set.outputs[:30, :2]), cfg)
    long = stdrnn_train(toy_set.subset(range(30)), cfg)
    assert short.n_params == long.n_params == (3 + 1) * 6 + (6 + 1) * 1
    preds, hidden = rnn_unroll(long.cell, np.zeros((1, 2)), 10)
    assert preds.shape == (1, 10, 1) and hidden.shape == (1, 10, 6)
    assert long.predict(toy_set.inputs[0]).shape == (10, 1)
    assert long.losses[0][-1] < long.losses[0][0]


def test_surrogate_loglike_maximum_and_monotonicity(drn):
    theta = np.array([10.0, 10.0])
    z = drn.predict(theta)
    sigma = np.full((10, 1), 0.05)
    obs = ObservedData(z, sigma)
    assert surrogate_loglike(drn, theta, obs) == pytest.approx(max_log_likelihood(obs), abs=1e-12)
    shifted = ObservedData(z + np.linspace(0, 0.1, 10)[:, None], sigma)
    further = ObservedData(z + np.linspace(0, 0.2, 10)[:, None], sigma)
    assert surrogate_loglike(drn, theta, further) < surrogate_loglike(drn, theta, shifted)
    assert surrogate_loglike(drn, theta, shifted) == pytest.approx(log_likelihood(z, shifted))
