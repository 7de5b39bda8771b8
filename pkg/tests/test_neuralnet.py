import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayes_surrogate import neuralnet as nn
from bayes_surrogate.checks import gradient_check
from bayes_surrogate.errors import DimensionError, DomainError, InconsistentCacheError


def _count(widths, prelu_links=(1, 2)):
    total = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    return total + sum(widths[k + 1] for k in prelu_links)


def test_component_widths_and_parameter_count(rng):
    net = nn.build_component_net(8, 6, 10, rng)
    assert net.widths == [14, 140, 560, 560, 60, 6]
    assert net.n_params == _count(net.widths) == 430366
    small = nn.build_component_net(2, 1, 15, rng)
    assert small.widths == [3, 45, 180, 180, 15, 1]
    assert [layer.activation for layer in net.layers] == ["linear", "prelu", "prelu", "tanh", "linear"]
    assert [layer.dropout_after for layer in net.layers] == [False, False, True, True, False]


def test_initialisation(rng):
    net = nn.build_component_net(2, 1, 3, rng)
    for layer, W, b, s in zip(net.layers, net.weights, net.biases, net.slopes):
        limit = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
        assert np.all(np.abs(W) <= limit)
        assert np.all(b == 0)
        if s is not None:
            assert np.all(s == 0.25)


def test_invalid_counts(rng):
    with pytest.raises(DomainError):
        nn.build_component_net(0, 1, 3, rng)
    with pytest.raises(DimensionError):
        nn.LayerSpec(0, 3, "linear")
    with pytest.raises(DomainError):
        nn.LayerSpec(2, 3, "relu")


def test_zero_net_outputs_zero(rng):
    net = nn.build_component_net(2, 1, 3, rng)
    net.params[:] = 0.0
    for x in ([1.0, -2.0, 3.0], [100.0, 0.5, -7.0]):
        assert nn.forward(net, x)[0] == pytest.approx([0.0])
        assert nn.forward(net, x, "train", rng=rng)[0] == pytest.approx([0.0])


def test_prelu_negative_input():
    net = nn.ComponentNet([nn.LayerSpec(1, 1, "prelu")])
    net.weights[0][...] = 1.0
    net.slopes[0][...] = 0.25
    assert nn.forward(net, [-2.0])[0][0] == pytest.approx(-0.5)
    assert nn.forward(net, [3.0])[0][0] == pytest.approx(3.0)


def test_infer_is_pure_and_predict_matches(rng):
    net = nn.build_component_net(2, 1, 3, rng)
    before = net.params.copy()
    x = rng.normal(size=(5, 3))
    a, _ = nn.forward(net, x)
    b, _ = nn.forward(net, x)
    assert np.array_equal(a, b)
    assert np.array_equal(nn.predict(net, x), a)
    assert np.array_equal(net.params, before) and net.version == 0


def test_forward_dimension_errors(rng):
    net = nn.build_component_net(2, 1, 3, rng)
    with pytest.raises(DimensionError):
        nn.forward(net, [1.0, 2.0])
    with pytest.raises(DomainError):
        nn.forward(net, [1.0, 2.0, 3.0], "train")


def test_mse_loss_examples():
    assert nn.mse_loss([1, 2], [1, 2]) == 0.0
    assert nn.mse_loss([1, 1], [0, 0]) == 1.0
    assert nn.mse_loss([3], [1]) == 4.0
    with pytest.raises(DimensionError):
        nn.mse_loss([1, 2], [1])


def test_zero_output_gradient_gives_zero_grads(rng):
    net = nn.build_component_net(2, 1, 3, rng)
    y, cache = nn.forward(net, rng.normal(size=(4, 3)), "train", rng=rng)
    assert np.all(nn.backward(net, cache, np.zeros_like(y)) == 0.0)


def test_single_linear_layer_bias_gradient():
    net = nn.ComponentNet([nn.LayerSpec(3, 2, "linear")])
    net.params[:] = np.arange(net.n_params) * 0.1
    x, t = np.array([1.0, -1.0, 2.0]), np.array([0.5, 0.0])
    y, cache = nn.forward(net, x, "train", masks=[None])
    grad = nn.backward(net, cache, y - t)
    _, gb, _ = net.views(grad)
    np.testing.assert_allclose(gb[0], y - t)


def test_stale_cache_rejected(rng):
    net = nn.build_component_net(2, 1, 3, rng)
    y, cache = nn.forward(net, rng.normal(size=(2, 3)), "train", rng=rng)
    net.version += 1
    with pytest.raises(InconsistentCacheError):
        nn.backward(net, cache, y)
    other = net.copy()
    with pytest.raises(InconsistentCacheError):
        nn.backward(other, cache, y)


def test_full_stack_gradient_check():
    rng = np.random.default_rng(5)
    net = nn.build_component_net(2, 1, 3, rng, dtype=np.float64)
    worst, failures = gradient_check(net, rng, n_probe=100)
    assert failures == 0, worst


@pytest.mark.parametrize("activation", nn.ACTIVATIONS)
@pytest.mark.parametrize("dropout", [False, True])
def test_per_layer_gradient_check(activation, dropout):
    rng = np.random.default_rng(6)
    net = nn.build_stack([4, 5, 3], [(activation, dropout), ("linear", False)], rng)
    if activation == "prelu":
        net.slopes[0][...] = rng.uniform(0.1, 0.5, size=5)
    worst, failures = gradient_check(net, rng, n_probe=net.n_params)
    assert failures == 0, worst


def test_gradient_check_detects_corruption():
    rng = np.random.default_rng(5)
    net = nn.build_component_net(2, 1, 3, rng)
    assert gradient_check(net, rng, corrupt=True)[1] > 0


def test_finite_diff_exact_for_linear_parameter():
    net = nn.ComponentNet([nn.LayerSpec(1, 1, "linear")])
    net.params[:] = [2.0, 0.5]
    x, t = np.array([[3.0]]), np.array([[0.0]])
    # loss = (3w + b)^2, d/db = 2 (3w + b) = 13
    for step in (1e-5, 1e-2, 0.5):
        assert nn.finite_diff_grad(net, x, t, 1, step) == pytest.approx(13.0, rel=1e-9)


def test_finite_diff_matches_backward_absolute(rng):
    net = nn.build_component_net(1, 1, 2, rng)
    x, t = rng.normal(size=(3, 2)), rng.normal(size=(3, 1))
    y, cache = nn.forward(net, x, "train", rng=rng)
    grad = nn.backward(net, cache, 2.0 * (y - t) / y.size)
    for idx in range(0, net.n_params, 7):
        fd = nn.finite_diff_grad(net, x, t, idx, 1e-5, masks=cache.masks)
        assert abs(fd - grad[idx]) < 1e-6


def test_symmetric_zero_net_is_stationary_in_hidden_weights():
    rng = np.random.default_rng(0)
    net = nn.build_stack([2, 3, 1], [("tanh", False), ("linear", False)], rng)
    net.params[:] = 0.0
    x, t = rng.normal(size=(4, 2)), rng.normal(size=(4, 1))
    for idx in range(2 * 3):
        assert nn.finite_diff_grad(net, x, t, idx) == pytest.approx(0.0, abs=1e-12)


def test_dropout_expectation_within_three_standard_errors():
    rng = np.random.default_rng(7)
    net = nn.build_component_net(2, 1, 3, rng)
    x = rng.normal(size=3)
    n = 10_000
    _, cache = nn.forward(net, np.tile(x, (n, 1)), "train", rng=rng)
    k = 2  # first link with dropout after it; its input is deterministic
    post = cache.acts[k] * cache.masks[k]
    _, infer = nn.forward(net, x)
    expected = infer.acts[k][0]
    se = post.std(axis=0, ddof=1) / np.sqrt(n)
    active = se > 0
    assert np.all(np.abs(post.mean(axis=0) - expected)[active] <= 3 * se[active])
    assert np.array_equal(post.mean(axis=0)[~active], expected[~active])
    assert set(np.unique(cache.masks[k])) <= {0.0, 2.0}


def test_adam_first_step_is_signed_lr():
    p = np.array([1.0, -1.0, 0.0])
    g = np.array([0.3, -5.0, 1e-2])
    state = nn.AdamState.like(p)
    nn.adam_step(p, g, state)
    np.testing.assert_allclose(p, [1.0 - 1e-3, -1.0 + 1e-3, -1e-3], rtol=1e-5)
    assert state.step_count == 1


def test_adam_zero_gradient_is_identity():
    p = np.array([0.5, -2.0])
    state = nn.AdamState.like(p)
    for _ in range(100):
        nn.adam_step(p, np.zeros(2), state)
    assert np.array_equal(p, [0.5, -2.0])


def test_adam_constant_gradient_step_tends_to_lr():
    p = np.zeros(1)
    state = nn.AdamState.like(p)
    prev = 0.0
    for _ in range(5000):
        prev = p[0]
        nn.adam_step(p, np.array([0.7]), state)
    assert abs(prev - p[0]) == pytest.approx(1e-3, rel=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        nn.adam_step(np.zeros(2), np.zeros(3), nn.AdamState.like(np.zeros(2)))


def test_standardize_examples():
    sc = nn.standardize_fit(np.array([[0.0, 5.0], [2.0, 5.0]]))
    np.testing.assert_allclose(sc.mean, [1.0, 5.0])
    np.testing.assert_allclose(sc.scale, [1.0, 1.0])
    np.testing.assert_allclose(nn.standardize_apply(sc, [[0.0, 5.0], [2.0, 5.0]]), [[-1, 0], [1, 0]])
    with pytest.raises(DimensionError):
        nn.standardize_fit(np.ones((1, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_standardize_roundtrip(n, d, seed):
    data = np.random.default_rng(seed).normal(size=(n, d)) * 50 + 3
    sc = nn.standardize_fit(data)
    back = nn.standardize_invert(sc, nn.standardize_apply(sc, data))
    np.testing.assert_allclose(back, data, rtol=0, atol=1e-12 * np.abs(data).max())


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_net_json_roundtrip_is_exact(rng, dtype):
    net = nn.build_component_net(2, 1, 3, rng, dtype=dtype)
    net.params[:] += rng.normal(size=net.n_params).astype(dtype) * 1e-3
    back = nn.net_from_dict(json.loads(json.dumps(nn.net_to_dict(net))))
    assert back.dtype == net.dtype and back.widths == net.widths
    assert np.array_equal(back.params, net.params)


def _train_pair(dtype, epochs=3):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(47, 3))
    Y = np.sin(X[:, :1]) + 0.1 * X[:, 1:2]
    nets = []
    for engine in ("numpy", "compiled"):
        net = nn.build_component_net(2, 1, 3, np.random.default_rng(3), dtype=dtype)
        hist = nn.train_net(net, X, Y, epochs, 20, np.random.default_rng(4), engine=engine)
        nets.append((net, hist))
    return nets


def test_compiled_kernel_matches_numpy_reference_float64():
    (a, ha), (b, hb) = _train_pair(np.float64)
    np.testing.assert_allclose(b.params, a.params, rtol=0, atol=1e-10)
    np.testing.assert_allclose(hb, ha, rtol=1e-9)
    assert a.version == b.version == 3


def test_compiled_kernel_matches_numpy_reference_float32():
    (a, _), (b, _) = _train_pair(np.float32)
    np.testing.assert_allclose(b.params, a.params, rtol=0, atol=1e-4)


def test_train_net_rejects_bad_shapes(rng):
    net = nn.build_component_net(2, 1, 3, rng)
    with pytest.raises(DimensionError):
        nn.train_net(net, np.zeros((5, 2)), np.zeros((5, 1)), 1, 2, rng)
    with pytest.raises(DomainError):
        nn.train_net(net, np.zeros((5, 3)), np.zeros((5, 1)), 0, 2, rng)


def test_linear_target_is_learned():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(5000, 3))
    Y = X @ np.array([[0.5], [-0.3], [0.2]]) + 0.1
    net = nn.build_component_net(2, 1, 15, rng, dtype=np.float32)
    nn.train_net(net, X, Y, 30, 20, rng)
    assert nn.mse_loss(nn.predict(net, X), Y) < 1e-3
