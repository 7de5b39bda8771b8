"""A small feed-forward network engine written directly on numpy.

Parameters of one network live in a single flat array; per-layer weights,
biases and PReLU slopes are views into it.  That keeps the Adam update to a few
vectorised operations and makes finite-difference probing by flat index easy.

Weights are stored ``(fan_in, fan_out)`` so a layer computes ``h @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, InconsistentCacheError

ACTIVATIONS = ("linear", "prelu", "tanh")

# (activation, dropout after) for the five links of a component network.
COMPONENT_SCHEDULE = (
    ("linear", False),
    ("prelu", False),
    ("prelu", True),
    ("tanh", True),
    ("linear", False),
)

DROPOUT_KEEP = 0.5
PRELU_INIT = 0.25

# Adam moments smaller than this are zeroed to keep float32 out of subnormals.
ADAM_FLUSH = 1e-30


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: str
    dropout_after: bool = False

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise DimensionError("layer widths must be at least 1")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        n = self.fan_in * self.fan_out + self.fan_out
        return n + self.fan_out if self.activation == "prelu" else n


def stack_widths(n_in: int, n_out: int, complexity_eta: int) -> list[int]:
    """Layer widths ``[n_in, eta n_in, 4 eta n_in, 4 eta n_in, eta n_out, n_out]``."""
    if min(n_in, n_out, complexity_eta) < 1:
        raise DomainError("widths and complexity_eta must be at least 1")
    e = complexity_eta
    return [n_in, e * n_in, 4 * e * n_in, 4 * e * n_in, e * n_out, n_out]


class ComponentNet:
    """Feed-forward stack with a flat parameter buffer.

    ``version`` increments after every training epoch in :func:`train_net`;
    forward caches remember it so stale caches are caught.
    """

    def __init__(self, layers: Sequence[LayerSpec], params: np.ndarray | None = None,
                 dtype=np.float64, complexity_eta: int | None = None):
        self.layers = tuple(layers)
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise DimensionError("consecutive layer widths do not chain")
        self.dtype = np.dtype(dtype)
        self.complexity_eta = complexity_eta
        self.n_params = sum(layer.n_params for layer in self.layers)
        if params is None:
            params = np.zeros(self.n_params, dtype=self.dtype)
        params = np.ascontiguousarray(params, dtype=self.dtype)
        if params.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params
        self.weights, self.biases, self.slopes = self.views(self.params)
        self.version = 0

    def views(self, flat: np.ndarray):
        """Split a flat array laid out like ``params`` into per-layer views."""
        weights, biases, slopes = [], [], []
        pos = 0
        for layer in self.layers:
            n = layer.fan_in * layer.fan_out
            weights.append(flat[pos:pos + n].reshape(layer.fan_in, layer.fan_out))
            pos += n
            biases.append(flat[pos:pos + layer.fan_out])
            pos += layer.fan_out
            if layer.activation == "prelu":
                slopes.append(flat[pos:pos + layer.fan_out])
                pos += layer.fan_out
            else:
                slopes.append(None)
        return weights, biases, slopes

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    @property
    def n_in(self) -> int:
        return self.layers[0].fan_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].fan_out

    def copy(self) -> "ComponentNet":
        return ComponentNet(self.layers, self.params.copy(), self.dtype, self.complexity_eta)

    def __repr__(self):
        return f"ComponentNet(widths={self.widths}, n_params={self.n_params}, dtype={self.dtype})"


def build_stack(widths: Sequence[int], schedule, rng: np.random.Generator,
                dtype=np.float64, complexity_eta: int | None = None) -> ComponentNet:
    """Initialise a network with Glorot-uniform weights, zero biases, PReLU slopes 0.25."""
    if len(widths) != len(schedule) + 1:
        raise DimensionError("need one schedule entry per weight block")
    layers = [LayerSpec(a, b, act, drop)
              for a, b, (act, drop) in zip(widths[:-1], widths[1:], schedule)]
    net = ComponentNet(layers, dtype=dtype, complexity_eta=complexity_eta)
    for layer, W, s in zip(layers, net.weights, net.slopes):
        limit = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
        if s is not None:
            s[...] = PRELU_INIT
    return net


def build_component_net(J: int, M: int, complexity_eta: int, rng: np.random.Generator,
                        dtype=np.float64) -> ComponentNet:
    """Per-timestep component: ``J + M`` inputs (parameters plus previous output), ``M`` outputs."""
    if min(J, M, complexity_eta) < 1:
        raise DomainError("J, M and complexity_eta must be at least 1")
    widths = stack_widths(J + M, M, complexity_eta)
    return build_stack(widths, COMPONENT_SCHEDULE, rng, dtype, complexity_eta)


@dataclass
class ForwardCache:
    net: ComponentNet
    version: int
    mode: str
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    acts: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    output: np.ndarray | None = None


def forward(net: ComponentNet, x, mode: str = "infer", rng: np.random.Generator | None = None,
            masks: Sequence | None = None):
    """Evaluate ``net`` on ``x`` (one row or a batch of rows).

    In ``train`` mode each dropout layer keeps units with probability 0.5 and
    doubles the survivors; pass ``masks`` (e.g. ``cache.masks``) to reuse a
    recorded dropout pattern.  ``infer`` mode never drops or rescales.
    Returns ``(y, cache)``.
    """
    if mode not in ("train", "infer"):
        raise DomainError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=net.dtype)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.n_in:
        raise DimensionError(f"network expects {net.n_in} inputs, got shape {x.shape}")
    train = mode == "train"
    if train and masks is None and rng is None:
        raise DomainError("train mode needs an rng or explicit dropout masks")
    cache = ForwardCache(net, net.version, mode)
    for k, layer in enumerate(net.layers):
        cache.inputs.append(h)
        a = h @ net.weights[k]
        a += net.biases[k]
        if layer.activation == "linear":
            out = a
        elif layer.activation == "prelu":
            out = np.where(a > 0, a, a * net.slopes[k])
        else:
            out = np.tanh(a)
        cache.pre.append(a)
        cache.acts.append(out)
        mask = None
        if train and layer.dropout_after:
            if masks is not None:
                mask = masks[k]
            else:
                keep = rng.random(out.shape, dtype=np.float64) < DROPOUT_KEEP
                mask = keep.astype(net.dtype) * (1.0 / DROPOUT_KEEP)
            out = out * mask
        cache.masks.append(mask)
        h = out
    cache.output = h
    return (h[0] if single else h), cache


def predict(net: ComponentNet, x) -> np.ndarray:
    """Infer-mode output for one row or a batch; same values as ``forward(net, x, "infer")``."""
    x = np.asarray(x, dtype=net.dtype)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.n_in:
        raise DimensionError(f"network expects {net.n_in} inputs, got shape {x.shape}")
    for layer, W, b, s in zip(net.layers, net.weights, net.biases, net.slopes):
        a = h @ W
        a += b
        if layer.activation == "prelu":
            h = np.where(a > 0, a, a * s)
        elif layer.activation == "tanh":
            h = np.tanh(a, out=a)
        else:
            h = a
    return h[0] if single else h


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def backward(net: ComponentNet, cache: ForwardCache, grad_out, out: np.ndarray | None = None) -> np.ndarray:
    """Gradient of a scalar loss with respect to every parameter of ``net``.

    ``grad_out`` is the loss gradient at the network output, shaped like the
    output the cache recorded.  The result is a flat array laid out like
    ``net.params``; pass ``out`` to reuse a buffer.
    """
    if cache.net is not net or cache.version != net.version:
        raise InconsistentCacheError("forward cache does not belong to this network state")
    d = np.asarray(grad_out, dtype=net.dtype)
    if d.ndim == 1:
        d = d[None, :]
    if d.shape != cache.output.shape:
        raise DimensionError(f"output gradient shape {d.shape} != output {cache.output.shape}")
    grad = np.empty(net.n_params, dtype=net.dtype) if out is None else out
    gW, gb, gs = net.views(grad)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if cache.masks[k] is not None:
            d = d * cache.masks[k]
        a = cache.pre[k]
        if layer.activation == "linear":
            da = d
        elif layer.activation == "prelu":
            neg = a <= 0
            gs[k][...] = np.sum(np.where(neg, d * a, 0.0), axis=0)
            da = np.where(neg, d * net.slopes[k], d)
        else:
            y = cache.acts[k]
            da = d * (1.0 - y * y)
        np.matmul(cache.inputs[k].T, da, out=gW[k])
        np.sum(da, axis=0, out=gb[k])
        if k:
            d = da @ net.weights[k].T
    return grad


def finite_diff_grad(net: ComponentNet, x, target, index: int, step: float = 1e-5,
                     masks: Sequence | None = None) -> float:
    """Central-difference derivative of the MSE loss with respect to ``params[index]``.

    With ``masks`` the probes run in train mode under that frozen dropout
    pattern; otherwise in infer mode.
    """
    mode = "train" if masks is not None else "infer"
    original = net.params[index]
    try:
        net.params[index] = original + step
        up = mse_loss(forward(net, x, mode, masks=masks)[0], target)
        net.params[index] = original - step
        down = mse_loss(forward(net, x, mode, masks=masks)[0], target)
    finally:
        net.params[index] = original
    return (up - down) / (2.0 * step)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, params: np.ndarray, **settings) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **settings)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """Bias-corrected Adam update, applied in place.  Returns ``(params, state)``."""
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise DimensionError("parameter, gradient and moment shapes must agree")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    state.m[np.abs(state.m) < ADAM_FLUSH] = 0.0
    state.v[state.v < ADAM_FLUSH] = 0.0
    denom = np.sqrt(state.v)
    denom *= 1.0 / np.sqrt(1.0 - b2 ** t)
    denom += state.epsilon
    params -= (state.lr / (1.0 - b1 ** t)) * state.m / denom
    return params, state


class _Layout:
    """Integer offset tables describing ``net``'s flat buffer, for the compiled kernel."""

    def __init__(self, net: ComponentNet, max_batch: int):
        codes = {"linear": 0, "prelu": 1, "tanh": 2}
        L = len(net.layers)
        self.fan_in = np.array([l.fan_in for l in net.layers], dtype=np.int64)
        self.fan_out = np.array([l.fan_out for l in net.layers], dtype=np.int64)
        self.act = np.array([codes[l.activation] for l in net.layers], dtype=np.int64)
        self.drop = np.array([l.dropout_after for l in net.layers], dtype=np.bool_)
        self.w_off = np.zeros(L, dtype=np.int64)
        self.b_off = np.zeros(L, dtype=np.int64)
        self.s_off = np.zeros(L, dtype=np.int64)
        self.drop_off = np.zeros(L, dtype=np.int64)
        self.work_off = np.zeros(L, dtype=np.int64)
        pos = n_drop = work = 0
        for k, layer in enumerate(net.layers):
            self.w_off[k] = pos
            pos += layer.fan_in * layer.fan_out
            self.b_off[k] = pos
            pos += layer.fan_out
            if layer.activation == "prelu":
                self.s_off[k] = pos
                pos += layer.fan_out
            self.drop_off[k] = n_drop
            if layer.dropout_after:
                n_drop += layer.fan_out
            self.work_off[k] = work
            work += max_batch * layer.fan_out
        self.n_drop = max(n_drop, 1)
        self.work = [np.empty(work, dtype=net.dtype) for _ in range(4)]

    def masks(self, net: ComponentNet, rand: np.ndarray) -> list:
        out = []
        for k, layer in enumerate(net.layers):
            if layer.dropout_after:
                lo = self.drop_off[k]
                keep = rand[:, lo:lo + layer.fan_out] < DROPOUT_KEEP
                out.append(keep.astype(net.dtype) * (1.0 / DROPOUT_KEEP))
            else:
                out.append(None)
        return out


def _compiled_kernel():
    try:
        from ._kernels import train_epoch
    except ImportError:  # pragma: no cover - numba missing
        return None
    return train_epoch


def train_net(net: ComponentNet, X, Y, epochs: int, minibatch: int, rng: np.random.Generator,
              adam: AdamState | None = None, engine: str = "auto") -> list[float]:
    """Minibatch Adam on the MSE loss; returns the mean training loss of each epoch.

    Each epoch draws one row permutation and one matrix of uniform dropout
    draws from ``rng``, so the compiled (``engine="compiled"``) and pure numpy
    (``engine="numpy"``) paths consume identical randomness.  The last short
    batch is kept.
    """
    X = np.ascontiguousarray(X, dtype=net.dtype)
    Y = np.ascontiguousarray(Y, dtype=net.dtype)
    n = X.shape[0]
    if n == 0 or Y.shape[0] != n:
        raise DimensionError("inputs and targets need the same, nonzero number of rows")
    if X.shape[1] != net.n_in or Y.shape[1] != net.n_out:
        raise DimensionError(f"expected {net.n_in} inputs and {net.n_out} targets per row")
    if epochs < 1 or minibatch < 1:
        raise DomainError("epochs and minibatch must be at least 1")
    if adam is None:
        adam = AdamState.like(net.params)
    kernel = _compiled_kernel() if engine in ("auto", "compiled") else None
    if engine == "compiled" and kernel is None:
        raise DomainError("compiled engine requested but numba is unavailable")
    layout = _Layout(net, min(minibatch, n))
    grad = np.empty_like(net.params)
    hyper = np.array([adam.lr, adam.beta1, adam.beta2, adam.epsilon, ADAM_FLUSH], dtype=net.dtype)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        rand = rng.random((n, layout.n_drop), dtype=np.float32)
        if kernel is not None:
            step, sse = kernel(
                net.params, adam.m, adam.v, adam.step_count, hyper, X, Y, order,
                minibatch, rand, np.float32(DROPOUT_KEEP),
                layout.fan_in, layout.fan_out, layout.w_off, layout.b_off, layout.s_off,
                layout.act, layout.drop, layout.drop_off, grad, *layout.work, layout.work_off,
            )
            adam.step_count = int(step)
        else:
            sse = 0.0
            for start in range(0, n, minibatch):
                idx = order[start:start + minibatch]
                masks = layout.masks(net, rand[start:start + minibatch])
                y, cache = forward(net, X[idx], "train", masks=masks)
                diff = y - Y[idx]
                sse += float(np.sum(diff * diff))
                backward(net, cache, diff * (2.0 / diff.size), out=grad)
                adam_step(net.params, grad, adam)
        net.version += 1
        history.append(float(sse) / Y.size)
    return history


# ---------------------------------------------------------------------------
# Feature scaling

@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


def standardize_fit(data) -> Scaler:
    """Per-column mean and population std; zero-variance columns get scale 1."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DimensionError("standardize_fit needs a 2-D array with at least two rows")
    std = data.std(axis=0)
    return Scaler(data.mean(axis=0), np.where(std > 0, std, 1.0))


def standardize_apply(scaler: Scaler, data) -> np.ndarray:
    return (np.asarray(data, dtype=float) - scaler.mean) / scaler.scale


def standardize_invert(scaler: Scaler, data) -> np.ndarray:
    return np.asarray(data, dtype=float) * scaler.scale + scaler.mean


# ---------------------------------------------------------------------------
# Serialisation

def net_to_dict(net: ComponentNet) -> dict:
    """JSON-ready description; floats are emitted via ``repr`` so doubles round-trip exactly."""
    blocks = []
    for layer, W, b, s in zip(net.layers, net.weights, net.biases, net.slopes):
        block = {
            "fan_in": layer.fan_in,
            "fan_out": layer.fan_out,
            "activation": layer.activation,
            "dropout_after": layer.dropout_after,
            "weights": W.astype(float).ravel().tolist(),
            "bias": b.astype(float).tolist(),
        }
        if s is not None:
            block["slopes"] = s.astype(float).tolist()
        blocks.append(block)
    return {
        "widths": net.widths,
        "dtype": net.dtype.name,
        "complexity_eta": net.complexity_eta,
        "layers": blocks,
    }


def net_from_dict(d: dict) -> ComponentNet:
    layers = [LayerSpec(b["fan_in"], b["fan_out"], b["activation"], b["dropout_after"])
              for b in d["layers"]]
    net = ComponentNet(layers, dtype=np.dtype(d["dtype"]), complexity_eta=d.get("complexity_eta"))
    for block, W, b, s in zip(d["layers"], net.weights, net.biases, net.slopes):
        W[...] = np.asarray(block["weights"], dtype=float).reshape(W.shape)
        b[...] = block["bias"]
        if s is not None:
            s[...] = block["slopes"]
    return net
