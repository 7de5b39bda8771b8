"""Cascaded deep recurrent surrogate and the two comparison baselines.

The cascade holds one :class:`~bayes_surrogate.neuralnet.ComponentNet` per
timestep.  Component ``t`` sees the standardised parameters together with the
previous component's standardised prediction (zeros for the first step), so
every component has the same ``J + M`` input width.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .core import ObservedData, as_param_vector, log_likelihood
from .errors import DimensionError, DomainError, EmptyResultError

SOURCE_TAGS = ("lhc", "posterior")
NCDNN_ETA = 50


@dataclass(frozen=True)
class TrainingSet:
    """Parameter rows ``inputs (N, J)`` with simulator outputs ``outputs (N, T, M)``."""

    inputs: np.ndarray
    outputs: np.ndarray
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        Z = np.asarray(self.outputs, dtype=float)
        if X.ndim != 2 or Z.ndim != 3:
            raise DimensionError("inputs must be (N, J) and outputs (N, T, M)")
        if X.shape[0] != Z.shape[0]:
            raise DimensionError(f"{X.shape[0]} inputs but {Z.shape[0]} outputs")
        tags = tuple(self.tags) if len(self.tags) else ("lhc",) * X.shape[0]
        if len(tags) != X.shape[0]:
            raise DimensionError("need one source tag per record")
        bad = set(tags) - set(SOURCE_TAGS)
        if bad:
            raise DomainError(f"unknown source tags {sorted(bad)}")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", Z)
        object.__setattr__(self, "tags", tags)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def J(self) -> int:
        return self.inputs.shape[1]

    @property
    def T(self) -> int:
        return self.outputs.shape[1]

    @property
    def M(self) -> int:
        return self.outputs.shape[2]

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx, dtype=int)
        return TrainingSet(self.inputs[idx], self.outputs[idx], tuple(self.tags[i] for i in idx))

    def concat(self, other: "TrainingSet") -> "TrainingSet":
        return TrainingSet(np.vstack([self.inputs, other.inputs]),
                           np.concatenate([self.outputs, other.outputs]),
                           self.tags + other.tags)


@dataclass(frozen=True)
class TrainConfig:
    """Training settings; ``seed`` is used only when a trainer is called without an rng."""

    epochs: int = 300
    minibatch: int = 20
    complexity_eta: int = 15
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch < 1 or self.complexity_eta < 1:
            raise DomainError("epochs, minibatch and complexity_eta must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise DomainError("dtype must be float32 or float64")

    def adam(self, params: np.ndarray) -> nn.AdamState:
        return nn.AdamState.like(params, lr=self.lr, beta1=self.beta1,
                                 beta2=self.beta2, epsilon=self.epsilon)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_data(data: TrainingSet, cfg: TrainConfig, rng) -> np.random.Generator:
    if len(data) < 2:
        raise EmptyResultError("training needs at least two records")
    return np.random.default_rng(cfg.seed) if rng is None else rng


def _fit_scalers(data: TrainingSet):
    x_scaler = nn.standardize_fit(data.inputs)
    z_scalers = [nn.standardize_fit(data.outputs[:, t, :]) for t in range(data.T)]
    return x_scaler, z_scalers


# ---------------------------------------------------------------------------
# Cascaded surrogate

@dataclass
class DrnSurrogate:
    components: list
    input_scaler: nn.Scaler
    output_scalers: list
    J: int
    M: int
    T: int
    config: TrainConfig
    losses: list = field(default_factory=list)

    kind = "drn"

    def __post_init__(self):
        if len(self.components) != self.T or len(self.output_scalers) != self.T:
            raise DimensionError(f"need exactly T={self.T} components and output scalers")
        for net in self.components:
            if net.n_in != self.J + self.M or net.n_out != self.M:
                raise DimensionError("component widths do not match J + M -> M")

    @property
    def n_params(self) -> int:
        return sum(net.n_params for net in self.components)

    def predict(self, theta) -> np.ndarray:
        return drn_predict(self, theta)

    def predict_batch(self, thetas) -> np.ndarray:
        return drn_predict_batch(self, thetas)


def drn_train(data: TrainingSet, cfg: TrainConfig, rng: np.random.Generator | None = None) -> DrnSurrogate:
    """Train the cascade one timestep at a time on the previous step's predictions."""
    rng = _check_data(data, cfg, rng)
    J, T, M = data.J, data.T, data.M
    x_scaler, z_scalers = _fit_scalers(data)
    xs = nn.standardize_apply(x_scaler, data.inputs)
    prev = np.zeros((len(data), M))
    components, losses = [], []
    for t, sub in enumerate(rng.spawn(T)):
        net = nn.build_component_net(J, M, cfg.complexity_eta, sub, dtype=cfg.dtype)
        X = np.hstack([xs, prev])
        Y = nn.standardize_apply(z_scalers[t], data.outputs[:, t, :])
        losses.append(nn.train_net(net, X, Y, cfg.epochs, cfg.minibatch, sub, cfg.adam(net.params)))
        prev = nn.predict(net, X).astype(float)
        components.append(net)
    return DrnSurrogate(components, x_scaler, z_scalers, J, M, T, cfg, losses)


def drn_predict_batch(model: DrnSurrogate, thetas) -> np.ndarray:
    """Predictions for rows of ``thetas``; returns ``(N, T, M)``."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 2 or thetas.shape[1] != model.J:
        raise DimensionError(f"expected an (N, {model.J}) parameter array, got {thetas.shape}")
    xs = nn.standardize_apply(model.input_scaler, thetas)
    prev = np.zeros((thetas.shape[0], model.M))
    out = np.empty((thetas.shape[0], model.T, model.M))
    for t, net in enumerate(model.components):
        prev = nn.predict(net, np.hstack([xs, prev])).astype(float)
        out[:, t, :] = nn.standardize_invert(model.output_scalers[t], prev)
    return out


def drn_predict(model: DrnSurrogate, theta) -> np.ndarray:
    theta = as_param_vector(theta, model.J)
    return drn_predict_batch(model, theta[None, :])[0]


# ---------------------------------------------------------------------------
# Non-cascading baseline: one stack mapping theta to all T*M outputs

@dataclass
class NcdnnSurrogate:
    net: nn.ComponentNet
    input_scaler: nn.Scaler
    output_scaler: nn.Scaler
    J: int
    M: int
    T: int
    config: TrainConfig
    losses: list = field(default_factory=list)

    kind = "ncdnn"

    def predict(self, theta) -> np.ndarray:
        return ncdnn_predict(self, theta)

    def predict_batch(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.J:
            raise DimensionError(f"expected an (N, {self.J}) parameter array, got {thetas.shape}")
        y = nn.predict(self.net, nn.standardize_apply(self.input_scaler, thetas)).astype(float)
        return nn.standardize_invert(self.output_scaler, y).reshape(-1, self.T, self.M)


def ncdnn_train(data: TrainingSet, cfg: TrainConfig, rng: np.random.Generator | None = None,
                complexity_eta: int = NCDNN_ETA) -> NcdnnSurrogate:
    """Single stack with ``J`` inputs and ``T*M`` outputs, widths by the component sizing rule."""
    rng = _check_data(data, cfg, rng)
    J, T, M = data.J, data.T, data.M
    flat = data.outputs.reshape(len(data), T * M)
    x_scaler = nn.standardize_fit(data.inputs)
    z_scaler = nn.standardize_fit(flat)
    widths = nn.stack_widths(J, T * M, complexity_eta)
    net = nn.build_stack(widths, nn.COMPONENT_SCHEDULE, rng, cfg.dtype, complexity_eta)
    X = nn.standardize_apply(x_scaler, data.inputs)
    Y = nn.standardize_apply(z_scaler, flat)
    losses = nn.train_net(net, X, Y, cfg.epochs, cfg.minibatch, rng, cfg.adam(net.params))
    return NcdnnSurrogate(net, x_scaler, z_scaler, J, M, T, cfg, [losses])


def ncdnn_predict(model: NcdnnSurrogate, theta) -> np.ndarray:
    theta = as_param_vector(theta, model.J)
    return model.predict_batch(theta[None, :])[0]


# ---------------------------------------------------------------------------
# Standard recurrent baseline: one shared tanh cell unrolled over T

@dataclass
class RnnCell:
    """``h = tanh([x, z_prev] Wx + bh)``, ``z = h Wo + bo``; parameters in one flat buffer."""

    n_in: int
    n_hidden: int
    n_out: int
    params: np.ndarray

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=float)
        if self.params.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters")
        self.Wx, self.bh, self.Wo, self.bo = self.views(self.params)

    @property
    def n_params(self) -> int:
        return (self.n_in + 1) * self.n_hidden + (self.n_hidden + 1) * self.n_out

    def views(self, flat):
        a = self.n_in * self.n_hidden
        b = a + self.n_hidden
        c = b + self.n_hidden * self.n_out
        return (flat[:a].reshape(self.n_in, self.n_hidden), flat[a:b],
                flat[b:c].reshape(self.n_hidden, self.n_out), flat[c:])

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> "RnnCell":
        cell = cls(n_in, n_hidden, n_out, np.zeros((n_in + 1) * n_hidden + (n_hidden + 1) * n_out))
        for W in (cell.Wx, cell.Wo):
            limit = np.sqrt(6.0 / sum(W.shape))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
        return cell


def rnn_unroll(cell: RnnCell, xs: np.ndarray, T: int):
    """Run the cell for ``T`` steps on standardised inputs ``xs (N, J)``.

    Returns predictions ``(N, T, M)`` and the hidden states ``(N, T, H)``.
    """
    N = xs.shape[0]
    M = cell.n_out
    preds = np.empty((N, T, M))
    hidden = np.empty((N, T, cell.n_hidden))
    prev = np.zeros((N, M))
    for t in range(T):
        h = np.tanh(np.hstack([xs, prev]) @ cell.Wx + cell.bh)
        prev = h @ cell.Wo + cell.bo
        hidden[:, t] = h
        preds[:, t] = prev
    return preds, hidden


def rnn_loss_grad(cell: RnnCell, xs: np.ndarray, targets: np.ndarray):
    """Loss ``sum_t mean((z_t - target_t)^2)`` and its gradient by backpropagation through time."""
    N, T, M = targets.shape
    J = xs.shape[1]
    preds, hidden = rnn_unroll(cell, xs, T)
    diff = preds - targets
    loss = float(np.sum(np.mean(diff * diff, axis=(0, 2))))
    grad = np.zeros_like(cell.params)
    gWx, gbh, gWo, gbo = cell.views(grad)
    dz_next = np.zeros((N, M))  # gradient flowing into z_t from step t+1's input
    for t in range(T - 1, -1, -1):
        dz = diff[:, t] * (2.0 / (N * M)) + dz_next
        h = hidden[:, t]
        gWo += h.T @ dz
        gbo += dz.sum(axis=0)
        da = (dz @ cell.Wo.T) * (1.0 - h * h)
        prev = preds[:, t - 1] if t > 0 else np.zeros((N, M))
        gWx += np.hstack([xs, prev]).T @ da
        gbh += da.sum(axis=0)
        dz_next = da @ cell.Wx[J:].T
    return loss, grad


@dataclass
class StdRnnSurrogate:
    cell: RnnCell
    input_scaler: nn.Scaler
    output_scalers: list
    J: int
    M: int
    T: int
    config: TrainConfig
    losses: list = field(default_factory=list)

    kind = "stdrnn"

    @property
    def n_params(self) -> int:
        return self.cell.n_params

    def predict(self, theta) -> np.ndarray:
        return stdrnn_predict(self, theta)

    def predict_batch(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.J:
            raise DimensionError(f"expected an (N, {self.J}) parameter array, got {thetas.shape}")
        preds, _ = rnn_unroll(self.cell, nn.standardize_apply(self.input_scaler, thetas), self.T)
        for t, scaler in enumerate(self.output_scalers):
            preds[:, t] = nn.standardize_invert(scaler, preds[:, t])
        return preds


def stdrnn_train(data: TrainingSet, cfg: TrainConfig, rng: np.random.Generator | None = None) -> StdRnnSurrogate:
    """Train one shared tanh cell of width ``eta (J + M)`` end to end through the unrolled sequence."""
    rng = _check_data(data, cfg, rng)
    J, T, M = data.J, data.T, data.M
    x_scaler, z_scalers = _fit_scalers(data)
    xs = nn.standardize_apply(x_scaler, data.inputs)
    Z = np.stack([nn.standardize_apply(z_scalers[t], data.outputs[:, t]) for t in range(T)], axis=1)
    cell = RnnCell.init(J + M, cfg.complexity_eta * (J + M), M, rng)
    adam = nn.AdamState.like(cell.params, lr=cfg.lr, beta1=cfg.beta1,
                             beta2=cfg.beta2, epsilon=cfg.epsilon)
    n = len(data)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            loss, grad = rnn_loss_grad(cell, xs[idx], Z[idx])
            nn.adam_step(cell.params, grad, adam)
            total += loss * len(idx)
        losses.append(total / n)
    return StdRnnSurrogate(cell, x_scaler, z_scalers, J, M, T, cfg, [losses])


def stdrnn_predict(model: StdRnnSurrogate, theta) -> np.ndarray:
    theta = as_param_vector(theta, model.J)
    return model.predict_batch(theta[None, :])[0]


TRAINERS = {"drn": drn_train, "ncdnn": ncdnn_train, "stdrnn": stdrnn_train}


def surrogate_loglike(model, theta, obs: ObservedData) -> float:
    """Gaussian log-likelihood of ``obs`` with the surrogate standing in for the simulator."""
    return log_likelihood(model.predict(theta), obs)


# ---------------------------------------------------------------------------
# Persistence

def model_to_dict(model) -> dict:
    d = {
        "kind": model.kind,
        "J": model.J,
        "M": model.M,
        "T": model.T,
        "config": model.config.to_dict(),
        "input_scaler": model.input_scaler.to_dict(),
    }
    if model.kind == "drn":
        d["output_scalers"] = [s.to_dict() for s in model.output_scalers]
        d["components"] = [nn.net_to_dict(net) for net in model.components]
    elif model.kind == "ncdnn":
        d["output_scaler"] = model.output_scaler.to_dict()
        d["net"] = nn.net_to_dict(model.net)
    else:
        d["output_scalers"] = [s.to_dict() for s in model.output_scalers]
        d["cell"] = {"n_in": model.cell.n_in, "n_hidden": model.cell.n_hidden,
                     "n_out": model.cell.n_out, "params": model.cell.params.tolist()}
    return d


def model_from_dict(d: dict):
    cfg = TrainConfig(**d["config"])
    x_scaler = nn.Scaler.from_dict(d["input_scaler"])
    J, M, T = d["J"], d["M"], d["T"]
    if d["kind"] == "drn":
        return DrnSurrogate([nn.net_from_dict(c) for c in d["components"]], x_scaler,
                            [nn.Scaler.from_dict(s) for s in d["output_scalers"]], J, M, T, cfg)
    if d["kind"] == "ncdnn":
        return NcdnnSurrogate(nn.net_from_dict(d["net"]), x_scaler,
                              nn.Scaler.from_dict(d["output_scaler"]), J, M, T, cfg)
    if d["kind"] == "stdrnn":
        c = d["cell"]
        cell = RnnCell(c["n_in"], c["n_hidden"], c["n_out"], np.asarray(c["params"], dtype=float))
        return StdRnnSurrogate(cell, x_scaler, [nn.Scaler.from_dict(s) for s in d["output_scalers"]],
                               J, M, T, cfg)
    raise DomainError(f"unknown model kind {d['kind']!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
