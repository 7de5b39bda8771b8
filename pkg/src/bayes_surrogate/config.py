"""TOML experiment configuration: parsing with located errors, and exact re-serialisation.

Layout::

    seed = 0
    scheme = "mixed"          # lhc | posterior | mixed
    n_train = 2000
    noise_frac = 0.05
    k_folds = 10
    model = "drn"             # drn | ncdnn | stdrnn
    truth = [10.0, 10.0]

    [simulator]               # name, T, delay_per_call, phi, eta_c
    [prior]                   # kind = "uniform" with bounds, or "gaussian" with mean/std
    [train]                   # epochs, minibatch, complexity_eta, lr, beta1, beta2, epsilon, dtype
    [ns.phase1]               # n_live, tol, erf, max_iter, termination, max_tries
    [ns.phase3]

Every key is optional and falls back to the :class:`ExperimentConfig` default.
Sampler and training seeds are derived from the master ``seed``.
"""

from __future__ import annotations

import dataclasses
import re
from pathlib import Path

import tomli
import tomli_w

from .core import PriorSpec
from .errors import ConfigError, SurrogateError
from .pipeline import ExperimentConfig
from .sampler import NsConfig
from .simulators import ToyConstants
from .surrogate import TrainConfig

_TOP = {"seed": int, "scheme": str, "n_train": int, "noise_frac": float, "k_folds": int,
        "model": str, "truth": list}
_SIMULATOR = {"name": str, "T": int, "delay_per_call": float, "phi": float, "eta_c": float}
_PRIOR = {"kind": str, "bounds": list, "mean": list, "std": list}
_TRAIN = {f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
_NS = {f.name: f.type for f in dataclasses.fields(NsConfig) if f.name != "seed"}
_TYPES = {"int": int, "float": float, "str": str}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(rf"^\s*{re.escape(key)}\s*=", text, re.MULTILINE)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _header_line(text: str, table: str) -> int | None:
    if not table:
        return None
    m = re.search(rf"^\s*\[{re.escape(table)}\]", text, re.MULTILINE)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _typed(value, kind, path: str, text: str):
    kind = _TYPES.get(kind, kind)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is list and isinstance(value, list):
        return value
    if isinstance(value, bool) or not isinstance(value, kind):
        name = getattr(kind, "__name__", kind)
        raise ConfigError(f"expected {name}, got {type(value).__name__}", path,
                          _line_of(text, path.rsplit(".", 1)[-1]))
    return value


def _section(raw: dict, schema: dict, prefix: str, text: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("expected a table", prefix or None, _line_of(text, prefix))
    out = {}
    for key, value in raw.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            raise ConfigError("unknown key", path, _line_of(text, key))
        out[key] = _typed(value, schema[key], path, text)
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from TOML text; raises :class:`ConfigError`."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", None, int(m.group(1)) if m else None) from None

    sections = {"simulator", "prior", "train", "ns"}
    top = _section({k: v for k, v in raw.items() if k not in sections}, _TOP, "", text)
    sim = _section(raw.get("simulator", {}), _SIMULATOR, "simulator", text)
    prior_raw = _section(raw.get("prior", {}), _PRIOR, "prior", text)
    train = _section(raw.get("train", {}), _TRAIN, "train", text)
    ns_raw = raw.get("ns", {})
    if not isinstance(ns_raw, dict):
        raise ConfigError("expected a table", "ns", _line_of(text, "ns"))
    for key in ns_raw:
        if key not in ("phase1", "phase3"):
            raise ConfigError("unknown key", f"ns.{key}", _line_of(text, key))
    ns1 = _section(ns_raw.get("phase1", {}), _NS, "ns.phase1", text)
    ns3 = _section(ns_raw.get("phase3", {}), _NS, "ns.phase3", text)

    kwargs = dict(top)
    current = "simulator"
    try:
        if "name" in sim:
            kwargs["simulator"] = sim.pop("name")
        for key in ("T", "delay_per_call"):
            if key in sim:
                kwargs[key] = sim.pop(key)
        kwargs["toy"] = ToyConstants(**sim)
        current = "prior"
        if prior_raw:
            kind = prior_raw.get("kind", "uniform")
            if kind == "uniform":
                kwargs["prior"] = PriorSpec.uniform(prior_raw.get("bounds", ()))
            else:
                kwargs["prior"] = PriorSpec(kind=kind, mean=tuple(prior_raw.get("mean", ())),
                                            std=tuple(prior_raw.get("std", ())))
        current = "train"
        kwargs["train"] = TrainConfig(**train)
        current = "ns.phase1"
        kwargs["ns_phase1"] = NsConfig(**ns1)
        current = "ns.phase3"
        kwargs["ns_phase3"] = NsConfig(**ns3)
        current = ""
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (SurrogateError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), current or None, _header_line(text, current)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """TOML-ready nested mapping that :func:`parse_config` turns back into ``cfg``."""
    d = {
        "seed": cfg.seed,
        "scheme": cfg.scheme,
        "n_train": cfg.n_train,
        "noise_frac": cfg.noise_frac,
        "k_folds": cfg.k_folds,
        "model": cfg.model,
        "truth": list(cfg.truth),
        "simulator": {"name": cfg.simulator, "T": cfg.T, "delay_per_call": cfg.delay_per_call,
                      "phi": cfg.toy.phi, "eta_c": cfg.toy.eta_c},
        "prior": cfg.prior.to_dict(),
        "train": {k: v for k, v in dataclasses.asdict(cfg.train).items() if k != "seed"},
        "ns": {
            "phase1": {k: v for k, v in dataclasses.asdict(cfg.ns_phase1).items() if k != "seed"},
            "phase3": {k: v for k, v in dataclasses.asdict(cfg.ns_phase3).items() if k != "seed"},
        },
    }
    return d


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))
