"""Flat key=value experiment configuration.

Files are UTF-8 lines of ``key = value`` with ``#`` comments. Resolution
order: built-in defaults, then the dataset preset (toy or mnist), then the
file, then repeated ``--set key=value`` overrides. Unknown keys are
rejected; the temperature defaults to 2 * adv.eta when not given. A
manifest.json written by a previous run is also accepted wherever a config
path is, which reruns that exact configuration.
"""

import json
from dataclasses import replace

from udr.adversary import AdvConfig
from udr.cost import CostFn
from udr.errors import ConfigError, UdrError
from udr.trainer import RunConfig


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_tuple(s: str) -> tuple:
    s = s.strip()
    if not s:
        return ()
    return tuple(int(v) for v in s.split(","))


_SCHEMA = {
    "method": str,
    "dataset": str,
    "beta": float,
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "optimizer": str,
    "lr": float,
    "momentum": float,
    "lr_drops": _parse_int_tuple,
    "lr_drop_factor": float,
    "weight_decay": float,
    "dims": _parse_int_tuple,
    "adv.k": int,
    "adv.epsilon": float,
    "adv.eta": float,
    "adv.random_init": _parse_bool,
    "adv.clip01": _parse_bool,
    "adv.ascent": str,
    "adv.pullback": str,
    "step_cost.norm": str,
    "lambda_cost.norm": str,
    "tau": float,
    "lambda0": float,
    "eta_lambda": float,
    "lambda_every": str,
    "wrm_lambda": float,
    "mart_craft": str,
    "probe_k": int,
    "probe_n": int,
    "checkpoint_every": int,
    "data_dir": str,
    "data_seed": int,
    "mnist_subset": int,
}

_BASE = {
    "method": "udr_pgd",
    "dataset": "toy",
    "beta": 1.0,
    "seed": 0,
    "momentum": 0.9,
    "lr_drops": (),
    "lr_drop_factor": 0.1,
    "weight_decay": 0.0,
    "adv.random_init": True,
    "adv.pullback": "grad",
    "lambda0": 1.0,
    "eta_lambda": 0.005,
    "lambda_every": "batch",
    "wrm_lambda": 1.0,
    "mart_craft": "ce",
    "probe_k": 20,
    "probe_n": 1000,
    "checkpoint_every": 0,
    "data_dir": "",
    "data_seed": 7,
    "mnist_subset": 0,
}

PRESETS = {
    "toy": {
        "dims": (2, 10, 10, 10, 2),
        "epochs": 30,
        "batch_size": 128,
        "optimizer": "adam",
        "lr": 1e-3,
        "adv.k": 20,
        "adv.epsilon": 1.0,
        "adv.eta": 0.1,
        "adv.clip01": False,
        "adv.ascent": "grad",
        "step_cost.norm": "l2half",
        "lambda_cost.norm": "linf",
    },
    "mnist": {
        "dims": (784, 256, 128, 10),
        "epochs": 10,
        "batch_size": 128,
        "optimizer": "sgd",
        "lr": 1e-2,
        "adv.k": 10,
        "adv.epsilon": 0.3,
        "adv.eta": 0.02,
        "adv.clip01": True,
        "adv.ascent": "sign",
        "step_cost.norm": "linf",
        "lambda_cost.norm": "linf",
        "mnist_subset": 10000,
    },
}


def _parse_value(key: str, raw: str):
    if key not in _SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return _SCHEMA[key](raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def read_config_file(path) -> dict:
    """Raw key -> typed value from a flat file or a manifest.json."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if text.lstrip().startswith("{"):
        snapshot = json.loads(text).get("config", {})
        return {k: _parse_value(k, str(v)) for k, v in snapshot.items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        out[key.strip()] = _parse_value(key.strip(), raw)
    return out


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        out[key.strip()] = _parse_value(key.strip(), raw)
    return out


def resolve(raw: dict) -> RunConfig:
    """Layer defaults + preset under the raw settings and build a RunConfig."""
    dataset = raw.get("dataset", _BASE["dataset"])
    if dataset not in PRESETS:
        raise ConfigError(f"unknown dataset {dataset!r}; choose from {tuple(PRESETS)}")
    merged = dict(_BASE)
    merged.update(PRESETS[dataset])
    merged.update(raw)
    if "tau" not in merged:
        merged["tau"] = 2.0 * merged["adv.eta"]
    try:
        adv = AdvConfig(
            k=merged["adv.k"],
            epsilon=merged["adv.epsilon"],
            eta=merged["adv.eta"],
            random_init=merged["adv.random_init"],
            clip01=merged["adv.clip01"],
            ascent=merged["adv.ascent"],
            pullback=merged["adv.pullback"],
        )
        step_cost = CostFn(merged["step_cost.norm"], merged["adv.epsilon"],
                           merged["tau"])
        lambda_cost = CostFn(merged["lambda_cost.norm"], merged["adv.epsilon"],
                             merged["tau"])
        return RunConfig(
            method=merged["method"],
            adv=adv,
            step_cost=step_cost,
            lambda_cost=lambda_cost,
            dims=tuple(merged["dims"]),
            epochs=merged["epochs"],
            batch_size=merged["batch_size"],
            seed=merged["seed"],
            beta=merged["beta"],
            lambda0=merged["lambda0"],
            eta_lambda=merged["eta_lambda"],
            optimizer=merged["optimizer"],
            lr=merged["lr"],
            momentum=merged["momentum"],
            lr_drops=tuple(merged["lr_drops"]),
            lr_drop_factor=merged["lr_drop_factor"],
            weight_decay=merged["weight_decay"],
            wrm_lambda=merged["wrm_lambda"],
            mart_craft=merged["mart_craft"],
            lambda_every=merged["lambda_every"],
            probe_k=merged["probe_k"],
            probe_n=merged["probe_n"],
            checkpoint_every=merged["checkpoint_every"],
            dataset=dataset,
            data_dir=merged["data_dir"],
            data_seed=merged["data_seed"],
            mnist_subset=merged["mnist_subset"],
        )
    except UdrError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def parse_config(path=None, overrides=()) -> RunConfig:
    raw = read_config_file(path) if path else {}
    raw.update(parse_overrides(overrides))
    return resolve(raw)


def to_flat(cfg: RunConfig) -> dict:
    """Flat snapshot that round-trips through resolve()."""
    out = {
        "method": cfg.method,
        "dataset": cfg.dataset,
        "beta": cfg.beta,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "optimizer": cfg.optimizer,
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "lr_drops": ",".join(str(d) for d in cfg.lr_drops),
        "lr_drop_factor": cfg.lr_drop_factor,
        "weight_decay": cfg.weight_decay,
        "dims": ",".join(str(d) for d in cfg.dims),
        "adv.k": cfg.adv.k,
        "adv.epsilon": cfg.adv.epsilon,
        "adv.eta": cfg.adv.eta,
        "adv.random_init": cfg.adv.random_init,
        "adv.clip01": cfg.adv.clip01,
        "adv.ascent": cfg.adv.ascent,
        "adv.pullback": cfg.adv.pullback,
        "step_cost.norm": cfg.step_cost.norm,
        "lambda_cost.norm": cfg.lambda_cost.norm,
        "tau": cfg.step_cost.tau,
        "lambda0": cfg.lambda0,
        "eta_lambda": cfg.eta_lambda,
        "lambda_every": cfg.lambda_every,
        "wrm_lambda": cfg.wrm_lambda,
        "mart_craft": cfg.mart_craft,
        "probe_k": cfg.probe_k,
        "probe_n": cfg.probe_n,
        "checkpoint_every": cfg.checkpoint_every,
        "data_dir": cfg.data_dir,
        "data_seed": cfg.data_seed,
        "mnist_subset": cfg.mnist_subset,
    }
    return out


def with_updates(cfg: RunConfig, **kv) -> RunConfig:
    """Rebuild a config through the resolver with some flat keys replaced."""
    flat = to_flat(cfg)
    flat.update(kv)
    raw = {k: _parse_value(k, str(v)) for k, v in flat.items()}
    return resolve(raw)
