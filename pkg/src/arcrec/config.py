"""Run configuration: defaults, JSON config files, CLI overrides.

Precedence: CLI flag > config file > default. Unknown keys are rejected
so typos fail loudly. The merged (effective) configuration is echoed into
every output artifact.
"""

from __future__ import annotations

import copy
import json

from .evaluate import TreatmentConfig
from .simulate import SimConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Bad configuration file or flag combination."""


DEFAULTS: dict = {
    "seed": 0,
    "workers": 1,
    "paths": {
        "transactions": None,
        "catalog": None,
        "truth": None,
        "checkpoint": None,
        "output_dir": ".",
    },
    "simulate": {
        "consumers": 300,
        "products": 300,
        "paper_scale": False,
        "attributes": 3,
        "noise_var": 0.05,
    },
    "train": {
        "dim": 64,
        "depth": 2,
        "batch_size": 500,
        "lr": 0.003,
        "l2": 0.0001,
        "max_epochs": 50,
        "patience": 10,
        "reference_cap": 50,
        "val_consumers": 150,
        "val_candidates": 100,
        "split_mode": "lloo",
        "standardize_prices": True,
        "weighted_edges": False,
        "quantile_bins": 5,
        "numeric_attributes": [],
        "window_start": None,
        "window_end": None,
        "cold_holdout_fraction": 0.0,
        "use_propagation": True,
        "decompose_by_attribute": True,
        "use_awtp": True,
        "awtp_full_gradient": False,
        "mlp_init_std": 0.3,
        "activation": "tanh",
        "restore_best": True,
    },
    "evaluate": {
        "ks_standard": [5, 10, 15],
        "ks_cold": [5, 10, 15, 20],
        "treatment": {
            "group_size": 50,
            "candidates": 30,
            "repetitions": 30,
            "price_delta": 0.1,
            "pool_quantile": 0.25,
            "full_assortment": False,
        },
    },
}


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a section")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return _merge(DEFAULTS, raw)


def set_path(config: dict, dotted: str, value) -> None:
    """Apply one CLI override, e.g. set_path(cfg, 'train.lr', 0.01)."""
    keys = dotted.split(".")
    node = config
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown configuration key '{dotted}'")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown configuration key '{dotted}'")
    node[keys[-1]] = value


def train_config_from(config: dict) -> TrainConfig:
    section = dict(config["train"])
    section["seed"] = config["seed"]
    try:
        cfg = TrainConfig(**section)
        cfg.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad train configuration: {e}")
    return cfg


def sim_config_from(config: dict) -> SimConfig:
    s = config["simulate"]
    try:
        return SimConfig(
            n_consumers=s["consumers"], n_products=s["products"],
            paper_scale=s["paper_scale"], n_attributes=s["attributes"],
            noise_var=s["noise_var"], seed=config["seed"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad simulate configuration: {e}")


def treatment_config_from(config: dict) -> TreatmentConfig:
    t = config["evaluate"]["treatment"]
    return TreatmentConfig(
        group_size=t["group_size"], n_candidates=t["candidates"],
        repetitions=t["repetitions"], price_delta=t["price_delta"],
        pool_quantile=t["pool_quantile"], full_assortment=t["full_assortment"])
