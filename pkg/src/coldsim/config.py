"""Experiment configuration: defaults, JSON loading, seed resolution."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path


def default_config() -> dict:
    """Every tunable with its default; the template behind ``default-config``."""
    return {
        "seed": 0,
        "data": {
            "dataset": "citeulike",
            "path": None,
            "min_rating": 0,
            "cold_frac": 0.2,
            "seed": None,
        },
        "backbone": {
            "dim": 200,
            "lr": 1e-3,
            "optimizer": "sgd",
            "l2": 0.0,
            "max_epochs": 500,
            "patience": 10,
            "batch_size": 1024,
            "eval_users": 2000,
            "eval_k": 20,
            "seed": None,
        },
        "content": {
            "provider": "mock",
            "dim": 256,
            "hash_seed": 0,
            "endpoint": None,
            "timeout": 30.0,
            "retries": 3,
            "max_inflight": 8,
        },
        "filter": {
            "hidden": 200,
            "out": 200,
            "lr": 1e-5,
            "batch_size": 128,
            "optimizer": "adamw",
            "weight_decay": 0.0,
            "max_epochs": 100,
            "patience": 10,
            "coupled_weight": 1.0,
            "label_pairs": None,
            "eval_users": 2000,
            "eval_k": 20,
            "seed": None,
        },
        "refiner": {
            "oracle": "mock-threshold",
            "tau": 0.3,
            "endpoint": None,
            "chat": False,
            "k": 20,
            "context_len": 10,
            "fallback_to_top1": True,
            "max_inflight": 8,
            "retries": 3,
            "timeout": 30.0,
            "finetune_mode": "offline",
            "finetune_positives": None,
        },
        "warmup": {
            "lr": 1e-3,
            "steps": 100,
            "negatives_per_positive": 1,
            "init": "user-mean",
            "retrain_with_simulated": False,
            "seed": None,
        },
        "eval": {
            "k": 20,
            "users": 2000,
            "seed": None,
        },
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ValueError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None) -> dict:
    """Defaults overlaid with the JSON document at ``path`` (if given)."""
    cfg = default_config()
    if path is None:
        return cfg
    with open(path, encoding="utf-8") as fh:
        user_cfg = json.load(fh)
    return _merge(cfg, user_cfg)


def resolve_seeds(cfg: dict, seed_override: int | None = None) -> dict:
    """Fill per-section null seeds from the global seed."""
    cfg = copy.deepcopy(cfg)
    if seed_override is not None:
        cfg["seed"] = seed_override
    base = cfg["seed"]
    for section in ("data", "backbone", "filter", "warmup", "eval"):
        if cfg[section].get("seed") is None:
            cfg[section]["seed"] = base
    return cfg


def fingerprint(cfg: dict) -> str:
    """Stable short hash of a resolved config."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"
