"""Turn simulated interactions into trained cold-item embeddings.

Item-side BPR: each step samples one simulated user as the positive and a
uniform non-simulated user as the negative, and applies the gradient to the
cold item's row only.  Every user row and every warm item row stays
bitwise untouched.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .backbone import BackboneModel
from .corpus import ColdWarmSplit
from .filtering import TwoTowerFilter, map_item
from .refiner import SimulationResult

logger = logging.getLogger(__name__)

INIT_MODES = ("user-mean", "filter-map", "zero")


@dataclass
class WarmupConfig:
    lr: float = 1e-3
    steps: int = 100
    negatives_per_positive: int = 1
    init: str = "user-mean"
    seed: int = 0
    skip_missing: bool = True


@dataclass
class ColdEmbeddingResult:
    item: int
    embedding: np.ndarray
    users: list[int]
    final_loss: float
    fallback_used: bool = False


def init_cold_embedding(item: int, users, backbone: BackboneModel,
                        mode: str, filt_b: TwoTowerFilter | None = None,
                        raw: np.ndarray | None = None) -> np.ndarray:
    """Starting point for a cold item's embedding.

    ``user-mean`` averages the simulated users' embeddings, ``filter-map``
    runs the raw content vector through the behavior filter's item tower,
    ``zero`` starts at the origin.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}, expected one of {INIT_MODES}")
    if mode == "zero":
        return np.zeros(backbone.dim)
    if mode == "user-mean":
        users = list(users)
        if not users:
            raise ValueError(f"user-mean init needs a non-empty simulated set "
                             f"for item {item}")
        return backbone.user_emb[users].mean(axis=0)
    if filt_b is None or raw is None:
        raise ValueError("filter-map init needs the behavior filter and the "
                         "item's raw content vector")
    fvec = map_item(filt_b, raw)
    if fvec.shape[0] != backbone.dim:
        raise ValueError(f"filter output width {fvec.shape[0]} != embedding "
                         f"dim {backbone.dim}")
    return fvec


def warmup_loss(e_item: np.ndarray, pos_emb: np.ndarray,
                neg_emb: np.ndarray) -> float:
    margin = (pos_emb - neg_emb) @ e_item
    return float(np.mean(np.logaddexp(0.0, -margin)))


def optimize_cold_embedding(item: int, users, backbone: BackboneModel,
                            config: WarmupConfig,
                            init: np.ndarray | None = None,
                            filt_b: TwoTowerFilter | None = None,
                            raw: np.ndarray | None = None) -> ColdEmbeddingResult:
    """Item-side BPR on one cold item against its simulated users.

    Only the returned vector is produced; the backbone is read, never
    written.  Deterministic given the config seed (the per-item stream is
    seeded with (seed, item)).
    """
    users = sorted(int(u) for u in users)
    if not users:
        raise ValueError(f"item {item}: simulated user set is empty")
    user_set = set(users)
    if len(user_set) >= backbone.n_users:
        raise ValueError(f"item {item}: simulated users cover every user, "
                         f"cannot sample negatives")
    if init is None:
        init = init_cold_embedding(item, users, backbone, config.init,
                                   filt_b=filt_b, raw=raw)
    e_item = np.asarray(init, dtype=np.float64).copy()
    rng = np.random.default_rng((config.seed, item))
    pos_arr = np.asarray(users, dtype=np.int64)
    loss = 0.0
    for _ in range(config.steps):
        pos = int(pos_arr[rng.integers(len(pos_arr))])
        negs = []
        while len(negs) < config.negatives_per_positive:
            cand = int(rng.integers(backbone.n_users))
            if cand not in user_set:
                negs.append(cand)
        pos_emb = backbone.user_emb[pos]
        neg_emb = backbone.user_emb[negs]
        margin = (pos_emb - neg_emb) @ e_item
        loss = float(np.mean(np.logaddexp(0.0, -margin)))
        coef = -expit(-margin) / len(negs)
        grad = (coef[:, None] * (pos_emb - neg_emb)).sum(axis=0)
        e_item -= config.lr * grad
    return ColdEmbeddingResult(item=item, embedding=e_item, users=users,
                               final_loss=loss)


def warm_all_cold(split: ColdWarmSplit, simulations: dict[int, SimulationResult],
                  backbone: BackboneModel, config: WarmupConfig,
                  filt_b: TwoTowerFilter | None = None,
                  content_matrix: np.ndarray | None = None) -> tuple[BackboneModel, list[dict]]:
    """Replace every cold item row with its optimized embedding.

    Warm rows and the user table are carried over bitwise.  Cold items
    without a simulation (or with an empty one) are reported and skipped
    when ``skip_missing`` is set, otherwise raised.  Items whose simulation
    fell back to the top filtered candidate use the filter-map
    initialization when the behavior filter is available.
    """
    model = backbone.copy()
    report = []
    for item in sorted(split.cold_items):
        sim = simulations.get(item)
        if sim is None or not sim.users:
            msg = "missing simulation" if sim is None else "empty simulation"
            if not config.skip_missing:
                raise ValueError(f"cold item {item}: {msg}")
            logger.warning("cold item %d skipped: %s", item, msg)
            report.append({"item": item, "skipped": msg})
            continue
        init = None
        raw = content_matrix[item] if content_matrix is not None else None
        if (config.init == "user-mean" and sim.fallback_used
                and filt_b is not None and raw is not None):
            init = init_cold_embedding(item, sim.users, backbone, "filter-map",
                                       filt_b=filt_b, raw=raw)
        result = optimize_cold_embedding(item, sim.users, backbone, config,
                                         init=init, filt_b=filt_b, raw=raw)
        model.item_emb[item] = result.embedding
        report.append({"item": item, "n_users": len(sim.users),
                       "final_loss": result.final_loss,
                       "fallback_used": bool(sim.fallback_used)})
    return model, report


def save_warmup_report(path: str | Path, report: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
