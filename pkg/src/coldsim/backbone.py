"""Matrix-factorization backbone trained with BPR on warm interactions.

Embedding tables are float64 numpy arrays in memory and persist through the
float32 binary table format in :mod:`coldsim.store`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from . import store
from .corpus import ColdWarmSplit
from .metrics import ndcg_at_k, rank_by_score

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


class BprTriple(NamedTuple):
    user: int
    pos: int
    neg: int


@dataclass
class BackboneConfig:
    dim: int = 200
    lr: float = 1e-3
    optimizer: str = "sgd"          # "sgd" or "adam" (row-sparse moments)
    l2: float = 0.0
    max_epochs: int = 500
    patience: int = 10
    batch_size: int = 1024
    eval_users: int = 2000
    eval_k: int = 20
    seed: int = 0


@dataclass
class BackboneModel:
    """User/item embedding tables plus training bookkeeping."""

    user_emb: np.ndarray
    item_emb: np.ndarray
    trained_epochs: int = 0
    history: list = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    def copy(self) -> "BackboneModel":
        return BackboneModel(self.user_emb.copy(), self.item_emb.copy(),
                             self.trained_epochs, list(self.history))

    def save(self, out_dir: str | Path, prefix: str = "backbone") -> None:
        out = Path(out_dir)
        store.save_table(out / f"{prefix}_user.cemb", self.user_emb)
        store.save_table(out / f"{prefix}_item.cemb", self.item_emb)

    @classmethod
    def load(cls, out_dir: str | Path, prefix: str = "backbone") -> "BackboneModel":
        out = Path(out_dir)
        user = store.load_table(out / f"{prefix}_user.cemb").astype(np.float64)
        item = store.load_table(out / f"{prefix}_item.cemb").astype(np.float64)
        return cls(user_emb=user, item_emb=item)


def init_embeddings(rows: int, dim: int, seed: int) -> np.ndarray:
    """Fresh table with entries i.i.d. normal(0, 0.01); deterministic per seed."""
    if rows < 0 or dim < 1:
        raise ValueError(f"bad table shape ({rows}, {dim})")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, dim)) * 0.01


def _sample_negative(rng, user: int, warm_items: np.ndarray, observed: set,
                     max_rejects: int = 100) -> int | None:
    for _ in range(max_rejects):
        j = int(warm_items[rng.integers(len(warm_items))])
        if (user, j) not in observed:
            return j
    return None


def sample_bpr_triples(interactions, warm_items, n: int, seed: int,
                       max_rejects: int = 100) -> list[BprTriple]:
    """Sample ``n`` (user, positive, negative) triples.

    Positives are drawn uniformly with replacement from ``interactions``;
    negatives are rejection-sampled uniformly from ``warm_items`` until the
    pair is unobserved.  A positive whose user rejects ``max_rejects``
    candidates is skipped with a warning and redrawn.
    """
    interactions = list(interactions)
    if not interactions:
        raise ValueError("cannot sample triples from an empty split")
    observed = set(interactions)
    warm = np.asarray(sorted(warm_items), dtype=np.int64)
    rng = np.random.default_rng(seed)
    out: list[BprTriple] = []
    skipped = 0
    attempts = 0
    limit = max(10 * n, n + 1000)
    while len(out) < n and attempts < limit:
        attempts += 1
        u, i = interactions[rng.integers(len(interactions))]
        j = _sample_negative(rng, u, warm, observed, max_rejects)
        if j is None:
            skipped += 1
            continue
        out.append(BprTriple(u, i, j))
    if skipped:
        logger.warning("sample_bpr_triples: skipped %d exhausted users", skipped)
    if len(out) < n:
        logger.warning("sample_bpr_triples: produced %d of %d requested triples",
                       len(out), n)
    return out


def bpr_loss(model: BackboneModel, triples) -> float:
    """Mean BPR loss -ln sigmoid(margin) for a batch, no update."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    eu = model.user_emb[t[:, 0]]
    margin = np.einsum("bd,bd->b", eu, model.item_emb[t[:, 1]] - model.item_emb[t[:, 2]])
    return float(np.mean(np.logaddexp(0.0, -margin)))


def bpr_step(model: BackboneModel, triples, lr: float, l2: float = 0.0) -> float:
    """One SGD step of the BPR objective on the rows named in the batch.

    Returns the pre-step mean loss.  Only the user, positive, and negative
    rows that appear in the batch are touched.
    """
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if t.size == 0:
        return 0.0
    users, pos, neg = t[:, 0], t[:, 1], t[:, 2]
    eu, ei, ej = model.user_emb[users], model.item_emb[pos], model.item_emb[neg]
    margin = np.einsum("bd,bd->b", eu, ei - ej)
    loss = float(np.mean(np.logaddexp(0.0, -margin)))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite BPR loss {loss}")

    coef = (-expit(-margin) / len(t))[:, None]
    grad_u = coef * (ei - ej)
    grad_i = coef * eu
    grad_j = -coef * eu
    if l2:
        grad_u = grad_u + (l2 / len(t)) * eu
        grad_i = grad_i + (l2 / len(t)) * ei
        grad_j = grad_j + (l2 / len(t)) * ej
    # scatter-add handles repeated rows within one batch
    np.add.at(model.user_emb, users, -lr * grad_u)
    np.add.at(model.item_emb, pos, -lr * grad_i)
    np.add.at(model.item_emb, neg, -lr * grad_j)
    return loss


def score(model: BackboneModel, u: int, i: int) -> float:
    """Dot product of user and item embedding rows."""
    if not 0 <= u < model.n_users:
        raise IndexError(f"user id {u} out of bounds (n_users={model.n_users})")
    if not 0 <= i < model.n_items:
        raise IndexError(f"item id {i} out of bounds (n_items={model.n_items})")
    return float(model.user_emb[u] @ model.item_emb[i])


def _epoch_triples(rng, positives, warm_items, observed, max_rejects=100):
    """One negative per observed positive, positives visited in random order."""
    order = rng.permutation(len(positives))
    out = np.empty((len(positives), 3), dtype=np.int64)
    n_out = 0
    skipped = 0
    for k in order:
        u, i = positives[k]
        j = _sample_negative(rng, u, warm_items, observed, max_rejects)
        if j is None:
            skipped += 1
            continue
        out[n_out] = (u, i, j)
        n_out += 1
    if skipped:
        logger.warning("epoch sampling skipped %d exhausted positives", skipped)
    return out[:n_out]


def validation_ndcg(model: BackboneModel, split: ColdWarmSplit, users,
                    k: int = 20) -> float:
    """NDCG@k of warm-item rankings against warm-val positives.

    Used for early stopping; ranks warm items only, with each user's
    warm-train positives masked out.
    """
    val_of: dict[int, set] = {}
    for u, i in split.warm_val:
        val_of.setdefault(u, set()).add(i)
    warm = np.asarray(split.warm_items, dtype=np.int64)
    item_mat = model.item_emb[warm]
    total, n_eval = 0.0, 0
    train_set = split.warm_train_set
    for u in users:
        rel = val_of.get(u)
        if not rel:
            continue
        scores = item_mat @ model.user_emb[u]
        masked = np.array([(u, int(i)) in train_set for i in warm])
        scores = np.where(masked, -np.inf, scores)
        ranked = rank_by_score(scores, ids=warm, k=k)
        total += ndcg_at_k(ranked.tolist(), rel, k)
        n_eval += 1
    return total / n_eval if n_eval else 0.0


def train_backbone(split: ColdWarmSplit, config: BackboneConfig,
                   n_users: int | None = None, n_items: int | None = None) -> BackboneModel:
    """Train MF embeddings with BPR and NDCG early stopping.

    One sampled negative per observed warm-train positive per epoch.  After
    each epoch, NDCG@``eval_k`` on a fixed sample of warm-val users decides
    early stopping with the configured patience; the best-NDCG snapshot is
    returned.  Cold item rows stay at their random initialization.
    """
    if not split.warm_train:
        raise ValueError("warm-train split is empty")
    if n_users is None:
        n_users = 1 + max(u for u, _ in split.warm_train + split.warm_val +
                          split.warm_test + split.cold_val + split.cold_test)
    if n_items is None:
        n_items = 1 + max(max(split.warm_items), max(split.cold_items, default=-1))

    model = BackboneModel(
        user_emb=init_embeddings(n_users, config.dim, config.seed),
        item_emb=init_embeddings(n_items, config.dim, config.seed + 1),
    )
    if config.max_epochs <= 0:
        return model

    rng = np.random.default_rng(config.seed + 2)
    positives = list(split.warm_train)
    warm = np.asarray(split.warm_items, dtype=np.int64)
    observed = split.warm_train_set

    val_users = sorted({u for u, _ in split.warm_val})
    if len(val_users) > config.eval_users:
        pick = rng.choice(len(val_users), size=config.eval_users, replace=False)
        val_users = [val_users[k] for k in sorted(pick)]

    adam_state = None
    if config.optimizer == "adam":
        adam_state = {
            "mu": np.zeros_like(model.user_emb), "vu": np.zeros_like(model.user_emb),
            "mi": np.zeros_like(model.item_emb), "vi": np.zeros_like(model.item_emb),
            "tu": np.zeros(n_users, dtype=np.int64),
            "ti": np.zeros(n_items, dtype=np.int64),
        }
    elif config.optimizer != "sgd":
        raise ValueError(f"unknown optimizer {config.optimizer!r}")

    lr = config.lr
    best = model.copy()
    best_ndcg, best_epoch, stale = -1.0, 0, 0
    for epoch in range(1, config.max_epochs + 1):
        triples = _epoch_triples(rng, positives, warm, observed)
        losses = []
        for start in range(0, len(triples), config.batch_size):
            batch = triples[start:start + config.batch_size]
            try:
                if adam_state is None:
                    losses.append(bpr_step(model, batch, lr, config.l2))
                else:
                    losses.append(_adam_bpr_step(model, batch, lr, config.l2,
                                                 adam_state))
            except DivergenceError:
                lr /= 2
                logger.warning("divergence at epoch %d, halving lr to %g", epoch, lr)
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        val = validation_ndcg(model, split, val_users, config.eval_k)
        model.history.append({"epoch": epoch, "loss": epoch_loss, "val_ndcg": val})
        if val > best_ndcg:
            best_ndcg, best_epoch, stale = val, epoch, 0
            best = model.copy()
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (best %d, ndcg %.4f)",
                            epoch, best_epoch, best_ndcg)
                break
    best.trained_epochs = best_epoch
    best.history = model.history
    return best


def _adam_bpr_step(model, triples, lr, l2, state,
                   beta1=0.9, beta2=0.999, eps=1e-8) -> float:
    """BPR step with row-sparse Adam moments; touches only batch rows."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if t.size == 0:
        return 0.0
    users, pos, neg = t[:, 0], t[:, 1], t[:, 2]
    eu, ei, ej = model.user_emb[users], model.item_emb[pos], model.item_emb[neg]
    margin = np.einsum("bd,bd->b", eu, ei - ej)
    loss = float(np.mean(np.logaddexp(0.0, -margin)))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite BPR loss {loss}")
    coef = (-expit(-margin) / len(t))[:, None]

    gu = np.zeros_like(model.user_emb)
    gi = np.zeros_like(model.item_emb)
    np.add.at(gu, users, coef * (ei - ej) + (l2 / len(t)) * eu)
    np.add.at(gi, pos, coef * eu + (l2 / len(t)) * ei)
    np.add.at(gi, neg, -coef * eu + (l2 / len(t)) * ej)

    for rows, grad, m_key, v_key, t_key, table in (
            (np.unique(users), gu, "mu", "vu", "tu", model.user_emb),
            (np.unique(np.concatenate([pos, neg])), gi, "mi", "vi", "ti",
             model.item_emb)):
        m, v, steps = state[m_key], state[v_key], state[t_key]
        steps[rows] += 1
        m[rows] = beta1 * m[rows] + (1 - beta1) * grad[rows]
        v[rows] = beta2 * v[rows] + (1 - beta2) * grad[rows] ** 2
        tr = steps[rows][:, None]
        m_hat = m[rows] / (1 - beta1 ** tr)
        v_hat = v[rows] / (1 - beta2 ** tr)
        table[rows] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return loss
