"""Two-tower candidate filtering over a shared 200-d space.

Each filter pairs a user tower (input: behavior embedding concatenated
with the mean content vector of the user's train history) with an item
tower (input: the item's raw content vector).  Candidates for an item are
the top-K users by dot product.  Two trained variants exist side by side:

* ``B``: trained with pairwise BPR on observed interactions.
* ``L``: trained to imitate the yes/no oracle with a cross-entropy loss on
  labeled pairs, plus a weighted BPR term.

The funnel merges both variants' rankings by interleaving.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import store
from .backbone import BackboneModel, DivergenceError
from .corpus import ColdWarmSplit
from .metrics import ndcg_at_k, rank_by_score

logger = logging.getLogger(__name__)

PROB_CLIP = 1e-7


@dataclass
class TowerMlp:
    """input -> rectified hidden -> linear output perceptron."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d_in: int, hidden: int, d_out: int, seed: int) -> "TowerMlp":
        rng = np.random.default_rng(seed)
        return cls(w1=rng.standard_normal((d_in, hidden)) / np.sqrt(d_in),
                   b1=np.zeros(hidden),
                   w2=rng.standard_normal((hidden, d_out)) / np.sqrt(hidden),
                   b2=np.zeros(d_out))

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "TowerMlp":
        return TowerMlp(self.w1.copy(), self.b1.copy(),
                        self.w2.copy(), self.b2.copy())

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        hidden = np.maximum(x @ self.w1 + self.b1, 0.0)
        out = hidden @ self.w2 + self.b2
        return out[0] if squeeze else out

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping activations for :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        pre = x @ self.w1 + self.b1
        hidden = np.maximum(pre, 0.0)
        out = hidden @ self.w2 + self.b2
        return out, (x, pre, hidden)

    def backward(self, ctx, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for a batch given d(loss)/d(output)."""
        x, pre, hidden = ctx
        d_hidden = (d_out @ self.w2.T) * (pre > 0.0)
        return {"w1": x.T @ d_hidden, "b1": d_hidden.sum(axis=0),
                "w2": hidden.T @ d_out, "b2": d_out.sum(axis=0)}


@dataclass
class TwoTowerFilter:
    variant: str                  # "B" or "L"
    user_tower: TowerMlp
    item_tower: TowerMlp

    @classmethod
    def init(cls, variant: str, backbone_dim: int, content_dim: int,
             hidden: int = 200, out: int = 200, seed: int = 0) -> "TwoTowerFilter":
        if variant not in ("B", "L"):
            raise ValueError(f"variant must be 'B' or 'L', got {variant!r}")
        return cls(variant=variant,
                   user_tower=TowerMlp.init(backbone_dim + content_dim, hidden,
                                            out, seed),
                   item_tower=TowerMlp.init(content_dim, hidden, out, seed + 1))

    def copy(self) -> "TwoTowerFilter":
        return TwoTowerFilter(self.variant, self.user_tower.copy(),
                              self.item_tower.copy())

    def save(self, out_dir: str | Path, train_config: dict | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for tower_name, tower in (("user", self.user_tower), ("item", self.item_tower)):
            for pname, arr in tower.params().items():
                mat = arr if arr.ndim == 2 else arr[None, :]
                store.save_table(out / f"{tower_name}_{pname}.cemb", mat)
        manifest = {
            "variant": self.variant,
            "user_d_in": self.user_tower.d_in,
            "item_d_in": self.item_tower.d_in,
            "hidden": self.user_tower.w1.shape[1],
            "out": self.user_tower.d_out,
            "train_config": train_config,
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, out_dir: str | Path) -> "TwoTowerFilter":
        out = Path(out_dir)
        with open(out / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        towers = {}
        for tower_name in ("user", "item"):
            raw = {p: store.load_table(out / f"{tower_name}_{p}.cemb").astype(np.float64)
                   for p in ("w1", "b1", "w2", "b2")}
            towers[tower_name] = TowerMlp(w1=raw["w1"], b1=raw["b1"][0],
                                          w2=raw["w2"], b2=raw["b2"][0])
        return cls(variant=manifest["variant"], user_tower=towers["user"],
                   item_tower=towers["item"])


@dataclass
class CandidateSet:
    """Ranked candidate users for one item.

    ``scores`` is None for funnel output, where ranks merged from two
    filters carry no comparable score.
    """

    item: int | None
    users: list[int]
    scores: list[float] | None = None


def map_item(filt: TwoTowerFilter, raw: np.ndarray) -> np.ndarray:
    """Filter vector of an item from its raw content vector."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != filt.item_tower.d_in:
        raise ValueError(f"raw vector width {raw.shape[-1]} != item tower input "
                         f"{filt.item_tower.d_in}")
    return filt.item_tower.forward(raw)


def map_user(filt: TwoTowerFilter, e_u: np.ndarray,
             hist_content: np.ndarray | None = None) -> np.ndarray:
    """Filter vector of a user from behavior embedding plus history content.

    ``hist_content`` is the mean raw content vector of the user's train
    history; users with no history pass the zero block.
    """
    e_u = np.asarray(e_u, dtype=np.float64)
    content_dim = filt.user_tower.d_in - e_u.shape[-1]
    if content_dim < 0:
        raise ValueError(f"behavior embedding width {e_u.shape[-1]} exceeds user "
                         f"tower input {filt.user_tower.d_in}")
    if hist_content is None:
        hist_content = np.zeros(content_dim)
    hist_content = np.asarray(hist_content, dtype=np.float64)
    if hist_content.shape[-1] != content_dim:
        raise ValueError(f"history content width {hist_content.shape[-1]} != "
                         f"expected {content_dim}")
    return filt.user_tower.forward(np.concatenate([e_u, hist_content]))


def history_content_means(train_items: list[list[int]],
                          content_matrix: np.ndarray) -> np.ndarray:
    """Per-user mean raw content vector over train history; zeros when empty."""
    n_users = len(train_items)
    out = np.zeros((n_users, content_matrix.shape[1]))
    for u, items in enumerate(train_items):
        if items:
            out[u] = content_matrix[items].mean(axis=0)
    return out


def user_filter_vectors(filt: TwoTowerFilter, user_emb: np.ndarray,
                        hist_means: np.ndarray) -> np.ndarray:
    """Precompute all users' filter vectors; rows align with user ids."""
    inputs = np.concatenate([user_emb, hist_means], axis=1)
    return filt.user_tower.forward(inputs)


def topk_candidates(filt: TwoTowerFilter, raw_item: np.ndarray,
                    user_vectors: np.ndarray, k: int,
                    item: int | None = None) -> CandidateSet:
    """Exact top-K users by dot product with the item's filter vector.

    Ties break by ascending user id; K beyond the user count returns the
    full ranking.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    f_i = map_item(filt, raw_item)
    scores = user_vectors @ f_i
    ranked = rank_by_score(scores, k=min(k, len(scores)))
    return CandidateSet(item=item, users=ranked.tolist(),
                        scores=scores[ranked].tolist())


class InnerProductIndex:
    """Exact maximum-inner-product index over fixed user vectors.

    Uses a partition-and-repair strategy rather than a full argsort; results
    are guaranteed identical to brute force, including the ascending-id tie
    rule.
    """

    def __init__(self, vectors: np.ndarray):
        self.vectors = np.asarray(vectors, dtype=np.float64)

    def query(self, q: np.ndarray, k: int):
        scores = self.vectors @ np.asarray(q, dtype=np.float64)
        n = len(scores)
        k = min(k, n)
        if k == n:
            ids = rank_by_score(scores)
            return ids, scores[ids]
        kth = np.partition(scores, n - k)[n - k]
        above = np.flatnonzero(scores > kth)
        ties = np.flatnonzero(scores == kth)
        above = above[rank_by_score(scores[above])] if len(above) else above
        take = k - len(above)
        ids = np.concatenate([above, np.sort(ties)[:take]]).astype(np.int64)
        return ids, scores[ids]


def funnel_filter(raw_item: np.ndarray, k: int,
                  filter_b: TwoTowerFilter | None = None,
                  filter_l: TwoTowerFilter | None = None,
                  users_b: np.ndarray | None = None,
                  users_l: np.ndarray | None = None,
                  item: int | None = None) -> CandidateSet:
    """Merge both filters' rankings into one candidate list.

    Candidates are drawn alternately from the coupled (L) and behavior (B)
    rankings, L first, skipping duplicates, until K distinct users are
    collected.  With a single filter supplied, its ranking is used alone.
    """
    rankings = []
    if filter_l is not None:
        if users_l is None:
            raise ValueError("filter L supplied without its user vectors")
        rankings.append(topk_candidates(filter_l, raw_item, users_l, k).users)
    if filter_b is not None:
        if users_b is None:
            raise ValueError("filter B supplied without its user vectors")
        rankings.append(topk_candidates(filter_b, raw_item, users_b, k).users)
    if not rankings:
        raise ValueError("funnel_filter needs at least one trained filter")

    merged: list[int] = []
    seen: set[int] = set()
    for pos in range(max(len(r) for r in rankings)):
        for ranking in rankings:
            if pos < len(ranking) and ranking[pos] not in seen:
                seen.add(ranking[pos])
                merged.append(ranking[pos])
        if len(merged) >= k:
            break
    return CandidateSet(item=item, users=merged[:k], scores=None)


@dataclass
class FilterTrainConfig:
    lr: float = 1e-5
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    optimizer: str = "adamw"      # "adamw" or "sgd"
    weight_decay: float = 0.0
    coupled_weight: float = 1.0   # BPR weight in the coupled loss
    label_pairs: int | None = None  # positives in the oracle-label pool; None = all
    eval_users: int = 2000
    eval_k: int = 20
    seed: int = 0


class _AdamW:
    def __init__(self, towers: dict[str, TowerMlp], lr, weight_decay,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {tn: {p: np.zeros_like(a) for p, a in tw.params().items()}
                  for tn, tw in towers.items()}
        self.v = {tn: {p: np.zeros_like(a) for p, a in tw.params().items()}
                  for tn, tw in towers.items()}

    def step(self, towers: dict[str, TowerMlp], grads: dict[str, dict]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for tn, tower in towers.items():
            params = tower.params()
            for p, g in grads[tn].items():
                m = self.m[tn][p]
                v = self.v[tn][p]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                arr = params[p]
                arr -= self.lr * ((m / c1) / (np.sqrt(v / c2) + self.eps)
                                  + self.wd * arr)


def _sgd_step(towers: dict[str, TowerMlp], grads: dict[str, dict], lr: float) -> None:
    for tn, tower in towers.items():
        params = tower.params()
        for p, g in grads[tn].items():
            params[p] -= lr * g


def _merge_grads(*grad_dicts):
    out = {}
    for gd in grad_dicts:
        for p, g in gd.items():
            out[p] = out.get(p, 0) + g
    return out


def behavior_bpr_batch(filt: TwoTowerFilter, user_inputs: np.ndarray,
                       raw_pos: np.ndarray, raw_neg: np.ndarray,
                       scale: float = 1.0):
    """Mean BPR loss on a triple batch and tower-parameter gradients.

    Score(u, i) is user_tower(u) . item_tower(raw_i); the loss encourages
    the observed item's score above the sampled negative's.
    """
    fu, ctx_u = filt.user_tower.forward_cached(user_inputs)
    fi, ctx_i = filt.item_tower.forward_cached(raw_pos)
    fj, ctx_j = filt.item_tower.forward_cached(raw_neg)
    margin = np.einsum("bd,bd->b", fu, fi - fj)
    batch = len(margin)
    loss = float(np.mean(np.logaddexp(0.0, -margin))) * scale
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite filter BPR loss {loss}")
    coef = (-expit(-margin) * scale / batch)[:, None]
    g_user = filt.user_tower.backward(ctx_u, coef * (fi - fj))
    g_item = _merge_grads(filt.item_tower.backward(ctx_i, coef * fu),
                          filt.item_tower.backward(ctx_j, -coef * fu))
    return loss, {"user": g_user, "item": g_item}


def coupled_ce_batch(filt: TwoTowerFilter, user_inputs: np.ndarray,
                     raw_items: np.ndarray, labels: np.ndarray,
                     scale: float = 1.0):
    """Mean cross-entropy of sigmoid(dot) against oracle labels, with grads.

    Probabilities are clipped to [1e-7, 1 - 1e-7] inside the log only; the
    gradient uses the exact sigmoid.
    """
    fu, ctx_u = filt.user_tower.forward_cached(user_inputs)
    fi, ctx_i = filt.item_tower.forward_cached(raw_items)
    logits = np.einsum("bd,bd->b", fu, fi)
    prob = expit(logits)
    clipped = np.clip(prob, PROB_CLIP, 1.0 - PROB_CLIP)
    z = np.asarray(labels, dtype=np.float64)
    batch = len(z)
    loss = float(-np.mean(z * np.log(clipped) + (1 - z) * np.log1p(-clipped))) * scale
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite coupled CE loss {loss}")
    coef = ((prob - z) * scale / batch)[:, None]
    g_user = filt.user_tower.backward(ctx_u, coef * fi)
    g_item = filt.item_tower.backward(ctx_i, coef * fu)
    return loss, {"user": g_user, "item": g_item}


def filter_validation_ndcg(filt: TwoTowerFilter, backbone: BackboneModel,
                           content_matrix: np.ndarray, hist_means: np.ndarray,
                           split: ColdWarmSplit, users, k: int = 20) -> float:
    """NDCG@k of filter-scored warm-item rankings against warm-val positives."""
    val_of: dict[int, set] = {}
    for u, i in split.warm_val:
        val_of.setdefault(u, set()).add(i)
    warm = np.asarray(split.warm_items, dtype=np.int64)
    item_vecs = filt.item_tower.forward(content_matrix[warm])
    train_set = split.warm_train_set
    total, n_eval = 0.0, 0
    for u in users:
        rel = val_of.get(u)
        if not rel:
            continue
        fu = map_user(filt, backbone.user_emb[u], hist_means[u])
        scores = item_vecs @ fu
        masked = np.array([(u, int(i)) in train_set for i in warm])
        scores = np.where(masked, -np.inf, scores)
        ranked = rank_by_score(scores, ids=warm, k=k)
        total += ndcg_at_k(ranked.tolist(), rel, k)
        n_eval += 1
    return total / n_eval if n_eval else 0.0


def _epoch_pairs_with_negatives(rng, positives, warm_items, observed):
    order = rng.permutation(len(positives))
    triples = []
    for idx in order:
        u, i = positives[idx]
        for _ in range(100):
            j = int(warm_items[rng.integers(len(warm_items))])
            if (u, j) not in observed:
                triples.append((u, i, j))
                break
    return np.asarray(triples, dtype=np.int64).reshape(-1, 3)


def _run_filter_training(filt, backbone, content_matrix, hist_means, split,
                         config, batch_fn):
    """Shared epoch loop: batches, optimizer step, NDCG early stop."""
    rng = np.random.default_rng(config.seed)
    user_inputs = np.concatenate([backbone.user_emb, hist_means], axis=1)
    towers = {"user": filt.user_tower, "item": filt.item_tower}
    opt = None
    if config.optimizer == "adamw":
        opt = _AdamW(towers, config.lr, config.weight_decay)
    elif config.optimizer != "sgd":
        raise ValueError(f"unknown optimizer {config.optimizer!r}")

    val_users = sorted({u for u, _ in split.warm_val})
    if len(val_users) > config.eval_users:
        pick = rng.choice(len(val_users), size=config.eval_users, replace=False)
        val_users = [val_users[idx] for idx in sorted(pick)]

    best = filt.copy()
    best_ndcg, stale = -1.0, 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for batch_inputs in batch_fn(rng, user_inputs):
            loss, grads = batch_inputs
            losses.append(loss)
            if opt is not None:
                opt.step(towers, grads)
            else:
                _sgd_step(towers, grads, config.lr)
        val = filter_validation_ndcg(filt, backbone, content_matrix, hist_means,
                                     split, val_users, config.eval_k)
        history.append({"epoch": epoch,
                        "loss": float(np.mean(losses)) if losses else 0.0,
                        "val_ndcg": val})
        if val > best_ndcg:
            best_ndcg, stale = val, 0
            best = filt.copy()
        else:
            stale += 1
            if stale >= config.patience:
                break
    filt.user_tower, filt.item_tower = best.user_tower, best.item_tower
    return filt, history


def train_behavior_filter(filt: TwoTowerFilter, backbone: BackboneModel,
                          content_matrix: np.ndarray, split: ColdWarmSplit,
                          config: FilterTrainConfig):
    """Train the B variant with BPR over warm-train triples.

    Backbone embeddings and content vectors are frozen inputs; one fresh
    negative is sampled per positive per epoch.  Returns the filter (best
    validation-NDCG snapshot) and the epoch history.
    """
    if not split.warm_train:
        raise ValueError("warm-train split is empty")
    positives = list(split.warm_train)
    warm = np.asarray(split.warm_items, dtype=np.int64)
    observed = split.warm_train_set
    hist_means = history_content_means(
        split.train_items_of(backbone.n_users), content_matrix)

    def batches(rng, user_inputs):
        triples = _epoch_pairs_with_negatives(rng, positives, warm, observed)
        for start in range(0, len(triples), config.batch_size):
            b = triples[start:start + config.batch_size]
            yield behavior_bpr_batch(filt, user_inputs[b[:, 0]],
                                     content_matrix[b[:, 1]],
                                     content_matrix[b[:, 2]])

    return _run_filter_training(filt, backbone, content_matrix, hist_means,
                                split, config, batches)


def sample_label_pairs(split: ColdWarmSplit, n_positives: int | None,
                       seed: int) -> list[tuple[int, int]]:
    """1:1 pool of warm-train positives and uniform unobserved (user, warm item) pairs."""
    rng = np.random.default_rng(seed)
    positives = list(split.warm_train)
    if n_positives is not None and n_positives < len(positives):
        pick = rng.choice(len(positives), size=n_positives, replace=False)
        positives = [positives[idx] for idx in sorted(pick)]
    users = sorted({u for u, _ in split.warm_train})
    warm = np.asarray(split.warm_items, dtype=np.int64)
    observed = split.warm_train_set
    pairs = list(positives)
    for _ in positives:
        for _ in range(100):
            u = users[rng.integers(len(users))]
            i = int(warm[rng.integers(len(warm))])
            if (u, i) not in observed:
                pairs.append((u, i))
                break
    return pairs


def train_coupled_filter(filt: TwoTowerFilter, backbone: BackboneModel,
                         content_matrix: np.ndarray, split: ColdWarmSplit,
                         labeler, config: FilterTrainConfig,
                         pair_sampler=None):
    """Train the L variant against oracle labels.

    ``labeler(user, item) -> 0 or 1`` supplies the oracle decision for each
    pool pair (failures skip the pair and are counted).  The loss is
    cross-entropy of sigmoid(dot) against the labels plus
    ``coupled_weight`` times the BPR term over warm-train triples.
    Returns (filter, history).
    """
    if not split.warm_train:
        raise ValueError("warm-train split is empty")
    sampler = pair_sampler or (lambda: sample_label_pairs(
        split, config.label_pairs, config.seed + 17))
    pool = sampler()

    labeled = []
    failures = 0
    for u, i in pool:
        try:
            labeled.append((u, i, int(labeler(u, i))))
        except Exception as exc:  # noqa: BLE001 - oracle errors skip the pair
            failures += 1
            logger.debug("labeler failed for (%d, %d): %s", u, i, exc)
    if failures:
        logger.warning("oracle labeling failed for %d of %d pairs",
                       failures, len(pool))
    if not labeled:
        raise ValueError("no labeled pairs available for coupled training")
    labeled_arr = np.asarray(labeled, dtype=np.int64)

    positives = list(split.warm_train)
    warm = np.asarray(split.warm_items, dtype=np.int64)
    observed = split.warm_train_set
    hist_means = history_content_means(
        split.train_items_of(backbone.n_users), content_matrix)

    def batches(rng, user_inputs):
        order = rng.permutation(len(labeled_arr))
        triples = _epoch_pairs_with_negatives(rng, positives, warm, observed)
        n_batches = max(1, int(np.ceil(len(order) / config.batch_size)))
        for bi in range(n_batches):
            sel = labeled_arr[order[bi * config.batch_size:(bi + 1) * config.batch_size]]
            loss, grads = coupled_ce_batch(filt, user_inputs[sel[:, 0]],
                                           content_matrix[sel[:, 1]],
                                           sel[:, 2].astype(np.float64))
            if config.coupled_weight > 0 and len(triples):
                tsel = triples[(bi * config.batch_size) % len(triples):]
                tsel = tsel[:config.batch_size]
                if len(tsel):
                    bpr_loss, bpr_grads = behavior_bpr_batch(
                        filt, user_inputs[tsel[:, 0]], content_matrix[tsel[:, 1]],
                        content_matrix[tsel[:, 2]], scale=config.coupled_weight)
                    loss += bpr_loss
                    grads = {tn: _merge_grads(grads[tn], bpr_grads[tn])
                             for tn in grads}
            yield loss, grads

    return _run_filter_training(filt, backbone, content_matrix, hist_means,
                                split, config, batches)
