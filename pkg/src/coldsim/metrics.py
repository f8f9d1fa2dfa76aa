"""Top-K ranking metrics with binary relevance."""

from __future__ import annotations

import logging
import math

import numpy as np

logger = logging.getLogger(__name__)


def recall_at_k(ranked, relevant, k: int) -> float:
    """|top-K hits| / |relevant|; 0.0 (logged) when relevant is empty."""
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicates")
    relevant = set(relevant)
    if not relevant:
        logger.debug("recall_at_k: empty relevant set, returning 0")
        return 0.0
    hits = sum(1 for item in ranked[:k] if item in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    """Binary-relevance NDCG: DCG uses 1/log2(rank+1), IDCG fills the top slots."""
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicates")
    relevant = set(relevant)
    if not relevant:
        logger.debug("ndcg_at_k: empty relevant set, returning 0")
        return 0.0
    dcg = sum(1.0 / math.log2(rank + 1)
              for rank, item in enumerate(ranked[:k], start=1)
              if item in relevant)
    ideal = sum(1.0 / math.log2(rank + 1)
                for rank in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


def rank_by_score(scores: np.ndarray, ids: np.ndarray | None = None,
                  k: int | None = None) -> np.ndarray:
    """Indices (or ids) sorted by descending score, ties by ascending id.

    The tie rule is exact: equal float scores order by id.
    """
    scores = np.asarray(scores)
    if ids is None:
        ids = np.arange(len(scores))
    else:
        ids = np.asarray(ids)
    order = np.lexsort((ids, -scores))
    ranked = ids[order]
    return ranked if k is None else ranked[:k]
