"""Offline evaluation: full-ranking Recall@K / NDCG@K and adoption rate.

Every task ranks the whole item catalog for each sampled user, with the
user's warm-train positives masked out; the tasks differ in the relevant
set (overall: warm-test plus cold-test positives, warm: warm-test only,
cold: cold-test only).  Metrics are macro-averaged over users.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .backbone import BackboneModel
from .corpus import ColdWarmSplit
from .metrics import ndcg_at_k, rank_by_score, recall_at_k

logger = logging.getLogger(__name__)

TASKS = ("overall", "warm", "cold")


@dataclass
class EvalReport:
    task: str
    k: int
    recall: float
    ndcg: float
    n_users: int
    seed: int
    fingerprint: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass
class AdoptionStats:
    filtered: int
    accepted: int

    @property
    def rate(self) -> float:
        return self.accepted / self.filtered


def relevant_sets(split: ColdWarmSplit, task: str) -> dict[int, set]:
    """Per-user relevant items for a task."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    sources = {"overall": split.warm_test + split.cold_test,
               "warm": split.warm_test,
               "cold": split.cold_test}[task]
    rel: dict[int, set] = {}
    for u, i in sources:
        rel.setdefault(u, set()).add(i)
    return rel


def sample_eval_users(eligible, n_users_total: int, sample: int,
                      seed: int) -> list[int]:
    """First ``sample`` eligible users of a seed-fixed permutation of all users.

    The permutation is shared across tasks for one seed; each task keeps
    its own eligible subset of it.
    """
    eligible = set(eligible)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_users_total)
    picked = [int(u) for u in perm if u in eligible]
    return picked[:sample]


def evaluate(model: BackboneModel, split: ColdWarmSplit, task: str = "overall",
             k: int = 20, n_users: int = 2000, seed: int = 0,
             fingerprint: str = "") -> EvalReport:
    """Macro-averaged Recall@K and NDCG@K over a sampled user set.

    Samples up to ``n_users`` users having at least one test positive for
    the task.  Scores are embedding dot products over the full catalog with
    each user's warm-train positives excluded.
    """
    rel = relevant_sets(split, task)
    users = sample_eval_users(rel, model.n_users, n_users, seed)
    if not users:
        raise ValueError(f"no eligible users for task {task!r}")

    train_of: dict[int, list] = {}
    for u, i in split.warm_train:
        train_of.setdefault(u, []).append(i)

    item_ids = np.arange(model.n_items)
    recall_sum, ndcg_sum = 0.0, 0.0
    for u in users:
        scores = model.item_emb @ model.user_emb[u]
        mask = train_of.get(u)
        if mask:
            scores = scores.copy()
            scores[mask] = -np.inf
        ranked = rank_by_score(scores, ids=item_ids, k=k).tolist()
        recall_sum += recall_at_k(ranked, rel[u], k)
        ndcg_sum += ndcg_at_k(ranked, rel[u], k)
    n = len(users)
    return EvalReport(task=task, k=k, recall=recall_sum / n, ndcg=ndcg_sum / n,
                      n_users=n, seed=seed, fingerprint=fingerprint)


def adoption_rate(decisions) -> AdoptionStats:
    """Accepted / filtered over refine decisions (records or DecisionLog)."""
    records = getattr(decisions, "records", decisions)
    records = list(records)
    if not records:
        raise ValueError("decision log is empty")
    accepted = sum(1 for r in records if (r["z"] if isinstance(r, dict) else r.value))
    return AdoptionStats(filtered=len(records), accepted=accepted)


def format_report(report: EvalReport) -> str:
    """Aligned text table for one report."""
    rows = [("task", report.task), ("K", report.k),
            (f"Recall@{report.k}", f"{report.recall:.4f}"),
            (f"NDCG@{report.k}", f"{report.ndcg:.4f}"),
            ("users", report.n_users), ("seed", report.seed)]
    width = max(len(str(name)) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"


def reports_to_csv(rows: list[dict], path: str | Path) -> None:
    """Write sweep/ablation rows as CSV; column order is fixed by first row."""
    import csv

    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
