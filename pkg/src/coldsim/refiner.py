"""Refining simulation: query a yes/no oracle over filtered candidates.

For each (candidate user, cold item) pair the refiner builds a
query-dependent context from the user's history, renders the fixed prompt,
asks the oracle, and keeps the accepted users.  Also exports instruction
fine-tuning data (prompt/completion JSONL) for training an external oracle.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import ColdWarmSplit, ItemCatalog
from .filtering import CandidateSet, TwoTowerFilter, funnel_filter, map_item

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = ("Given the user interacted with [{history}], determine "
                   "whether the user will interacted the [{item}] by "
                   "answering Yes or No.")

_FIRST_WORD_RE = re.compile(r"[A-Za-z]+")


class OracleError(RuntimeError):
    """Transport-level oracle failure (after retries)."""


class OracleParseError(OracleError):
    """The oracle answered, but with neither yes nor no."""


@dataclass
class UserContext:
    """Top-L history items of a user, ranked by similarity to the query item."""

    user: int
    items: list[int]
    texts: list[str]


@dataclass
class OracleDecision:
    value: int
    raw: str
    latency: float = 0.0


class FinetuneRecord(NamedTuple):
    prompt: str
    completion: str


def build_context(user: int, item_fvec: np.ndarray, filt: TwoTowerFilter,
                  content_matrix: np.ndarray, history: list[int],
                  catalog: ItemCatalog, top_l: int = 10) -> UserContext:
    """Pick the user's ``top_l`` history items most similar to the query item.

    Similarity is the dot product of filter vectors; ties break by
    ascending item id.  An empty history yields an empty context.
    """
    if top_l < 1:
        raise ValueError(f"top_l must be >= 1, got {top_l}")
    if not history:
        return UserContext(user=user, items=[], texts=[])
    hist_vecs = filt.item_tower.forward(content_matrix[history])
    sims = hist_vecs @ np.asarray(item_fvec, dtype=np.float64)
    hist_ids = np.asarray(history)
    order = np.lexsort((hist_ids, -sims))[:top_l]
    items = hist_ids[order].tolist()
    return UserContext(user=user, items=items,
                       texts=[catalog.title(i) for i in items])


def render_prompt(context: UserContext, item_text: str) -> str:
    """Render the fixed yes/no prompt, byte-exact.

    Context titles are double-quoted and comma-joined inside the first
    bracket pair; an empty context renders ``[]``.
    """
    if not item_text:
        raise ValueError("item content must be non-empty")
    history = ", ".join(f'"{t}"' for t in context.texts)
    return PROMPT_TEMPLATE.format(history=history, item=item_text)


def parse_yes_no(text: str) -> int:
    """First alphabetic token, case-insensitive; anything else is a parse error."""
    m = _FIRST_WORD_RE.search(text)
    word = m.group(0).lower() if m else ""
    if word == "yes":
        return 1
    if word == "no":
        return 0
    raise OracleParseError(f"unrecognized oracle answer: {text!r}")


class PlantedOracle:
    """Deterministic oracle backed by an injected ground-truth pair set."""

    kind = "planted"

    def __init__(self, true_pairs):
        self.true_pairs = set(true_pairs)

    def decide(self, user: int, item: int, context: UserContext,
               item_text: str) -> OracleDecision:
        yes = (user, item) in self.true_pairs
        return OracleDecision(value=1 if yes else 0, raw="Yes" if yes else "No")


class ThresholdOracle:
    """Accepts when the item's raw vector is cosine-close to the context mean.

    An empty context is always a no.
    """

    kind = "mock-threshold"

    def __init__(self, content_matrix: np.ndarray, tau: float = 0.3):
        self.content_matrix = np.asarray(content_matrix, dtype=np.float64)
        self.tau = tau

    def decide(self, user: int, item: int, context: UserContext,
               item_text: str) -> OracleDecision:
        if not context.items:
            return OracleDecision(value=0, raw="No")
        item_vec = self.content_matrix[item]
        ctx_mean = self.content_matrix[context.items].mean(axis=0)
        denom = np.linalg.norm(item_vec) * np.linalg.norm(ctx_mean)
        cos = float(item_vec @ ctx_mean / denom) if denom > 0 else 0.0
        yes = cos >= self.tau
        return OracleDecision(value=1 if yes else 0, raw="Yes" if yes else "No")


class HttpOracle:
    """Oracle served over HTTP: POST ``{"prompt": ...}``, read ``{"answer": ...}``.

    With ``chat=True`` the same prompt is wrapped as a chat completion
    request ``{"messages": [{"role": "user", "content": prompt}]}`` and the
    first message text of the response is parsed instead.
    """

    kind = "http"

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 3,
                 backoff: float = 0.5, chat: bool = False):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.chat = chat

    def _post(self, prompt: str) -> str:
        import requests

        if self.chat:
            body = {"messages": [{"role": "user", "content": prompt}]}
        else:
            body = {"prompt": prompt}
        last = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(self.url, json=body, timeout=self.timeout)
                if resp.status_code != 200:
                    raise OracleError(f"oracle returned {resp.status_code}")
                doc = resp.json()
                if self.chat:
                    if "messages" in doc:
                        return doc["messages"][0]["content"]
                    if "choices" in doc:
                        return doc["choices"][0]["message"]["content"]
                    raise OracleError("chat response carries no messages")
                return doc["answer"]
            except OracleError as exc:
                last = exc
            except Exception as exc:  # noqa: BLE001 - transport/json errors retry
                last = OracleError(str(exc))
            if attempt + 1 < self.retries:
                time.sleep(self.backoff * 2 ** attempt)
        raise OracleError(f"oracle failed after {self.retries} attempts: {last}")

    def decide(self, user: int, item: int, context: UserContext,
               item_text: str) -> OracleDecision:
        prompt = render_prompt(context, item_text)
        start = time.perf_counter()
        answer = self._post(prompt)
        latency = time.perf_counter() - start
        return OracleDecision(value=parse_yes_no(answer), raw=answer,
                              latency=latency)


def query_oracle(client, context: UserContext, item_text: str,
                 item: int) -> OracleDecision:
    """One yes/no judgment for (context.user, item)."""
    return client.decide(context.user, item, context, item_text)


class DecisionLog:
    """Per-run record of oracle decisions, doubling as a rerun cache.

    Cache keys include a prompt hash so a changed context re-queries.  The
    JSONL persistence writes one object per decision with fields
    ``user, item, z, raw, oracle`` (plus the prompt hash).
    """

    def __init__(self):
        self.records: list[dict] = []
        self._cache: dict[tuple, OracleDecision] = {}

    def __len__(self) -> int:
        return len(self.records)

    @staticmethod
    def _key(user, item, oracle_kind, prompt):
        ph = hashlib.sha1(prompt.encode("utf-8")).hexdigest()[:16]
        return (user, item, oracle_kind, ph), ph

    def lookup(self, user, item, oracle_kind, prompt) -> OracleDecision | None:
        key, _ = self._key(user, item, oracle_kind, prompt)
        return self._cache.get(key)

    def record(self, user, item, oracle_kind, prompt,
               decision: OracleDecision) -> None:
        key, ph = self._key(user, item, oracle_kind, prompt)
        self._cache[key] = decision
        self.records.append({"user": int(user), "item": int(item),
                             "z": int(decision.value), "raw": decision.raw,
                             "oracle": oracle_kind, "ph": ph})

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                json.dump(rec, fh, sort_keys=True, ensure_ascii=False)
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "DecisionLog":
        log = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                log.records.append(rec)
                key = (rec["user"], rec["item"], rec["oracle"], rec.get("ph"))
                log._cache[key] = OracleDecision(value=rec["z"], raw=rec["raw"])
        return log


@dataclass
class SimulateConfig:
    k: int = 20
    context_len: int = 10
    fallback_to_top1: bool = True
    max_inflight: int = 8
    seed: int = 0


@dataclass
class SimulationResult:
    item: int
    users: list[int]
    fallback_used: bool = False
    failures: int = 0


def refine(candidates: CandidateSet, client, filt: TwoTowerFilter,
           content_matrix: np.ndarray, train_items: list[list[int]],
           catalog: ItemCatalog, top_l: int = 10,
           decision_log: DecisionLog | None = None,
           max_inflight: int = 8) -> tuple[list[int], int]:
    """Keep the candidates the oracle accepts, preserving rank order.

    Returns (accepted users, oracle failure count).  Raises
    :class:`OracleError` when every single call fails; partial failures
    drop those users with a warning.
    """
    if not candidates.users:
        raise ValueError("refine requires a non-empty candidate set")
    item = candidates.item
    item_fvec = None
    if any(train_items[u] for u in candidates.users):
        item_fvec = map_item(filt, content_matrix[item])
    item_text = catalog.title(item)

    prompts = {}
    contexts = {}
    for u in candidates.users:
        ctx = build_context(u, item_fvec, filt, content_matrix,
                            train_items[u], catalog, top_l) \
            if train_items[u] else UserContext(user=u, items=[], texts=[])
        contexts[u] = ctx
        prompts[u] = render_prompt(ctx, item_text)

    def ask(u):
        cached = (decision_log.lookup(u, item, client.kind, prompts[u])
                  if decision_log is not None else None)
        if cached is not None:
            return u, cached, True
        return u, query_oracle(client, contexts[u], item_text, item), False

    decisions: dict[int, OracleDecision] = {}
    failures = 0
    workers = max(1, max_inflight) if client.kind == "http" else 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for future in [pool.submit(ask, u) for u in candidates.users]:
            try:
                u, decision, was_cached = future.result()
            except OracleError as exc:
                failures += 1
                logger.warning("oracle call failed: %s", exc)
                continue
            decisions[u] = decision
            if decision_log is not None and not was_cached:
                decision_log.record(u, item, client.kind, prompts[u], decision)
    if not decisions:
        raise OracleError(f"every oracle call failed for item {item}")
    if failures:
        logger.warning("item %s: %d of %d oracle calls failed",
                       item, failures, len(candidates.users))
    kept = [u for u in candidates.users
            if u in decisions and decisions[u].value == 1]
    return kept, failures


def simulate_for_item(item: int, raw_item: np.ndarray, client,
                      content_matrix: np.ndarray, train_items: list[list[int]],
                      catalog: ItemCatalog, config: SimulateConfig,
                      filter_b: TwoTowerFilter | None = None,
                      filter_l: TwoTowerFilter | None = None,
                      users_b: np.ndarray | None = None,
                      users_l: np.ndarray | None = None,
                      decision_log: DecisionLog | None = None,
                      skip_refine: bool = False) -> SimulationResult:
    """Funnel-filter candidate users for one cold item, then oracle-refine.

    When refinement empties the candidate list the top-ranked filtered
    candidate is kept (configurable; the alternative leaves the item cold
    with an empty simulation).  Context building uses the coupled filter
    when present, otherwise the behavior filter.
    """
    candidates = funnel_filter(raw_item, config.k, filter_b=filter_b,
                               filter_l=filter_l, users_b=users_b,
                               users_l=users_l, item=item)
    if skip_refine or not candidates.users:
        return SimulationResult(item=item, users=list(candidates.users))
    context_filter = filter_l if filter_l is not None else filter_b
    kept, failures = refine(candidates, client, context_filter, content_matrix,
                            train_items, catalog, top_l=config.context_len,
                            decision_log=decision_log,
                            max_inflight=config.max_inflight)
    if kept:
        return SimulationResult(item=item, users=kept, failures=failures)
    if config.fallback_to_top1:
        return SimulationResult(item=item, users=candidates.users[:1],
                                fallback_used=True, failures=failures)
    return SimulationResult(item=item, users=[], fallback_used=True,
                            failures=failures)


def prepare_finetune_data(split: ColdWarmSplit, catalog: ItemCatalog,
                          filt: TwoTowerFilter, content_matrix: np.ndarray,
                          mode: str = "offline", seed: int = 0,
                          n_positives: int | None = None,
                          negatives=None, top_l: int = 10,
                          out_path: str | Path | None = None,
                          n_users: int | None = None) -> list[FinetuneRecord]:
    """Build prompt/completion records for oracle fine-tuning.

    Offline mode pairs each sampled warm-train positive with one uniformly
    sampled unobserved item: exactly one Yes and one No record per
    positive.  Online mode additionally pairs each positive having an
    explicit negative (from ``negatives``, a set of (user, item) pairs)
    with that negative, keeping every emitted pairing 1:1.

    Context is built against the item being judged, so the Yes and No
    prompts of one positive differ.  Records are optionally written as
    JSONL with fields ``prompt`` and ``completion``.
    """
    if mode not in ("offline", "online"):
        raise ValueError(f"mode must be 'offline' or 'online', got {mode!r}")
    if not split.warm_train:
        raise ValueError("no positives available")
    if mode == "online" and negatives is None:
        raise ValueError("online mode requires explicit negatives")

    rng = np.random.default_rng(seed)
    positives = sorted(split.warm_train)
    if n_positives is not None and n_positives < len(positives):
        pick = rng.choice(len(positives), size=n_positives, replace=False)
        positives = [positives[idx] for idx in sorted(pick)]

    if n_users is None:
        n_users = 1 + max(u for u, _ in split.warm_train)
    train_items = split.train_items_of(n_users)
    warm = np.asarray(split.warm_items, dtype=np.int64)
    observed = split.warm_train_set

    neg_by_user: dict[int, list[int]] = {}
    if negatives is not None:
        for u, i in sorted(negatives):
            neg_by_user.setdefault(u, []).append(i)

    def make_record(user, item, completion):
        fvec = map_item(filt, content_matrix[item])
        ctx = build_context(user, fvec, filt, content_matrix,
                            train_items[user], catalog, top_l)
        return FinetuneRecord(prompt=render_prompt(ctx, catalog.title(item)),
                              completion=completion)

    def sample_unobserved(u):
        for _ in range(100):
            j = int(warm[rng.integers(len(warm))])
            if (u, j) not in observed:
                return j
        # exact fallback keeps the 1:1 pairing whenever a negative exists
        pool = [int(j) for j in warm if (u, j) not in observed]
        return pool[rng.integers(len(pool))] if pool else None

    records: list[FinetuneRecord] = []
    exhausted = 0
    for u, i in positives:
        if mode == "online" and neg_by_user.get(u):
            j = neg_by_user[u][rng.integers(len(neg_by_user[u]))]
            records.append(make_record(u, i, "Yes"))
            records.append(make_record(u, j, "No"))
        j = sample_unobserved(u)
        if j is None:
            exhausted += 1
            continue
        records.append(make_record(u, i, "Yes"))
        records.append(make_record(u, j, "No"))
    if exhausted:
        logger.warning("%d positives dropped: their users have no unobserved "
                       "warm item", exhausted)

    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for rec in records:
                json.dump({"prompt": rec.prompt, "completion": rec.completion},
                          fh, ensure_ascii=False, sort_keys=True)
                fh.write("\n")
    return records
