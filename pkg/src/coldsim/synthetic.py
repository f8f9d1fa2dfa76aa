"""Planted synthetic datasets with known structure, for tests and demos.

The two-cluster builder places users and items into interest groups nested
inside two disjoint clusters.  All interactions stay within a group (hence
within a cluster), item content carries the group's vocabulary, and the
ground-truth pairs for cold items are exactly the same-group users, so a
planted oracle and an ideal pipeline are both available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ColdWarmSplit, InteractionLog, ItemCatalog, make_cold_split

GROUP_WORDS = ("astro", "botany", "cipher", "drums", "ember", "fjord",
               "glacier", "harbor", "ivory", "jungle", "keystone", "lantern",
               "meadow", "nebula", "orchid", "pylon")


@dataclass
class PlantedDataset:
    log: InteractionLog
    catalog: ItemCatalog
    cold_items: list[int]
    truth: set          # every ground-truth (user, item) pair, warm and cold
    user_group: np.ndarray
    item_group: np.ndarray
    n_groups: int


def make_two_cluster_dataset(n_users: int = 200, n_warm: int = 100,
                             n_cold: int = 20, groups_per_cluster: int = 4,
                             seed: int = 0) -> PlantedDataset:
    """Two clusters of users/items, each split into finer interest groups.

    Users interact with every warm item of their own group; each cold
    item's true audience is its own group's users.  Content text repeats
    the group word so hashed bag-of-tokens embeddings separate the groups.
    """
    n_groups = 2 * groups_per_cluster
    if n_groups > len(GROUP_WORDS):
        raise ValueError(f"at most {len(GROUP_WORDS) // 2} groups per cluster")
    rng = np.random.default_rng(seed)

    user_group = np.array([u * n_groups // n_users for u in range(n_users)])
    n_items = n_warm + n_cold
    item_group = np.empty(n_items, dtype=np.int64)
    item_group[:n_warm] = [i * n_groups // n_warm for i in range(n_warm)]
    item_group[n_warm:] = [i * n_groups // n_cold for i in range(n_cold)]

    pairs = []
    truth = set()
    for u in range(n_users):
        for i in range(n_items):
            if user_group[u] != item_group[i]:
                continue
            truth.add((u, i))
            pairs.append((u, i))
    # cold items keep their true pairs in the log so a split can carve
    # validation/test out of them; warm training never sees them
    log = InteractionLog.from_pairs(n_users, n_items, pairs)

    content, titles = {}, {}
    for i in range(n_items):
        word = GROUP_WORDS[item_group[i]]
        noise = GROUP_WORDS[int(rng.integers(n_groups))]
        titles[i] = f"{word} {word} notes{i} {noise}"
        content[i] = titles[i]
    catalog = ItemCatalog(content=content, titles=titles)

    return PlantedDataset(log=log, catalog=catalog,
                          cold_items=list(range(n_warm, n_items)),
                          truth=truth, user_group=user_group,
                          item_group=item_group, n_groups=n_groups)


def make_planted_split(data: PlantedDataset, seed: int = 0) -> ColdWarmSplit:
    """Cold/warm split that designates the builder's cold items as cold."""
    return make_cold_split(data.log, cold_frac=len(data.cold_items) / data.log.n_items,
                           seed=seed, cold_items=data.cold_items)


def random_toy_log(rng: np.random.Generator, max_users: int = 8,
                   max_items: int = 8) -> InteractionLog:
    """Small random log where every item has at least one interaction."""
    n_users = int(rng.integers(1, max_users + 1))
    n_items = int(rng.integers(1, max_items + 1))
    pairs = set()
    for i in range(n_items):
        pairs.add((int(rng.integers(n_users)), i))
    extra = int(rng.integers(0, n_users * n_items // 2 + 1))
    for _ in range(extra):
        pairs.add((int(rng.integers(n_users)), int(rng.integers(n_items))))
    return InteractionLog.from_pairs(n_users, n_items, sorted(pairs))
