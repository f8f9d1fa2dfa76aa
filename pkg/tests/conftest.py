import pytest

from coldsim.corpus import InteractionLog
from coldsim.synthetic import make_two_cluster_dataset, make_planted_split


def write_citeulike_fixture(root, per_user_items, metadata):
    """metadata: list of (raw_id, title, abstract)."""
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "users.dat", "w", encoding="utf-8") as fh:
        for items in per_user_items:
            fh.write(" ".join(str(i) for i in items) + "\n")
    with open(root / "items.tsv", "w", encoding="utf-8") as fh:
        for raw, title, abstract in metadata:
            fh.write(f"{raw}\t{title}\t{abstract}\n")
    return root


def write_movielens_fixture(root, ratings, movies):
    """ratings: (user, item, rating, ts) tuples; movies: (id, title, genres)."""
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "ratings.dat", "w", encoding="utf-8") as fh:
        for u, i, r, ts in ratings:
            fh.write(f"{u}::{i}::{r}::{ts}\n")
    with open(root / "movies.dat", "w", encoding="utf-8") as fh:
        for mid, title, genres in movies:
            fh.write(f"{mid}::{title}::{genres}\n")
    return root


@pytest.fixture
def toy_log():
    # 6 users x 5 items, every item covered
    pairs = [(0, 0), (0, 1), (1, 0), (1, 2), (2, 1), (2, 3),
             (3, 2), (3, 4), (4, 3), (4, 0), (5, 4), (5, 1)]
    return InteractionLog.from_pairs(6, 5, pairs)


@pytest.fixture(scope="session")
def planted():
    data = make_two_cluster_dataset(seed=0)
    split = make_planted_split(data, seed=0)
    return data, split


def tiny_cluster_setup(seed=0, n_users=40, n_warm=16, n_cold=4,
                       groups_per_cluster=1):
    data = make_two_cluster_dataset(n_users=n_users, n_warm=n_warm,
                                    n_cold=n_cold,
                                    groups_per_cluster=groups_per_cluster,
                                    seed=seed)
    split = make_planted_split(data, seed=seed)
    return data, split
