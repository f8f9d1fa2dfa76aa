import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coldsim.corpus import (ColdWarmSplit, InteractionLog, load_citeulike,
                            load_movielens, make_cold_split)
from coldsim.synthetic import random_toy_log

from conftest import write_citeulike_fixture, write_movielens_fixture


class TestLoadCiteulike:
    def test_toy_fixture(self, tmp_path):
        # 3 users, 2 items, raw item ids 10 and 20 re-index to 0 and 1
        root = write_citeulike_fixture(
            tmp_path / "cu",
            per_user_items=[[10], [20, 10], [20]],
            metadata=[(10, "Alpha", "about a"), (20, "Beta", "about b")])
        log, catalog = load_citeulike(root)
        assert (log.n_users, log.n_items) == (3, 2)
        assert sorted(log.pairs) == [(0, 0), (1, 0), (1, 1), (2, 1)]
        assert log.user_items[1] == [1, 0]  # input order preserved
        assert log.item_users[1] == [1, 2]
        assert catalog.title(0) == "Alpha"
        assert catalog.text(0) == "Alpha. about a"

    def test_empty_interactions(self, tmp_path):
        root = write_citeulike_fixture(tmp_path / "cu", [[], []],
                                       [(0, "T", "A")])
        with pytest.raises(ValueError, match="no interactions"):
            load_citeulike(root)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_citeulike(tmp_path)

    def test_malformed_line_reports_lineno(self, tmp_path):
        root = write_citeulike_fixture(tmp_path / "cu", [[1], [1]],
                                       [(1, "T", "A")])
        (root / "users.dat").write_text("1\nfoo 1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="users.dat:2"):
            load_citeulike(root)

    def test_item_without_metadata(self, tmp_path):
        root = write_citeulike_fixture(tmp_path / "cu", [[1, 2]],
                                       [(1, "T", "A")])
        with pytest.raises(ValueError, match="without metadata"):
            load_citeulike(root)

    def test_idmap_persisted(self, tmp_path):
        root = write_citeulike_fixture(tmp_path / "cu", [[7]], [(7, "T", "A")])
        mapping = tmp_path / "idmap.json"
        load_citeulike(root, mapping_path=mapping)
        doc = json.loads(mapping.read_text())
        assert doc["items"] == [7]
        assert doc["users"] == [0]

    def test_duplicate_pairs_collapse(self, tmp_path):
        root = write_citeulike_fixture(tmp_path / "cu", [[5, 5]],
                                       [(5, "T", "A")])
        log, _ = load_citeulike(root)
        assert len(log.pairs) == 1


class TestLoadMovielens:
    def test_single_record(self, tmp_path):
        root = write_movielens_fixture(tmp_path / "ml",
                                       [(1, 1, 5, 1000)],
                                       [(1, "Toy Story (1995)", "Animation|Comedy")])
        log, catalog = load_movielens(root)
        assert len(log.pairs) == 1
        assert catalog.text(0) == "Toy Story (1995) Animation Comedy"

    def test_keep_all_policy(self, tmp_path):
        root = write_movielens_fixture(
            tmp_path / "ml",
            [(1, 1, 1, 0), (2, 1, 3, 0), (3, 1, 5, 0)],
            [(1, "M", "Drama")])
        log, _ = load_movielens(root, min_rating=0)
        assert len(log.pairs) == 3

    def test_min_rating_knob(self, tmp_path):
        root = write_movielens_fixture(
            tmp_path / "ml",
            [(1, 1, 1, 0), (2, 1, 3, 0), (3, 1, 5, 0)],
            [(1, "M", "Drama")])
        log, _ = load_movielens(root, min_rating=4)
        assert len(log.pairs) == 1

    def test_unrated_movie_stays_in_catalog(self, tmp_path):
        root = write_movielens_fixture(
            tmp_path / "ml", [(1, 1, 5, 0)],
            [(1, "A", "Drama"), (2, "B", "Horror")])
        log, catalog = load_movielens(root)
        assert log.n_items == 2
        assert log.item_users[1] == []
        assert len(catalog) == 2

    def test_malformed_record(self, tmp_path):
        root = write_movielens_fixture(tmp_path / "ml", [(1, 1, 5, 0)],
                                       [(1, "M", "Drama")])
        (root / "ratings.dat").write_text("1::1::5\n", encoding="utf-8")
        with pytest.raises(ValueError, match="ratings.dat:1"):
            load_movielens(root)


class TestMakeColdSplit:
    def test_cold_frac_zero(self, toy_log):
        split = make_cold_split(toy_log, 0.0, seed=1)
        assert split.cold_items == []
        assert (len(split.warm_train) + len(split.warm_val)
                + len(split.warm_test)) == len(toy_log.pairs)

    def test_cold_frac_bounds(self, toy_log):
        with pytest.raises(ValueError):
            make_cold_split(toy_log, 1.0, seed=0)
        with pytest.raises(ValueError):
            make_cold_split(toy_log, -0.1, seed=0)

    def test_zero_interaction_item_rejected(self):
        log = InteractionLog.from_pairs(2, 2, [(0, 0), (1, 0)])
        with pytest.raises(ValueError, match="no interactions"):
            make_cold_split(log, 0.5, seed=0)

    def test_cold_item_val_test_ratio(self):
        # item 0 has 5 interactions: 2 go to val, 3 to test
        pairs = [(u, 0) for u in range(5)] + [(u, 1) for u in range(5)]
        log = InteractionLog.from_pairs(5, 2, pairs)
        split = make_cold_split(log, 0.0, seed=3, cold_items=[0])
        assert len(split.cold_val) == 2
        assert len(split.cold_test) == 3

    def test_single_interaction_goes_to_test(self):
        pairs = [(0, 0), (0, 1), (1, 1)]
        log = InteractionLog.from_pairs(2, 2, pairs)
        split = make_cold_split(log, 0.0, seed=0, cold_items=[0])
        assert split.cold_val == []
        assert split.cold_test == [(0, 0)]

    def test_count_floor(self):
        rng = np.random.default_rng(0)
        pairs = sorted({(int(rng.integers(12)), i) for i in range(10)})
        log = InteractionLog.from_pairs(12, 10, pairs)
        split = make_cold_split(log, 0.25, seed=0)
        assert len(split.cold_items) == math.floor(0.25 * 10)

    def test_same_seed_same_split(self, toy_log):
        a = make_cold_split(toy_log, 0.4, seed=9)
        b = make_cold_split(toy_log, 0.4, seed=9)
        assert a == b

    def test_different_seeds_differ(self):
        rng = np.random.default_rng(4)
        pairs = sorted({(int(rng.integers(30)), i) for i in range(40)}
                       | {(int(rng.integers(30)), int(rng.integers(40)))
                          for _ in range(200)})
        log = InteractionLog.from_pairs(30, 40, pairs)
        cold_sets = {tuple(make_cold_split(log, 0.3, seed=s).cold_items)
                     for s in range(10)}
        assert len(cold_sets) > 1

    def test_warm_ratio(self):
        rng = np.random.default_rng(7)
        pairs = sorted({(int(rng.integers(50)), i) for i in range(20)}
                       | {(int(rng.integers(50)), int(rng.integers(20)))
                          for _ in range(400)})
        log = InteractionLog.from_pairs(50, 20, pairs)
        split = make_cold_split(log, 0.0, seed=2)
        n = len(log.pairs)
        assert len(split.warm_train) == math.floor(0.8 * n)
        assert len(split.warm_val) == math.floor(0.1 * n)

    def test_round_trip(self, toy_log, tmp_path):
        split = make_cold_split(toy_log, 0.4, seed=5)
        split.save(tmp_path / "split.json")
        loaded = ColdWarmSplit.load(tmp_path / "split.json")
        assert loaded == split
        # saving the reloaded split is byte-identical
        loaded.save(tmp_path / "split2.json")
        assert (tmp_path / "split.json").read_bytes() == \
            (tmp_path / "split2.json").read_bytes()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0, 0.9),
       split_seed=st.integers(0, 10_000))
def test_split_partition_properties(seed, frac, split_seed):
    log = random_toy_log(np.random.default_rng(seed))
    split = make_cold_split(log, frac, seed=split_seed)
    split.check_invariants(log)
