import math

import numpy as np
import pytest
from scipy import stats

from coldsim.backbone import (BackboneConfig, BackboneModel, bpr_loss,
                              bpr_step, init_embeddings, sample_bpr_triples,
                              score, train_backbone)
from coldsim.corpus import InteractionLog, make_cold_split

from conftest import tiny_cluster_setup


def finite_diff_grad(loss_fn, arr, h=1e-5):
    """Central differences over every coordinate of arr."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    g = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = loss_fn()
        flat[idx] = orig - h
        down = loss_fn()
        flat[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return grad


class TestInitEmbeddings:
    def test_empty_table(self):
        assert init_embeddings(0, 8, seed=0).shape == (0, 8)

    def test_deterministic(self):
        a = init_embeddings(5, 200, seed=7)
        b = init_embeddings(5, 200, seed=7)
        assert np.array_equal(a, b)

    def test_distribution(self):
        table = init_embeddings(10_000, 200, seed=1)
        n = table.size
        assert abs(table.mean()) < 3 * 0.01 / math.sqrt(n)
        assert 0.009 < table.std() < 0.011

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            init_embeddings(-1, 8, seed=0)


class TestSampleTriples:
    def test_single_pair_universe(self):
        triples = sample_bpr_triples([(0, 1)], warm_items=[0, 1, 2], n=50, seed=0)
        assert len(triples) == 50
        assert all(t.user == 0 and t.pos == 1 and t.neg in (0, 2)
                   for t in triples)

    def test_n_zero(self):
        assert sample_bpr_triples([(0, 0)], [0, 1], n=0, seed=0) == []

    def test_empty_split(self):
        with pytest.raises(ValueError):
            sample_bpr_triples([], [0], n=1, seed=0)

    def test_exhausted_user_skipped(self, caplog):
        # user 0 interacted with every warm item: no negative exists
        triples = sample_bpr_triples([(0, 0), (0, 1), (1, 0)],
                                     warm_items=[0, 1], n=20, seed=0)
        assert all(t.user == 1 for t in triples)

    def test_negative_uniformity_chi2(self):
        pairs = [(0, 0)]
        warm = list(range(11))  # 10 eligible negatives
        triples = sample_bpr_triples(pairs, warm, n=100_000, seed=3)
        counts = np.bincount([t.neg for t in triples], minlength=11)[1:]
        _, p = stats.chisquare(counts)
        assert p > 0.01


class TestBprStep:
    def make_model(self, seed=0, rows=3, dim=6):
        return BackboneModel(user_emb=init_embeddings(rows, dim, seed),
                             item_emb=init_embeddings(rows, dim, seed + 1))

    def test_equal_scores_loss_ln2(self):
        model = self.make_model()
        model.item_emb[1] = model.item_emb[2]  # margin is exactly 0
        loss = bpr_step(model, [(0, 1, 2)], lr=0.0)
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_large_margin_loss_vanishes(self):
        model = self.make_model()
        model.user_emb[0] = np.full(6, 10.0)
        model.item_emb[1] = np.full(6, 10.0)
        model.item_emb[2] = np.full(6, -10.0)
        assert bpr_step(model, [(0, 1, 2)], lr=0.0) < 1e-12

    def test_lr_zero_bit_identical(self):
        model = self.make_model(seed=2)
        before_u = model.user_emb.copy()
        before_i = model.item_emb.copy()
        bpr_step(model, [(0, 1, 2), (1, 0, 2)], lr=0.0)
        assert np.array_equal(model.user_emb, before_u)
        assert np.array_equal(model.item_emb, before_i)

    def test_only_touched_rows_change(self):
        model = self.make_model(seed=3, rows=6)
        before_u = model.user_emb.copy()
        before_i = model.item_emb.copy()
        bpr_step(model, [(1, 2, 4)], lr=0.5)
        changed_u = [r for r in range(6)
                     if not np.array_equal(model.user_emb[r], before_u[r])]
        changed_i = [r for r in range(6)
                     if not np.array_equal(model.item_emb[r], before_i[r])]
        assert changed_u == [1]
        assert sorted(changed_i) == [2, 4]

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            model = self.make_model(seed=trial, rows=3, dim=6)
            model.user_emb *= 50  # O(0.5) entries exercise the nonlinearity
            model.item_emb *= 50
            pos, neg = rng.choice(3, size=2, replace=False)
            triple = (0, int(pos), int(neg))
            ref_u = model.user_emb.copy()
            ref_i = model.item_emb.copy()

            def loss_fn():
                return bpr_loss(model, [triple])

            fd_u = finite_diff_grad(loss_fn, model.user_emb)
            fd_i = finite_diff_grad(loss_fn, model.item_emb)
            # recover the analytic gradient from a unit-lr step
            bpr_step(model, [triple], lr=1.0)
            an_u = ref_u - model.user_emb
            an_i = ref_i - model.item_emb
            for fd, an in ((fd_u, an_u), (fd_i, an_i)):
                denom = max(np.linalg.norm(fd), 1e-12)
                assert np.linalg.norm(fd - an) / denom < 1e-4

    def test_returns_pre_step_loss(self):
        model = self.make_model(seed=5)
        expected = bpr_loss(model, [(0, 1, 2)])
        assert bpr_step(model, [(0, 1, 2)], lr=0.1) == pytest.approx(expected)


class TestScore:
    def test_zero_user_row(self):
        model = BackboneModel(user_emb=np.zeros((2, 4)),
                              item_emb=np.ones((3, 4)))
        assert all(score(model, 0, i) == 0.0 for i in range(3))

    def test_unit_axis(self):
        model = BackboneModel(user_emb=np.eye(4)[:1], item_emb=np.eye(4)[:1])
        assert score(model, 0, 0) == 1.0

    def test_matches_recomputation(self):
        rng = np.random.default_rng(8)
        model = BackboneModel(user_emb=rng.normal(size=(5, 16)),
                              item_emb=rng.normal(size=(7, 16)))
        u, i = 3, 6
        manual = sum(model.user_emb[u][d] * model.item_emb[i][d]
                     for d in range(16))
        assert abs(score(model, u, i) - manual) < 1e-12

    def test_out_of_bounds(self):
        model = BackboneModel(user_emb=np.zeros((2, 4)),
                              item_emb=np.zeros((3, 4)))
        with pytest.raises(IndexError):
            score(model, 2, 0)
        with pytest.raises(IndexError):
            score(model, 0, -1)


class TestTrainBackbone:
    def test_zero_epochs_returns_init(self, toy_log):
        split = make_cold_split(toy_log, 0.0, seed=0)
        cfg = BackboneConfig(dim=8, max_epochs=0, seed=4)
        model = train_backbone(split, cfg, n_users=6, n_items=5)
        assert np.array_equal(model.user_emb, init_embeddings(6, 8, 4))
        assert np.array_equal(model.item_emb, init_embeddings(5, 8, 5))

    def test_loss_descends(self, toy_log):
        split = make_cold_split(toy_log, 0.0, seed=0)
        cfg = BackboneConfig(dim=8, lr=0.1, max_epochs=20, patience=100,
                             batch_size=4, seed=0)
        model = train_backbone(split, cfg, n_users=6, n_items=5)
        assert model.history[-1]["loss"] < model.history[0]["loss"]

    def test_two_cluster_separation(self):
        data, split = tiny_cluster_setup(seed=1)
        cfg = BackboneConfig(dim=16, lr=0.1, max_epochs=60, patience=15,
                             batch_size=64, seed=1)
        model = train_backbone(split, cfg, n_users=data.log.n_users,
                               n_items=data.log.n_items)
        scores = model.user_emb @ model.item_emb[:16].T
        same = np.array([[data.user_group[u] == data.item_group[i]
                          for i in range(16)]
                         for u in range(data.log.n_users)])
        assert scores[same].mean() > scores[~same].mean()

    def test_deterministic(self, toy_log):
        split = make_cold_split(toy_log, 0.0, seed=0)
        cfg = BackboneConfig(dim=8, lr=0.05, max_epochs=5, batch_size=4, seed=9)
        a = train_backbone(split, cfg, n_users=6, n_items=5)
        b = train_backbone(split, cfg, n_users=6, n_items=5)
        assert np.array_equal(a.user_emb, b.user_emb)
        assert np.array_equal(a.item_emb, b.item_emb)

    def test_empty_train_rejected(self, toy_log):
        split = make_cold_split(toy_log, 0.0, seed=0)
        split.warm_train.clear()
        with pytest.raises(ValueError):
            train_backbone(split, BackboneConfig(dim=4))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = BackboneModel(user_emb=init_embeddings(4, 8, 0),
                              item_emb=init_embeddings(6, 8, 1))
        model.save(tmp_path)
        loaded = BackboneModel.load(tmp_path)
        assert np.array_equal(loaded.user_emb,
                              model.user_emb.astype(np.float32))
        # a second save/load cycle is lossless
        loaded.save(tmp_path, prefix="again")
        again = BackboneModel.load(tmp_path, prefix="again")
        assert np.array_equal(again.user_emb, loaded.user_emb)
