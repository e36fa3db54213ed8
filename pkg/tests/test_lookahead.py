import math

import numpy as np
import pytest

from lookbai.dyadic import WindowError, enumerate_windows, make_window
from lookbai.instances import (gen_bernoulli, gen_polarized, make_dense, sample_sign_tree,
                               sign_tree_pair_to_instance, window_averages)
from lookbai.lookahead import (Environment, QueryError, dense_memory, full_info_expected_error,
                               observation_counts, run_bai, run_full_info_predictor, run_sparse_bai, score,
                               sparse_defaults, window_law_probability)
from lookbai.lowerbounds import node_score
from lookbai.meter import ceil_log2
from lookbai.rng import derive


class TestEnvironment:
    def test_one_query_per_round(self):
        env = Environment(make_dense(np.ones((2, 8))))
        env.query(1, 0)
        with pytest.raises(QueryError):
            env.query(1, 1)
        with pytest.raises(QueryError):
            env.query_rounds(np.array([3, 3]), np.array([0, 1]))
        with pytest.raises(QueryError):
            env.query(9, 0)
        with pytest.raises(QueryError):
            env.query(4, 2)
        assert env.queries == 1


class TestDense:
    def test_single_arm(self):
        inst = make_dense(np.full((1, 64), 0.4))
        pred = run_bai(inst, rng=derive(0))
        assert pred.arm == 0 and score(inst, pred).error == 0

    def test_constant_arms(self):
        inst = make_dense(np.vstack([np.ones(2**14), np.zeros(2**14)]))
        hits = sum(run_bai(inst, rng=derive(1, "const", i)).arm == 0 for i in range(1000))
        assert hits >= 990

    def test_queries_stop_before_prediction(self):
        inst = gen_bernoulli([0.3, 0.6, 0.5], 3000, seed=2)
        for i in range(20):
            pred = run_bai(inst, rng=derive(2, "q", i))
            assert pred.queries == pred.window.t0 - 1

    def test_accumulators_and_memory(self):
        inst = gen_bernoulli([0.2, 0.9, 0.9, 0.5], 4096, seed=3)
        for i in range(20):
            pred = run_bai(inst, rng=derive(3, "acc", i))
            n = pred.estimates
            assert (n >= 0).all() and (n <= pred.window.w).all()
            assert pred.arm == int(np.flatnonzero(n == n.max())[0])
            w = pred.window.w
            assert pred.memory.total == 4 * (ceil_log2(w + 1) + 17) + 3 * 12
            assert dense_memory(4, 4096, w).total == pred.memory.total

    def test_horizon_too_short(self):
        with pytest.raises(ValueError):
            run_bai(make_dense([[1.0]]), rng=derive(0))
        with pytest.raises(WindowError):
            run_bai(make_dense(np.ones((2, 8))), lo=1, hi=4, rng=derive(0))

    def test_unbiased_given_window(self):
        X = derive(4).random((5, 256))
        inst = make_dense(X)
        win = make_window(6, 2)
        runs = np.array([observation_counts(inst, win, derive(4, "u", i)) for i in range(4000)])
        y_tilde = runs * 5 / win.w
        y = window_averages(inst, win.obs_start, win.w)
        se = y_tilde.std(axis=0, ddof=1) / math.sqrt(len(runs))
        assert (np.abs(y_tilde.mean(axis=0) - y) <= 4 * se).all()


class TestSparse:
    def test_binary_update_count(self):
        inst = gen_polarized(32, 2**12, 2, seed=5)
        for i in range(10):
            pred = run_sparse_bai(inst, 5.0, rng=derive(5, "b", i), audit=True)
            assert pred.sketch_updates == int(pred.exact_counts.sum())

    def test_single_heavy_arm(self):
        # long enough that even the shortest window (w = 64) almost surely observes arm 7
        X = np.zeros((16, 2**14))
        X[7] = 1.0
        inst = make_dense(X)
        _, delta_cs = sparse_defaults(2**14)
        hits = sum(run_sparse_bai(inst, 1.0, rng=derive(6, "h", i)).arm == 7 for i in range(500))
        assert hits / 500 >= 1 - delta_cs

    def test_weighted_constant_values(self):
        c = np.linspace(0.1, 0.9, 8)
        inst = make_dense(np.repeat(c[:, None], 2**11, axis=1))
        phi = float((c**2).sum() / c.max() ** 2)
        for i in range(10):
            pred = run_sparse_bai(inst, phi, rng=derive(7, "w", i), audit=True)
            sk = pred.sketch
            for arm in range(8):
                est = sk.estimate(arm)
                exact = pred.exact_counts[arm]
                assert abs(est - exact) <= sk.params.eps * pred.exact_counts.max() + 8 * 2**-16 * pred.window.w

    def test_no_reward_falls_back(self):
        inst = make_dense(np.zeros((4, 256)))
        pred = run_sparse_bai(inst, 1.0, rng=derive(0))
        assert pred.arm == 0 and pred.sketch_updates == 0

    def test_agrees_with_dense_on_dominant_arm(self):
        means = [0.1] * 12 + [0.95]
        inst = gen_bernoulli(means, 2**12, seed=8)
        phi = 1 + 12 * (0.1 / 0.95) ** 2
        _, delta_cs = sparse_defaults(2**12)
        agree = 0
        for i in range(200):
            # one stream each: same window and same observed arms
            d = run_bai(inst, rng=derive(8, "agree", i))
            s = run_sparse_bai(inst, phi, rng=derive(8, "agree", i), audit=True)
            assert s.window == d.window and np.array_equal(s.exact_counts, d.estimates)
            agree += d.arm == s.arm
        assert agree / 200 >= 1 - delta_cs - 0.02

    def test_memory_flat_in_K(self):
        bits = []
        for K in (64, 128, 256):
            inst = gen_polarized(K, 2**12, 2, seed=9)
            pred = run_sparse_bai(inst, 6.0, lo=12, hi=12, rng=derive(9))
            bits.append(pred.memory.total - pred.sketch.params.capacity * ceil_log2(K))
        assert bits[0] == bits[1] == bits[2]


class TestScore:
    def test_unique_best(self):
        inst = make_dense(np.vstack([np.ones(8), np.zeros(8)]))
        assert score(inst, make_window(2, 1), 0).error == 0
        assert score(inst, make_window(2, 1), 1).error == 1

    def test_out_of_range(self):
        inst = make_dense(np.ones((2, 8)))
        with pytest.raises(ValueError):
            score(inst, make_window(3, 2), 0)

    def test_sign_tree_node_score(self):
        M = 6
        for s in range(20):
            f1, f2 = sample_sign_tree(M, derive(s, "f1")), sample_sign_tree(M, derive(s, "f2"))
            for win, _ in enumerate_windows(2**M):
                d = M - win.m + 1
                for arm in (0, 1):
                    e = node_score(f1, f2, win, arm)
                    assert e == 0 or e == pytest.approx(math.sqrt(d / M), abs=1e-15)


class TestFullInfo:
    def test_constant_arms(self):
        inst = make_dense(np.vstack([np.full(64, 0.3), np.full(64, 0.8)]))
        pred = run_full_info_predictor(inst, rng=derive(0))
        assert pred.arm == 1 and score(inst, pred).error == 0
        assert full_info_expected_error(inst) == 0

    def test_alternating_parity_exact(self):
        inst = make_dense([[1, 0] * 8, [0, 1] * 8])
        # m = 1 windows always pick the wrong arm; longer windows tie at 1/2
        assert full_info_expected_error(inst, 1, 4) == 0.25
        assert window_law_probability(16, 1, 4, lambda w: w.m == 1) == 0.25

    def test_identical_arms(self):
        f = sample_sign_tree(8, derive(3))
        inst = sign_tree_pair_to_instance(f, f)
        assert full_info_expected_error(inst) == 0

    def test_matches_monte_carlo(self):
        inst = sign_tree_pair_to_instance(sample_sign_tree(8, derive(1)), sample_sign_tree(8, derive(2)))
        exact = full_info_expected_error(inst)
        errs = [score(inst, run_full_info_predictor(inst, rng=derive(3, "mc", i))).error for i in range(4000)]
        se = np.std(errs, ddof=1) / math.sqrt(len(errs))
        assert abs(np.mean(errs) - exact) <= 4 * se
