import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lookbai.instances import gen_switching, make_dense
from lookbai.meter import ceil_log2
from lookbai.regret import (HedgeLearner, PoolHedgeLearner, ProtocolError, SparseDistribution, choose_blocks,
                            hedge_regret_bound, quantize_loss, regret_report, run_block_reduction,
                            sample_block_estimate)
from lookbai.rng import derive


class TestSparseDistribution:
    def test_valid(self):
        d = SparseDistribution(((2, 0.25), (5, 0.75)))
        assert d.arms == [2, 5] and d.as_vector(6).tolist() == [0, 0, 0.25, 0, 0, 0.75]
        assert set(d.sample(derive(0), 100).tolist()) <= {2, 5}

    @pytest.mark.parametrize("support", [(), ((1, 0.5), (1, 0.5)), ((0, 0.6), (1, 0.6)), ((0, -0.1), (1, 1.1))])
    def test_invalid(self, support):
        with pytest.raises(ValueError):
            SparseDistribution(support)


class TestHedge:
    def test_single_arm(self):
        h = HedgeLearner(1, horizon=10)
        for _ in range(10):
            assert h.next_distribution().support == ((0, 1.0),)
            h.observe({0: 0.7})

    def test_uniform_start_and_zero_losses(self):
        h = HedgeLearner(4, horizon=50)
        for _ in range(50):
            assert np.allclose(h.next_distribution().probs, 0.25)
            h.observe(dict.fromkeys(range(4), 0.0))

    def test_two_arm_closed_form(self):
        eta = 0.3
        h = HedgeLearner(2, eta=eta)
        for q in range(25):
            p = h.next_distribution().probs[0]
            assert p == pytest.approx(1 / (1 + math.exp(-eta * q)), rel=1e-12)
            h.observe({0: 0.0, 1: 1.0})

    def test_best_arm_probability_strictly_increases(self):
        h = HedgeLearner(5, horizon=40)
        losses = {0: 0.9, 1: 0.2, 2: 0.5, 3: 0.6, 4: 0.95}
        prev = 0.0
        for _ in range(40):
            p = h.next_distribution().probs[1]
            assert p > prev
            prev = p
            h.observe(losses)

    def test_default_eta(self):
        assert HedgeLearner(10, horizon=300).eta == pytest.approx(math.sqrt(8 * math.log(10) / 300))

    def test_protocol(self):
        h = HedgeLearner(3, horizon=5)
        with pytest.raises(ProtocolError):
            h.observe({0: 0.1})
        h.next_distribution()
        with pytest.raises(ProtocolError):
            h.next_distribution()

    def test_bits_linear_in_K(self):
        b = [HedgeLearner(K, horizon=300).bits() for K in (10, 20, 40)]
        assert b[1] - b[0] == (b[2] - b[1]) / 2 == 10 * (ceil_log2(301) + 17)


class TestPool:
    def test_full_pool_matches_hedge(self):
        K, Q = 6, 30
        pool, hedge = PoolHedgeLearner(K, K, 3, rng=derive(1), horizon=Q), HedgeLearner(K, horizon=Q)
        rng = derive(2)
        for _ in range(Q):
            a, b = pool.next_distribution(), hedge.next_distribution()
            assert a.arms == b.arms and np.allclose(a.probs, b.probs, rtol=0, atol=1e-15)
            losses = dict(enumerate(rng.random(K).tolist()))
            pool.observe(losses)
            hedge.observe(losses)

    def test_support_and_refresh(self):
        pool = PoolHedgeLearner(20, 4, 2, rng=derive(3), horizon=100)
        for step in range(100):
            d = pool.next_distribution()
            assert len(d) == 4
            pool.observe({a: 1.0 for a in d.arms})
        assert len(pool.admissions) == 50

    def test_good_arm_kept_once_admitted(self):
        K, good = 30, 17
        kept = 0
        for trial in range(40):
            pool = PoolHedgeLearner(K, 4, 2, rng=derive(4, "pool", trial), horizon=400)
            admitted_at = None
            evicted_after = False
            for step in range(400):
                d = pool.next_distribution()
                if admitted_at is not None and good not in d.arms:
                    evicted_after = True
                if good in d.arms and admitted_at is None:
                    admitted_at = step
                pool.observe({a: (0.0 if a == good else 1.0) for a in d.arms})
            assert admitted_at is not None
            kept += not evicted_after
            probs = dict(pool.next_distribution().support)
            assert max(probs, key=probs.get) == good
        assert kept == 40

    def test_bits_bound(self):
        K, s, Q = 1000, 8, 500
        pool = PoolHedgeLearner(K, s, 5, rng=derive(5), horizon=Q)
        weight_bits = ceil_log2(Q + 1) + 17
        assert pool.bits() == s * (ceil_log2(K) + weight_bits) + ceil_log2(Q + 1)

    @pytest.mark.parametrize("s", [1, 11])
    def test_bad_s(self, s):
        with pytest.raises(ValueError):
            PoolHedgeLearner(10, s)


class TestReduction:
    def test_single_arm(self):
        inst = make_dense(derive(0).random((1, 120)))
        tr = run_block_reduction(inst, HedgeLearner(1, horizon=12), 12, derive(1))
        assert (tr.arms == 0).all() and tr.regret == pytest.approx(0, abs=1e-9)

    def test_constant_block_losses_are_recovered_exactly(self):
        Q, L, K = 10, 8, 4
        # on the 7-bit grid used at T = 80
        block_vals = derive(2).integers(0, 129, (K, Q)) / 128
        inst = make_dense(np.repeat(block_vals, L, axis=1))
        tr = run_block_reduction(inst, HedgeLearner(K, horizon=Q), Q, derive(3))
        for tau, rec in enumerate(tr.blocks):
            assert rec.c_hat == {j: block_vals[j, tau] for j in range(K)}

    def test_bookkeeping(self):
        inst = gen_switching(12, 1200, seed=4)
        pool = PoolHedgeLearner(12, 3, 2, rng=derive(5), horizon=60)
        tr = run_block_reduction(inst, pool, 60, derive(6))
        assert tr.extra["queries"] == 1200
        assert tr.exploration_rounds == sum(len(b.support) for b in tr.blocks) == 60 * 3
        for tau, b in enumerate(tr.blocks):
            assert set(b.c_hat) == set(b.support)
            assert all(0 <= v <= 1 for v in b.c_hat.values())
            rounds = np.array(b.explore_rounds)
            assert len(set(rounds.tolist())) == len(rounds)
            assert ((rounds > tau * 20) & (rounds <= (tau + 1) * 20)).all()
            assert (tr.arms[rounds - 1] == sorted(b.support)).all()
        totals = inst.dense().sum(axis=1)
        assert tr.regret == tr.algorithm_loss - totals.min()
        rep = regret_report(tr)
        assert rep.exploration_loss + rep.exploitation_loss == pytest.approx(tr.algorithm_loss, abs=1e-9)
        assert rep.exploration_rounds <= rep.overhead_bound == 180

    def test_zero_losses(self):
        inst = make_dense(np.zeros((3, 90)))
        tr = run_block_reduction(inst, HedgeLearner(3, horizon=9), 9, derive(7))
        rep = regret_report(tr)
        assert rep.regret == 0 and rep.exploration_rounds == 27

    def test_complement_reads_rewards(self):
        inst = make_dense(np.ones((2, 40)))
        tr = run_block_reduction(inst, HedgeLearner(2, horizon=4), 4, derive(8), complement=True)
        assert tr.algorithm_loss == 0 and tr.best_arm_loss == 0

    def test_quantization(self):
        inst = make_dense(derive(9).random((3, 64)))
        tr = run_block_reduction(inst, HedgeLearner(3, horizon=8), 8, derive(10))
        for b in tr.blocks:
            assert all((v * 64).is_integer() for v in b.c_hat.values())
        tr = run_block_reduction(inst, HedgeLearner(3, horizon=8), 8, derive(10), quantize_bits=None)
        assert tr.blocks[0].c_hat == {j: inst.dense()[j, r - 1] for j, r in
                                      zip(sorted(tr.blocks[0].support), tr.blocks[0].explore_rounds)}

    def test_errors(self):
        inst = make_dense(np.zeros((4, 30)))
        with pytest.raises(ValueError, match="divide"):
            run_block_reduction(inst, HedgeLearner(4, horizon=7), 7, derive(0))
        with pytest.raises(ValueError, match="shorter"):
            run_block_reduction(inst, HedgeLearner(4, horizon=10), 10, derive(0))

    def test_memory_report(self):
        inst = gen_switching(10, 3000, seed=1)
        tr = run_block_reduction(inst, HedgeLearner(10, horizon=100), 100, derive(2))
        assert tr.learner_bits == HedgeLearner(10, horizon=100).bits()
        assert tr.memory.total == sum(tr.memory.breakdown.values()) > tr.learner_bits


def test_block_estimate_unbiased_small():
    block = derive(11).random((6, 40))
    support = [4, 1, 3]
    draws = np.array([[sample_block_estimate(block, support, derive(12, "e", i))[0][j] for j in sorted(support)]
                      for i in range(3000)])
    c = block[sorted(support)].mean(axis=1)
    se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    assert (np.abs(draws.mean(axis=0) - c) <= 3 * se).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 50), st.floats(0.5, 100))
def test_choose_blocks_divides(T, K, sigma):
    Q = choose_blocks(T, K, sigma)
    assert T % Q == 0 and 1 <= Q <= max(1, math.ceil(T ** (2 / 3) * K ** (1 / 3) / sigma))


def test_quantize_loss():
    assert quantize_loss(0.3, None) == 0.3
    assert quantize_loss(0.3, 4) == 5 / 16


def test_bound_formula():
    assert hedge_regret_bound(30000, 300, 10, 10) == pytest.approx(3000 + 100 * math.sqrt(150 * math.log(10)))
