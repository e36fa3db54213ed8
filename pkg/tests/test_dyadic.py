from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lookbai.dyadic import (WindowError, average_tree, default_scales, enumerate_windows, lemma1_gap,
                            make_window, orthogonality_check, sample_window, walk_matrix, walk_values)
from lookbai.rng import derive


class TestWindows:
    def test_algorithm_formulas(self):
        w = make_window(2, 1, T=8)
        assert (w.w, w.t0, w.obs_start, w.pred_end) == (2, 3, 1, 4)

    def test_prediction_ends_at_horizon(self):
        w = make_window(3, 1, T=8)
        assert (w.w, w.t0, w.pred_end) == (4, 5, 8)

    def test_window_outside_prefix_rejected(self):
        with pytest.raises(WindowError):
            make_window(3, 2, T=12)

    def test_default_scales(self):
        assert default_scales(2**16) == (8, 16)
        assert default_scales(1000) == (5, 9)
        with pytest.raises(WindowError):
            default_scales(1)

    @pytest.mark.parametrize("lo,hi", [(3, 2), (1, 5)])
    def test_bad_scale_ranges(self, lo, hi):
        with pytest.raises(WindowError):
            sample_window(8, lo, hi, derive(0))

    def test_enumeration_counts(self):
        wins = enumerate_windows(8, 1, 3)
        assert len(wins) == 7
        assert sum(p for _, p in wins) == 1

    def test_enumeration_small(self):
        got = {(w.m, w.b): p for w, p in enumerate_windows(4, 1, 2)}
        assert got == {(1, 1): Fraction(1, 4), (1, 2): Fraction(1, 4), (2, 1): Fraction(1, 2)}

    @given(st.integers(2, 5000), st.integers(0, 2**32))
    def test_sampled_windows_are_aligned(self, T, seed):
        lo, hi = default_scales(T)
        w = sample_window(T, lo, hi, derive(seed))
        assert w.w == 2 ** (w.m - 1)
        assert w.obs_start >= 1
        assert w.pred_end <= 2 ** int(math.log2(T))
        assert (w.obs_start - 1) % 2**w.m == 0

    def test_sampler_matches_enumerated_law(self):
        T, lo, hi, n = 2**10, 3, 9, 100_000
        rng = derive(5, "freq")
        probs = {(w.m, w.b): float(p) for w, p in enumerate_windows(T, lo, hi)}
        counts = dict.fromkeys(probs, 0)
        for _ in range(n):
            w = sample_window(T, lo, hi, rng)
            counts[w.m, w.b] += 1
        for key, p in probs.items():
            se = math.sqrt(p * (1 - p) / n)
            # 3-SE per cell would fail by chance over 254 cells; 4.5 SE keeps family-wise error small
            assert abs(counts[key] / n - p) <= 4.5 * se


class TestLemma1:
    def test_constant_sequence(self):
        assert lemma1_gap(np.full(64, 0.3)).value == 0

    def test_alternating_sequence(self):
        res = lemma1_gap([1, 0] * 4, 1, 2)
        assert res.value == 0.5
        assert res.bound == 4.0

    def test_single_scale_flags_bound(self):
        res = lemma1_gap([1, 0] * 4, 2, 2)
        assert res.bound is None and not res.bound_applicable

    def test_matches_enumeration(self):
        seq = derive(3).random(100)
        terms = []
        for w, p in enumerate_windows(100):
            y = seq[w.obs_start - 1 : w.t0 - 1].mean()
            ys = seq[w.t0 - 1 : w.pred_end].mean()
            terms.append(float(p) * (y - ys) ** 2)
        assert lemma1_gap(seq).value == pytest.approx(math.fsum(terms), abs=1e-12)

    def test_rejects_out_of_range_values(self):
        with pytest.raises(WindowError):
            lemma1_gap([0.5, 1.5, 0, 0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6))
    def test_bound_holds(self, seed, a, b):
        lo, hi = min(a, b), max(a, b)
        if lo == hi:
            hi = lo + 1
        res = lemma1_gap(derive(seed).random(128), lo, hi)
        assert res.value <= res.bound + 1e-12


class TestWalks:
    def test_walk_left(self):
        assert walk_values([1, 0, 0, 0], (0, 0)).node_values == (0.25, 0.5, 1.0)

    @pytest.mark.parametrize("second", [0, 1])
    def test_walk_right(self, second):
        z = walk_values([1, 0, 0, 0], (1, second)).node_values
        assert z[1] == 0 and z[2] == 0

    def test_non_power_of_two(self):
        with pytest.raises(WindowError):
            walk_values([1, 0, 0], (0,))

    def test_hand_case(self):
        lhs, rhs = orthogonality_check([1, 0, 0, 0], 0, 2)
        assert lhs == rhs == 3 / 16

    def test_constant(self):
        assert orthogonality_check(np.full(16, 0.7), 1, 4) == (0.0, 0.0)

    def test_enumeration_refused_when_too_deep(self):
        with pytest.raises(WindowError, match="refused"):
            walk_matrix(np.zeros(2**13))

    def test_bad_levels(self):
        with pytest.raises(WindowError):
            orthogonality_check([1, 0, 0, 0], 2, 2)

    def test_block_midpoint_is_half_sum(self):
        seq = derive(8).random(2**6)
        M = 6
        for m in range(1, M + 1):
            for b in range(1, 2 ** (M - m) + 1):
                w = make_window(m, b)
                y = seq[w.obs_start - 1 : w.t0 - 1].mean()
                ys = seq[w.t0 - 1 : w.pred_end].mean()
                bits = [int(c) for c in format(b - 1, f"0{M - m}b")] if m < M else []
                z = walk_values(seq, bits + [0] * m).node_values
                assert z[M - m] == pytest.approx((y + ys) / 2, abs=1e-12)
                # one step further lands on the observation or prediction half
                assert z[M - m + 1] == pytest.approx(y, abs=1e-12)
                z_right = walk_values(seq, bits + [1] + [0] * (m - 1)).node_values
                assert z_right[M - m + 1] == pytest.approx(ys, abs=1e-12)

    def test_walk_marginal_is_uniform_over_level(self):
        seq = derive(9).random(2**5)
        Z, tree = walk_matrix(seq), average_tree(seq)
        for j in range(6):
            # every depth-j node is reached by exactly 2**(5-j) of the 32 walks
            assert np.array_equal(np.sort(Z[j]), np.sort(np.repeat(tree[j], 2 ** (5 - j))))

    def test_trace_node_values_are_block_means(self):
        seq = derive(10).random(2**7)
        choices = (1, 0, 1, 1, 0, 0, 1)
        tr = walk_values(seq, choices)
        idx = 0
        for j in range(8):
            size = 2 ** (7 - j)
            assert tr.node_values[j] == pytest.approx(seq[idx * size : (idx + 1) * size].mean(), abs=1e-12)
            if j < 7:
                idx = 2 * idx + choices[j]
