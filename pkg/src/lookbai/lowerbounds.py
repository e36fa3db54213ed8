"""Exact and Monte Carlo checks for the two lower-bound constructions.

* The sign-tree construction: two arms whose leaves come from independent
  sign trees; the full-information predictor still errs on the prediction
  window with probability tied to sibling disagreement.
* The set-disjointness construction: index arms encode ``A`` before the
  pivot and ``B`` after it, and a dummy arm is 1 on a band around the pivot.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import sympy as sp

from .dyadic import default_scales, make_window, sample_window
from .instances import (InstanceError, SDInstanceSpec, copy_probability, gen_set_disjointness,
                        sample_sign_tree, sign_tree_pair_to_instance, window_averages)
from .lookahead import run_full_info_predictor, score

MAX_LB_DEPTH = 20


# --------------------------------------------------------------------------
# sibling-disagreement oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Claim4Result:
    d: int
    value: sp.Expr
    equal_parents: sp.Expr
    bound: sp.Rational
    argmin: tuple[int, int, int, int]

    @property
    def holds(self) -> bool:
        return not bool((self.value - self.bound).is_negative)


_PARENTS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _miss_probability(alpha, parents, guess: int):
    """Pr[children differ and ``guess`` is not the child with sign +1 | parents]."""
    total = sp.Integer(0)
    for c1, c2 in itertools.product((1, -1), repeat=2):
        if c1 == c2:
            continue
        winner = 1 if c1 == 1 else 2
        if guess == winner:
            continue
        p1 = alpha if c1 == parents[0] else 1 - alpha
        p2 = alpha if c2 == parents[1] else 1 - alpha
        total += p1 * p2
    return total


def claim4_oracle(d: int, alpha=None) -> Claim4Result:
    """Exact minimum over all 16 guess rules ``h(S1, S2) -> {1, 2}``.

    Parent signs are independent fair coins and each child keeps its
    parent's sign with probability ``alpha`` (default ``alpha_d``).  Values
    are sympy expressions in the field generated by ``sqrt(1 - 1/d)``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if alpha is None:
        alpha = (1 + sp.sqrt(1 - sp.Rational(1, d))) / 2
    alpha = sp.nsimplify(alpha)
    quarter = sp.Rational(1, 4)
    table = {(p, g): sp.expand(quarter * _miss_probability(alpha, p, g)) for p in _PARENTS for g in (1, 2)}
    best, best_h = None, None
    for h in itertools.product((1, 2), repeat=4):
        v = sp.expand(sum(table[p, g] for p, g in zip(_PARENTS, h)))
        if best is None or (v - best).is_negative:
            best, best_h = v, h
    equal = sp.expand(sum(table[p, g] for p, g in zip(_PARENTS, best_h) if p[0] == p[1]))
    return Claim4Result(d, sp.simplify(best), sp.simplify(equal), sp.Rational(1, 8 * d), best_h)


# --------------------------------------------------------------------------
# sign-tree error experiment
# --------------------------------------------------------------------------


def _subtree_leaf_signs(M: int, depth: int, index: int, rng: np.random.Generator,
                        copies: int = 2, shared: bool = False) -> np.ndarray:
    """Leaf signs under node ``(depth, index)`` for ``copies`` independent trees.

    Only the root-to-node path and the node's subtree are drawn; the rest of
    each tree never influences the window, so the law is unchanged.
    """
    n = 1 if shared else copies
    signs = np.ones((n, 1), dtype=np.int8)
    for d in range(1, depth + 1):
        keep = rng.random((n, 1)) < copy_probability(d)
        signs = np.where(keep, signs, -signs)
    for d in range(depth + 1, M + 1):
        parent = np.repeat(signs, 2, axis=1)
        keep = rng.random(parent.shape) < copy_probability(d)
        signs = np.where(keep, parent, -parent).astype(np.int8)
    if shared:
        signs = np.repeat(signs, copies, axis=0)
    return signs


def node_score(f1, f2, window, chosen: int) -> float:
    """Score read off the node values at the prediction half ``v_R`` of the window's block.

    This is the idealized per-node model of the construction: arm ``i`` is
    worth ``f_i(v_R)``, so the result is 0 or ``sqrt(d / M)`` with
    ``d = M - m + 1`` the depth of ``v_R``.
    """
    if f1.M != f2.M:
        raise InstanceError(f"depth mismatch: {f1.M} vs {f2.M}")
    d = f1.M - window.m + 1
    idx = 2 * (window.b - 1) + 1
    vals = (f1.value(d, idx), f2.value(d, idx))
    return max(vals) - vals[chosen]


@dataclass(frozen=True)
class LBTrial:
    m: int
    b: int
    chosen: int
    error: float


def lb_error_trial(M: int, rng: np.random.Generator, shared: bool = False, full: bool = False) -> LBTrial:
    """One draw of ``(f1, f2)`` and one run of the full-information predictor.

    ``full=True`` builds both trees and the 2 x 2**M instance explicitly;
    the default draws only the sampled block.
    """
    if not 1 <= M <= MAX_LB_DEPTH:
        raise ValueError(f"M={M} outside [1, {MAX_LB_DEPTH}]")
    T = 1 << M
    lo, hi = default_scales(T)
    if full:
        if shared:
            raise ValueError("shared trees are only supported on the block path")
        inst = sign_tree_pair_to_instance(sample_sign_tree(M, rng), sample_sign_tree(M, rng))
        pred = run_full_info_predictor(inst, lo, hi, rng)
        return LBTrial(pred.window.m, pred.window.b, pred.arm, score(inst, pred).error)
    win = sample_window(T, lo, hi, rng)
    leaves = (1 + _subtree_leaf_signs(M, M - win.m, win.b - 1, rng, shared=shared)) // 2
    y = leaves[:, : win.w].mean(axis=1)
    z = leaves[:, win.w :].mean(axis=1)
    arm = int(np.argmax(y))
    return LBTrial(win.m, win.b, arm, float(z.max() - z[arm]))


# --------------------------------------------------------------------------
# set-disjointness demo
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SDTrial:
    tau: int
    t0: int
    hit: bool
    arm: int
    says_intersect: bool
    correct: bool
    answer_correct: bool
    margin: float


def hit_event(tau: int, t0: int, w: int, lam: Fraction) -> bool:
    """Pivot inside the prediction window with a ``lam`` share of it on each side."""
    edge = -(-Fraction(lam) * w // 1)
    return t0 + edge <= tau <= t0 + w - edge


def sd_window_length(T: int, c: int) -> int:
    if T % c:
        raise InstanceError(f"c={c} must divide T={T}")
    w = T // c
    if w & (w - 1) or 2 * w > T:
        raise InstanceError(f"w=T/c={w} must be a power of two with 2w <= T")
    return w


def sd_trial(n: int, A, B, c: int, lam: Fraction, T: int, rng: np.random.Generator) -> SDTrial:
    """Draw the pivot and a window of length ``T/c``; decide from exact window means."""
    lam = Fraction(lam)
    w = sd_window_length(T, c)
    m = w.bit_length()
    tau = int(rng.integers(1, T + 1))
    win = make_window(m, int(rng.integers(1, T // (2 * w) + 1)))
    spec = SDInstanceSpec(n, frozenset(A), frozenset(B), tau, T, lam)
    inst = gen_set_disjointness(spec, w, lazy=True)
    z = window_averages(inst, win.t0, w)
    arm = int(np.argmax(z))
    top = np.sort(z)[::-1]
    says = arm != 0
    hit = hit_event(tau, win.t0, w, lam)
    correct = says == spec.intersecting
    coin = bool(rng.integers(2))
    answer = correct if hit else (coin == spec.intersecting)
    return SDTrial(tau, win.t0, hit, arm, says, correct, answer, float(top[0] - top[1]))
