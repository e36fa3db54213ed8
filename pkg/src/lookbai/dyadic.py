"""Dyadic windows and exact oracles over the binary tree of block averages.

A scale ``m`` and block index ``b`` (1-based) pick the aligned block of
``2**m`` rounds ``[(b-1) 2**m + 1, b 2**m]``.  Its first half is the
observation window and its second half the prediction window, each of
``w = 2**(m-1)`` rounds.  Only the prefix of length ``T' = 2**floor(log2 T)``
is ever used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MAX_WALK_DEPTH = 12


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowChoice:
    m: int
    b: int
    w: int
    t0: int

    @property
    def obs_start(self) -> int:
        return self.t0 - self.w

    @property
    def pred_end(self) -> int:
        return self.t0 + self.w - 1

    def block_depth(self, M: int) -> int:
        """Depth of the block's node in a tree of height ``M``."""
        return M - self.m


def floor_log2(T: int) -> int:
    if T < 1:
        raise WindowError("horizon must be >= 1")
    return int(T).bit_length() - 1


def default_scales(T: int) -> tuple[int, int]:
    """``(ceil(M'/2), M')`` with ``M' = floor(log2 T)``."""
    Mp = floor_log2(T)
    if Mp < 1:
        raise WindowError(f"horizon T={T} too short for any dyadic window")
    return max(1, math.ceil(Mp / 2)), Mp


def _check_scales(T: int, lo: int, hi: int) -> int:
    Mp = floor_log2(T)
    if lo < 1:
        raise WindowError(f"lowest scale must be >= 1, got {lo}")
    if lo > hi:
        raise WindowError(f"empty scale range: lo={lo} > hi={hi}")
    if hi > Mp:
        raise WindowError(f"scale hi={hi} exceeds floor(log2 T)={Mp}")
    return Mp


def make_window(m: int, b: int, T: int | None = None) -> WindowChoice:
    w = 1 << (m - 1)
    t0 = (b - 1) * (1 << m) + w + 1
    if T is not None and t0 + w - 1 > (1 << floor_log2(T)):
        raise WindowError(f"window (m={m}, b={b}) leaves the dyadic prefix of T={T}")
    return WindowChoice(m, b, w, t0)


def resolve_scales(T: int, lo: int | None, hi: int | None) -> tuple[int, int]:
    dlo, dhi = default_scales(T)
    lo = dlo if lo is None else lo
    hi = dhi if hi is None else hi
    _check_scales(T, lo, hi)
    return lo, hi


def sample_window(T: int, lo: int | None, hi: int | None, rng: np.random.Generator) -> WindowChoice:
    """Uniform scale in ``[lo, hi]``, then uniform block at that scale."""
    lo, hi = resolve_scales(T, lo, hi)
    Tp = 1 << floor_log2(T)
    m = int(rng.integers(lo, hi + 1))
    b = int(rng.integers(1, Tp // (1 << m) + 1))
    return make_window(m, b)


def enumerate_windows(T: int, lo: int | None = None, hi: int | None = None) -> list[tuple[WindowChoice, Fraction]]:
    """Every ``(m, b)`` pair with its exact sampling probability."""
    lo, hi = resolve_scales(T, lo, hi)
    Tp = 1 << floor_log2(T)
    n_scales = hi - lo + 1
    out = []
    for m in range(lo, hi + 1):
        blocks = Tp >> m
        p = Fraction(1, n_scales * blocks)
        out.extend((make_window(m, b), p) for b in range(1, blocks + 1))
    return out


def half_means(seq: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Observation and prediction means of every block at scale ``m`` (prefix already trimmed)."""
    blocks = seq.reshape(-1, 1 << m)
    w = 1 << (m - 1)
    return blocks[:, :w].mean(axis=1), blocks[:, w:].mean(axis=1)


@dataclass(frozen=True)
class GapResult:
    value: float
    bound: float | None

    @property
    def bound_applicable(self) -> bool:
        return self.bound is not None


def lemma1_gap(sequence, lo: int | None = None, hi: int | None = None) -> GapResult:
    """Exact ``E_{m,b}[(y - y*)^2]`` over the dyadic window law.

    ``bound`` is ``4 / (hi - lo)``, or None when ``hi == lo``.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 1:
        raise WindowError("sequence must be one-dimensional")
    if ((seq < 0) | (seq > 1)).any():
        raise WindowError("sequence values must lie in [0, 1]")
    T = seq.size
    lo, hi = resolve_scales(T, lo, hi)
    seq = seq[: 1 << floor_log2(T)]
    per_scale = []
    for m in range(lo, hi + 1):
        y, y_star = half_means(seq, m)
        per_scale.append(math.fsum((y - y_star) ** 2) / y.size)
    value = math.fsum(per_scale) / (hi - lo + 1)
    return GapResult(value, 4.0 / (hi - lo) if hi > lo else None)


# --------------------------------------------------------------------------
# average tree and random walks
# --------------------------------------------------------------------------


def _walk_depth(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise WindowError(f"sequence length {n} is not a power of two")
    return n.bit_length() - 1


def average_tree(sequence) -> list[np.ndarray]:
    """Levels ``0..M`` of the perfect binary tree whose nodes average their children.

    Level ``j`` has ``2**j`` nodes; level ``M`` is the sequence itself.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    M = _walk_depth(seq.size)
    levels = [seq]
    for _ in range(M):
        child = levels[-1]
        levels.append((child[0::2] + child[1::2]) / 2)
    return levels[::-1]


@dataclass(frozen=True)
class WalkTrace:
    M: int
    sequence: np.ndarray
    choices: tuple[int, ...]
    node_values: tuple[float, ...]


def walk_values(sequence, choices) -> WalkTrace:
    """Values ``Z(0..M)`` met by walking down with the given left(0)/right(1) choices."""
    seq = np.asarray(sequence, dtype=np.float64)
    M = _walk_depth(seq.size)
    choices = tuple(int(c) for c in choices)
    if len(choices) != M or any(c not in (0, 1) for c in choices):
        raise WindowError(f"need exactly {M} choice bits in {{0, 1}}")
    tree = average_tree(seq)
    idx, vals = 0, [float(tree[0][0])]
    for j, c in enumerate(choices, start=1):
        idx = 2 * idx + c
        vals.append(float(tree[j][idx]))
    return WalkTrace(M, seq, choices, tuple(vals))


def walk_matrix(sequence) -> np.ndarray:
    """``Z[j, leaf]``: the depth-``j`` value on the walk ending at ``leaf``, for all ``2**M`` walks."""
    tree = average_tree(sequence)
    M = len(tree) - 1
    if M > MAX_WALK_DEPTH:
        raise WindowError(f"walk enumeration refused for M={M} > {MAX_WALK_DEPTH}")
    leaves = np.arange(1 << M)
    return np.vstack([tree[j][leaves >> (M - j)] for j in range(M + 1)])


def orthogonality_check(sequence, L: int, U: int) -> tuple[float, float]:
    """``(E[(Z(U) - Z(L))^2], E[sum_{j=L}^{U-1} (Z(j+1) - Z(j))^2])`` over all walks."""
    Z = walk_matrix(sequence)
    M = Z.shape[0] - 1
    if not 0 <= L < U <= M:
        raise WindowError(f"need 0 <= L < U <= {M}, got L={L}, U={U}")
    n = Z.shape[1]
    lhs = math.fsum((Z[U] - Z[L]) ** 2) / n
    incr = np.diff(Z[L : U + 1], axis=0) ** 2
    rhs = math.fsum(incr.ravel()) / n
    return lhs, rhs
