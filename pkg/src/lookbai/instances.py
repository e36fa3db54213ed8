"""Bandit reward instances, adversarial constructions and the sparsity analyzer.

Conventions: rounds are 1-based (``t`` in ``1..T``), arms are 0-based
(``0..K-1``).  An instance is fixed before any algorithm runs and never
changes afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .rng import derive

DENSE_LIMIT = 2**24
LOAD_TOL = 1e-12


class InstanceError(ValueError):
    pass


# --------------------------------------------------------------------------
# sources
# --------------------------------------------------------------------------


class DenseSource:
    def __init__(self, values: np.ndarray):
        self.values = values

    def block(self, t_start: int, length: int) -> np.ndarray:
        return self.values[:, t_start - 1 : t_start - 1 + length]

    def lookup(self, arms: np.ndarray, rounds: np.ndarray) -> np.ndarray:
        return self.values[arms, rounds - 1]


class PolarizedSource:
    """Binary rows: heavy rows are 1 except listed rounds, light rows 0 except listed rounds."""

    def __init__(self, K: int, T: int, heavy: np.ndarray, exceptions: list[np.ndarray]):
        self.K, self.T = K, T
        self.base = np.zeros(K, dtype=np.float64)
        self.base[heavy] = 1.0
        keys = [arm * T + (np.asarray(rs, dtype=np.int64) - 1) for arm, rs in enumerate(exceptions)]
        self.keys = np.sort(np.concatenate(keys)) if keys else np.zeros(0, dtype=np.int64)

    def _flipped(self, keys: np.ndarray) -> np.ndarray:
        if self.keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, self.keys.size - 1)
        return self.keys[pos] == keys

    def lookup(self, arms: np.ndarray, rounds: np.ndarray) -> np.ndarray:
        arms = np.asarray(arms, dtype=np.int64)
        rounds = np.asarray(rounds, dtype=np.int64)
        base = self.base[arms]
        flip = self._flipped(arms * self.T + rounds - 1)
        return np.where(flip, 1.0 - base, base)

    def block(self, t_start: int, length: int) -> np.ndarray:
        rounds = np.arange(t_start, t_start + length, dtype=np.int64)
        arms = np.arange(self.K, dtype=np.int64)[:, None]
        return self.lookup(np.broadcast_to(arms, (self.K, length)), np.broadcast_to(rounds, (self.K, length)))


class SetDisjointnessSource:
    def __init__(self, n: int, A: frozenset[int], B: frozenset[int], tau: int, band: tuple[int, int]):
        self.member_a = np.zeros(n + 1, dtype=bool)
        self.member_b = np.zeros(n + 1, dtype=bool)
        self.member_a[list(A)] = True
        self.member_b[list(B)] = True
        self.tau = tau
        self.band = band

    def lookup(self, arms: np.ndarray, rounds: np.ndarray) -> np.ndarray:
        arms = np.asarray(arms, dtype=np.int64)
        rounds = np.asarray(rounds, dtype=np.int64)
        before = rounds < self.tau
        index_val = (before & self.member_a[arms]) | (~before & self.member_b[arms])
        dummy_val = (rounds >= self.band[0]) & (rounds <= self.band[1])
        return np.where(arms == 0, dummy_val, index_val).astype(np.float64)

    def block(self, t_start: int, length: int) -> np.ndarray:
        K = self.member_a.size
        rounds = np.broadcast_to(np.arange(t_start, t_start + length, dtype=np.int64), (K, length))
        arms = np.broadcast_to(np.arange(K, dtype=np.int64)[:, None], (K, length))
        return self.lookup(arms, rounds)


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * np.uint64(0xBF58476D1CE4E5B9)
        x = x ^ (x >> np.uint64(27))
        x = x * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


class BernoulliSource:
    """Reward ``1[u(seed, arm, round) < mean[arm]]`` with ``u`` a stateless hash."""

    def __init__(self, means: np.ndarray, T: int, seed: int):
        self.means = np.asarray(means, dtype=np.float64)
        self.T = T
        self.seed = np.uint64(seed % 2**64)

    def lookup(self, arms: np.ndarray, rounds: np.ndarray) -> np.ndarray:
        arms = np.asarray(arms, dtype=np.uint64)
        rounds = np.asarray(rounds, dtype=np.uint64)
        with np.errstate(over="ignore"):
            x = _mix64(self.seed + _mix64(arms * np.uint64(self.T + 1) + rounds))
        u = (x >> np.uint64(11)).astype(np.float64) / float(2**53)
        return (u < self.means[arms.astype(np.int64)]).astype(np.float64)

    def block(self, t_start: int, length: int) -> np.ndarray:
        K = self.means.size
        rounds = np.broadcast_to(np.arange(t_start, t_start + length, dtype=np.int64), (K, length))
        arms = np.broadcast_to(np.arange(K, dtype=np.int64)[:, None], (K, length))
        return self.lookup(arms, rounds)


# --------------------------------------------------------------------------
# instance
# --------------------------------------------------------------------------


class BanditInstance:
    """A K x T reward table in [0, 1], dense or generated on demand."""

    def __init__(self, source, K: int, T: int, label: str = "", kind: str = "dense",
                 spec: dict[str, Any] | None = None):
        self._source = source
        self.K = int(K)
        self.T = int(T)
        self.label = label
        self.kind = kind
        self.spec = spec

    @property
    def is_dense(self) -> bool:
        return isinstance(self._source, DenseSource)

    def _check_round(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise InstanceError(f"round {t} outside [1, {self.T}]")

    def query(self, arm: int, t: int) -> float:
        if not 0 <= arm < self.K:
            raise InstanceError(f"arm {arm} outside [0, {self.K})")
        self._check_round(t)
        return float(self._source.lookup(np.array([arm]), np.array([t]))[0])

    def lookup(self, arms, rounds) -> np.ndarray:
        """Vectorized ``query``; no bounds checks beyond numpy's."""
        return self._source.lookup(np.asarray(arms, dtype=np.int64), np.asarray(rounds, dtype=np.int64))

    def block(self, t_start: int, length: int) -> np.ndarray:
        """All arms over rounds ``t_start .. t_start + length - 1`` as a K x length array."""
        self._check_round(t_start)
        if length < 1:
            raise InstanceError("block length must be positive")
        self._check_round(t_start + length - 1)
        return self._source.block(t_start, length)

    def dense(self) -> np.ndarray:
        return np.asarray(self.block(1, self.T))

    def materialize(self) -> "BanditInstance":
        if self.is_dense:
            return self
        return BanditInstance(DenseSource(_freeze(self.dense())), self.K, self.T, self.label, self.kind, self.spec)

    def __repr__(self) -> str:
        return f"BanditInstance(K={self.K}, T={self.T}, kind={self.kind!r}, label={self.label!r})"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _auto(source, K: int, T: int, label: str, kind: str, spec: dict[str, Any]) -> BanditInstance:
    inst = BanditInstance(source, K, T, label, kind, spec)
    if K * T <= DENSE_LIMIT:
        inst = inst.materialize()
    return inst


def make_dense(values, label: str = "dense") -> BanditInstance:
    """Wrap a K x T matrix of rewards in [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InstanceError(f"expected a non-empty K x T matrix, got shape {arr.shape}")
    bad = ~((arr >= 0.0) & (arr <= 1.0))
    if bad.any():
        arm, col = map(int, np.argwhere(bad)[0])
        raise InstanceError(f"reward {arr[arm, col]!r} at (arm={arm}, round={col + 1}) outside [0, 1]")
    return BanditInstance(DenseSource(_freeze(arr)), arr.shape[0], arr.shape[1], label, "dense")


def window_average(instance: BanditInstance, arm: int, t0: int, w: int) -> float:
    """Mean reward of ``arm`` over rounds ``t0 .. t0 + w - 1``."""
    if w < 1 or t0 < 1 or t0 + w - 1 > instance.T:
        raise InstanceError(f"window [{t0}, {t0 + w - 1}] outside [1, {instance.T}]")
    if not 0 <= arm < instance.K:
        raise InstanceError(f"arm {arm} outside [0, {instance.K})")
    row = instance.lookup(np.full(w, arm), np.arange(t0, t0 + w))
    return math.fsum(row) / w


def window_averages(instance: BanditInstance, t0: int, w: int) -> np.ndarray:
    """Per-arm means over rounds ``t0 .. t0 + w - 1``."""
    return instance.block(t0, w).mean(axis=1)


# --------------------------------------------------------------------------
# sign tree (error lower bound construction)
# --------------------------------------------------------------------------


def copy_probability(d: int) -> float:
    """Probability that a depth-``d`` node keeps its parent's sign."""
    return 0.5 * (1.0 + math.sqrt(1.0 - 1.0 / d))


def node_value(sign, d: int, M: int):
    return 0.5 * (1.0 + sign * math.sqrt(d / M))


@dataclass(frozen=True)
class SignTreeAssignment:
    """Signs and values of a depth-``M`` tree; level ``d`` holds ``2**d`` nodes."""

    M: int
    signs: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]

    def sign(self, d: int, index: int) -> int:
        return int(self.signs[d][index])

    def value(self, d: int, index: int) -> float:
        return float(self.values[d][index])

    @property
    def leaf_row(self) -> np.ndarray:
        return self.values[self.M]


def sample_sign_levels(M: int, rng: np.random.Generator, n: int = 1,
                       shared_uniforms: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Sign levels for ``n`` independent trees; level ``d`` has shape ``(n, 2**d)``."""
    if M < 1:
        raise InstanceError("sign tree depth must be >= 1")
    levels = [np.ones((n, 1), dtype=np.int8)]
    for d in range(1, M + 1):
        parent = np.repeat(levels[-1], 2, axis=1)
        u = shared_uniforms[d - 1] if shared_uniforms is not None else rng.random((n, 2**d))
        keep = u < copy_probability(d)
        levels.append(np.where(keep, parent, -parent).astype(np.int8))
    return levels


def sample_sign_tree(M: int, rng: np.random.Generator) -> SignTreeAssignment:
    """Draw one assignment top-down: copy the parent's sign w.p. ``alpha_d``, else flip."""
    levels = sample_sign_levels(M, rng)
    signs = tuple(_freeze_int(lv[0]) for lv in levels)
    values = [np.array([0.5])]
    for d in range(1, M + 1):
        values.append(node_value(signs[d].astype(np.float64), d, M))
    return SignTreeAssignment(M, signs, tuple(_freeze(v) for v in values))


def _freeze_int(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def sign_tree_pair_to_instance(f1: SignTreeAssignment, f2: SignTreeAssignment,
                               label: str = "sign-tree") -> BanditInstance:
    """Two-arm instance whose rows are the leaf values of ``f1`` and ``f2``."""
    if f1.M != f2.M:
        raise InstanceError(f"depth mismatch: {f1.M} vs {f2.M}")
    return make_dense(np.vstack([f1.leaf_row, f2.leaf_row]), label=label)


# --------------------------------------------------------------------------
# polarized instances
# --------------------------------------------------------------------------


def default_light_cap(T: int) -> int:
    return math.ceil(4 * math.sqrt(math.sqrt(T)))


def default_heavy_zeros(T: int) -> int:
    # n_i >= T - w/2 must hold for every w >= sqrt(T)
    return math.isqrt(T) // 2


def gen_polarized(K: int, T: int, r: int, light_cap: int | None = None, seed: int = 0,
                  heavy_zeros: int | None = None, heavy_arms: Sequence[int] | None = None) -> BanditInstance:
    """Binary instance with ``r`` near-all-ones rows and ``K - r`` sparse rows.

    Heavy rows get ``heavy_zeros`` zeros and light rows exactly ``light_cap``
    ones, all at uniformly random distinct rounds.  Heavy arms are a random
    subset unless ``heavy_arms`` is given.
    """
    if not 1 <= r <= K:
        raise InstanceError(f"need 1 <= r <= K, got r={r}, K={K}")
    light_cap = default_light_cap(T) if light_cap is None else int(light_cap)
    heavy_zeros = default_heavy_zeros(T) if heavy_zeros is None else int(heavy_zeros)
    if light_cap > T or light_cap < 0:
        raise InstanceError(f"light_cap={light_cap} outside [0, T={T}]")
    if heavy_zeros > T or heavy_zeros < 0:
        raise InstanceError(f"heavy_zeros={heavy_zeros} outside [0, T={T}]")
    rng = derive(seed, "polarized")
    if heavy_arms is None:
        heavy = np.sort(rng.choice(K, size=r, replace=False))
    else:
        heavy = np.sort(np.asarray(heavy_arms, dtype=np.int64))
        if heavy.size != r or len(set(heavy.tolist())) != r or heavy.min() < 0 or heavy.max() >= K:
            raise InstanceError("heavy_arms must be r distinct arms")
    is_heavy = np.zeros(K, dtype=bool)
    is_heavy[heavy] = True
    exceptions = []
    for arm in range(K):
        cnt = heavy_zeros if is_heavy[arm] else light_cap
        exceptions.append(np.sort(rng.choice(T, size=cnt, replace=False)) + 1)
    spec = {"name": "polarized",
            "params": {"K": K, "T": T, "r": r, "light_cap": light_cap, "heavy_zeros": heavy_zeros,
                       "heavy_arms": None if heavy_arms is None else [int(a) for a in heavy]},
            "seed": seed}
    inst = _auto(PolarizedSource(K, T, heavy, exceptions), K, T, f"polarized(r={r})", "polarized", spec)
    inst.heavy_arms = tuple(int(a) for a in heavy)
    return inst


def claim1_bound(K: int, T: int, r: int) -> float:
    return 4 * r + 4 * (K - r) / T**0.75


# --------------------------------------------------------------------------
# set-disjointness instances (memory lower bound construction)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SDInstanceSpec:
    n: int
    A: frozenset[int]
    B: frozenset[int]
    tau: int
    T: int
    lam: Fraction = Fraction(2, 5)
    promise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "A", frozenset(int(i) for i in self.A))
        object.__setattr__(self, "B", frozenset(int(i) for i in self.B))
        object.__setattr__(self, "lam", Fraction(self.lam))
        if self.n < 1:
            raise InstanceError("n must be >= 1")
        if not 1 <= self.tau <= self.T:
            raise InstanceError(f"pivot tau={self.tau} outside [1, {self.T}]")
        if not 0 < self.lam < Fraction(1, 2):
            raise InstanceError(f"lambda={self.lam} outside (0, 1/2)")
        for name, s in (("A", self.A), ("B", self.B)):
            if any(not 1 <= i <= self.n for i in s):
                raise InstanceError(f"{name} must be a subset of [1, {self.n}]")
        if self.promise and len(self.A & self.B) > 1:
            raise InstanceError(f"promise violated: |A & B| = {len(self.A & self.B)}")

    @property
    def K(self) -> int:
        return self.n + 1

    @property
    def intersecting(self) -> bool:
        return bool(self.A & self.B)


def dummy_band(tau: int, lam: Fraction, w: int, T: int) -> tuple[int, int]:
    """Inclusive rounds ``t`` with ``tau - lam*w <= t < tau + lam*w``, clipped to ``[1, T]``."""
    half = Fraction(lam) * w
    lo = math.ceil(tau - half)
    hi = math.ceil(tau + half) - 1
    lo, hi = max(lo, 1), min(hi, T)
    if lo > hi:
        raise InstanceError(f"dummy band around tau={tau} lies outside [1, {T}]")
    return lo, hi


def gen_set_disjointness(spec: SDInstanceSpec, w: int, lazy: bool = False) -> BanditInstance:
    """Index arm ``i``: ``1[t < tau, i in A] + 1[t >= tau, i in B]``; arm 0 is the dummy band."""
    band = dummy_band(spec.tau, spec.lam, w, spec.T)
    source = SetDisjointnessSource(spec.n, spec.A, spec.B, spec.tau, band)
    gspec = {"name": "set-disjointness",
             "params": {"n": spec.n, "A": sorted(spec.A), "B": sorted(spec.B), "tau": spec.tau,
                        "T": spec.T, "lam": str(spec.lam), "w": w, "promise": spec.promise},
             "seed": 0}
    label = f"sd(tau={spec.tau})"
    if lazy:
        inst = BanditInstance(source, spec.K, spec.T, label, "set-disjointness", gspec)
    else:
        inst = _auto(source, spec.K, spec.T, label, "set-disjointness", gspec)
    inst.band = band
    return inst


# --------------------------------------------------------------------------
# other generators
# --------------------------------------------------------------------------


def gen_bernoulli(means: Sequence[float], T: int, seed: int = 0) -> BanditInstance:
    """Stochastic baseline: independent Bernoulli rewards, a pure function of the seed."""
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 1 or means.size < 1 or ((means < 0) | (means > 1)).any():
        raise InstanceError("means must be a non-empty vector in [0, 1]")
    spec = {"name": "bernoulli", "params": {"means": means.tolist(), "T": T}, "seed": seed}
    return _auto(BernoulliSource(means, T, seed), means.size, T, "bernoulli", "bernoulli", spec)


def gen_switching(K: int, T: int, phases: int = 6, gap: float = 0.3, seed: int = 0) -> BanditInstance:
    """Piecewise-stationary Bernoulli losses whose best arm changes every phase.

    Each phase picks a fresh leader with mean ``0.5 - gap/2``; every other arm
    has mean ``0.5 + gap/2``.  Arm 0 leads one extra phase so a best fixed arm
    exists but is not obvious early on.
    """
    if K < 1 or T < 1 or phases < 1:
        raise InstanceError("K, T and phases must be positive")
    rng = derive(seed, "switching")
    leaders = rng.integers(0, K, size=phases)
    leaders[rng.integers(0, phases)] = 0
    edges = np.linspace(0, T, phases + 1).astype(np.int64)
    means = np.full((K, T), 0.5 + gap / 2)
    for p in range(phases):
        means[leaders[p], edges[p] : edges[p + 1]] = 0.5 - gap / 2
    values = (rng.random((K, T)) < means).astype(np.float64)
    inst = make_dense(values, label=f"switching(phases={phases})")
    inst.kind = "switching"
    inst.spec = {"name": "switching", "params": {"K": K, "T": T, "phases": phases, "gap": gap}, "seed": seed}
    return inst


GENERATORS = {
    "polarized": lambda p, seed: gen_polarized(seed=seed, **p),
    "bernoulli": lambda p, seed: gen_bernoulli(p["means"], p["T"], seed=seed),
    "switching": lambda p, seed: gen_switching(seed=seed, **p),
    "set-disjointness": lambda p, seed: gen_set_disjointness(
        SDInstanceSpec(p["n"], p["A"], p["B"], p["tau"], p["T"], Fraction(p.get("lam", "2/5")),
                       p.get("promise", True)), p["w"]),
}


def generate(name: str, params: dict[str, Any], seed: int = 0) -> BanditInstance:
    if name not in GENERATORS:
        raise InstanceError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    return GENERATORS[name](dict(params), seed)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def instance_to_dict(instance: BanditInstance, embed: bool = False) -> dict[str, Any]:
    head = {"k": instance.K, "t": instance.T, "label": instance.label, "kind": instance.kind}
    if instance.spec is not None and not embed and instance.spec["name"] in GENERATORS:
        head["generator"] = instance.spec
    else:
        head["rewards"] = [float(x) for x in instance.dense().ravel()]
    return head


def save_instance(instance: BanditInstance, path, embed: bool = False) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance, embed=embed)) + "\n")


def instance_from_dict(doc: dict[str, Any]) -> BanditInstance:
    for key in ("k", "t", "kind"):
        if key not in doc:
            raise InstanceError(f"instance header missing {key!r}")
    K, T = int(doc["k"]), int(doc["t"])
    if "generator" in doc:
        g = doc["generator"]
        inst = generate(g["name"], g.get("params", {}), int(g.get("seed", 0)))
        if (inst.K, inst.T) != (K, T):
            raise InstanceError(f"generator produced {inst.K}x{inst.T}, header says {K}x{T}")
        return inst
    if "rewards" not in doc:
        raise InstanceError("instance needs either 'rewards' or 'generator'")
    vals = np.asarray(doc["rewards"], dtype=np.float64)
    if vals.size != K * T:
        raise InstanceError(f"expected {K * T} rewards, got {vals.size}")
    if ((vals < -LOAD_TOL) | (vals > 1 + LOAD_TOL)).any():
        idx = int(np.argmax((vals < -LOAD_TOL) | (vals > 1 + LOAD_TOL)))
        raise InstanceError(f"reward {vals[idx]!r} at (arm={idx // T}, round={idx % T + 1}) outside [0, 1]")
    inst = make_dense(np.clip(vals, 0.0, 1.0).reshape(K, T), label=doc.get("label", ""))
    inst.kind = doc["kind"]
    return inst


def load_instance(path) -> BanditInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# local sparsity
# --------------------------------------------------------------------------


class SparsityUndefined(InstanceError):
    pass


@dataclass(frozen=True)
class SparsityProfile:
    window_w: int
    phi: float
    worst_window_start: int
    per_arm_totals: np.ndarray = field(repr=False)


def local_sparsity(instance: BanditInstance, w: int, chunk: int = 1 << 14) -> SparsityProfile:
    """Max over all length-``w`` windows of ``||n(I)||_2^2 / max_i n_i(I)^2``.

    The count ordering is recomputed inside each window.  Window sums come
    from running per-arm prefix sums, processed in chunks of window starts.
    """
    T = instance.T
    if not 1 <= w <= T:
        raise InstanceError(f"window length {w} outside [1, {T}]")
    X = instance.dense()
    prefix = np.zeros((instance.K, T + 1))
    np.cumsum(X, axis=1, out=prefix[:, 1:])
    n_windows = T - w + 1
    best_phi, best_start = -1.0, 0
    for s in range(0, n_windows, chunk):
        e = min(s + chunk, n_windows)
        counts = prefix[:, s + w : e + w] - prefix[:, s:e]
        top = counts.max(axis=0)
        if (top <= 0).any():
            bad = s + int(np.argmax(top <= 0)) + 1
            raise SparsityUndefined(f"phi undefined: window [{bad}, {bad + w - 1}] has no reward")
        phi = (counts**2).sum(axis=0) / top**2
        j = int(np.argmax(phi))
        if phi[j] > best_phi:
            best_phi, best_start = float(phi[j]), s + j + 1
    return SparsityProfile(w, best_phi, best_start, prefix[:, -1].copy())
