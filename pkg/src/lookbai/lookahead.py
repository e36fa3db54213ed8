"""Lookahead best-arm identification under bandit feedback.

Both algorithms sample a dyadic window, spend the ``w`` rounds before
``t0`` querying one uniformly random arm per round, and commit to an arm for
the prediction window ``[t0, t0 + w - 1]``.  The dense variant keeps one
accumulator per arm; the sparse variant feeds the same observations into a
weighted CountSketch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import meter
from .countsketch import CountSketch, sketch_params
from .dyadic import WindowChoice, enumerate_windows, floor_log2, resolve_scales, sample_window
from .instances import BanditInstance, window_averages
from .meter import MemoryReport, StateItem
from .rng import child_seed


class QueryError(RuntimeError):
    pass


class Environment:
    """Bandit-feedback adapter: one query per round, rounds strictly increasing."""

    def __init__(self, instance: BanditInstance):
        self.instance = instance
        self.queries = 0
        self.last_round = 0

    def query_rounds(self, rounds: np.ndarray, arms: np.ndarray) -> np.ndarray:
        rounds = np.asarray(rounds, dtype=np.int64)
        arms = np.asarray(arms, dtype=np.int64)
        if rounds.size == 0:
            return np.zeros(0)
        if rounds.shape != arms.shape or rounds.ndim != 1:
            raise QueryError("rounds and arms must be matching vectors")
        if rounds[0] <= self.last_round or (rounds.size > 1 and (np.diff(rounds) <= 0).any()):
            raise QueryError("each round may be queried once, in increasing order")
        if rounds[-1] > self.instance.T:
            raise QueryError(f"round {int(rounds[-1])} beyond horizon {self.instance.T}")
        if arms.min() < 0 or arms.max() >= self.instance.K:
            raise QueryError("arm out of range")
        self.queries += rounds.size
        self.last_round = int(rounds[-1])
        return self.instance.lookup(arms, rounds)

    def query(self, t: int, arm: int) -> float:
        return float(self.query_rounds(np.array([t]), np.array([arm]))[0])


@dataclass
class Prediction:
    window: WindowChoice
    arm: int
    memory: MemoryReport
    queries: int
    estimates: np.ndarray | None = None
    sketch: CountSketch | None = None
    exact_counts: np.ndarray | None = None
    sketch_updates: int = 0


@dataclass(frozen=True)
class LookaheadScore:
    best_arm_avg: float
    chosen_avg: float

    @property
    def error(self) -> float:
        return self.best_arm_avg - self.chosen_avg


def _check_horizon(instance: BanditInstance, lo: int | None, hi: int | None) -> tuple[int, int]:
    if instance.T < 2:
        raise ValueError(f"horizon T={instance.T} shorter than the smallest window footprint (2 rounds)")
    return resolve_scales(instance.T, lo, hi)


def _observe(env: Environment, window: WindowChoice, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Discard rounds before the window, then one uniform arm per observation round."""
    K = env.instance.K
    if window.obs_start > 1:
        pre = np.arange(1, window.obs_start)
        env.query_rounds(pre, np.zeros(pre.size, dtype=np.int64))
    arms = rng.integers(0, K, size=window.w)
    rewards = env.query_rounds(np.arange(window.obs_start, window.t0), arms)
    return arms, rewards


def observation_counts(instance: BanditInstance, window: WindowChoice, rng: np.random.Generator) -> np.ndarray:
    """One run of the observation loop for a fixed window; returns the accumulators."""
    arms = rng.integers(0, instance.K, size=window.w)
    rewards = instance.lookup(arms, np.arange(window.obs_start, window.t0))
    return np.bincount(arms, weights=rewards, minlength=instance.K)


def registers(T: int) -> list[StateItem]:
    return [StateItem("registers", "round", T, count=3)]


def dense_memory(K: int, T: int, w: int) -> MemoryReport:
    """K fixed-point accumulators in ``[0, w]`` plus the window registers."""
    return meter.account([StateItem("accumulators", "fixed", w, count=K)] + registers(T))


def run_bai(instance: BanditInstance, lo: int | None = None, hi: int | None = None,
            rng: np.random.Generator | None = None) -> Prediction:
    """Dense lookahead BAI: argmax of per-arm reward accumulators, lowest index on ties."""
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = _check_horizon(instance, lo, hi)
    window = sample_window(instance.T, lo, hi, rng)
    env = Environment(instance)
    arms, rewards = _observe(env, window, rng)
    n_tilde = np.bincount(arms, weights=rewards, minlength=instance.K)
    arm = int(np.argmax(n_tilde))
    return Prediction(window, arm, dense_memory(instance.K, instance.T, window.w), env.queries,
                      estimates=n_tilde)


def sparse_defaults(T: int, delta: float = 0.1) -> tuple[float, float]:
    """``(eps_cs, delta_cs) = (eps1 / 2, delta * eps1 / 2)`` with ``eps1 = 2 / sqrt(floor(log2 T / 2))``."""
    half = max(1, floor_log2(T) // 2)
    eps1 = 2.0 / math.sqrt(half)
    eps_cs = min(eps1 / 2, 0.5)
    return eps_cs, delta * eps_cs


def run_sparse_bai(instance: BanditInstance, phi: float, eps_cs: float | None = None,
                   delta_cs: float | None = None, lo: int | None = None, hi: int | None = None,
                   rng: np.random.Generator | None = None, delta: float = 0.1, audit: bool = False,
                   **sketch_kw) -> Prediction:
    """Sparse lookahead BAI: observations go into a weighted CountSketch over the K arms."""
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = _check_horizon(instance, lo, hi)
    d_eps, d_delta = sparse_defaults(instance.T, delta)
    eps_cs = d_eps if eps_cs is None else eps_cs
    delta_cs = d_delta if delta_cs is None else delta_cs
    window = sample_window(instance.T, lo, hi, rng)
    env = Environment(instance)
    arms, rewards = _observe(env, window, rng)
    # drawn after the observations so dense and sparse runs on one stream see the same arms
    params = sketch_params(instance.K, phi, eps_cs, delta_cs, n_est=window.w, seed=child_seed(rng), **sketch_kw)
    sketch = CountSketch(params)
    for item, x in zip(arms.tolist(), rewards.tolist()):
        sketch.update(item, x)
    if sketch.candidates:
        arm = sketch.approx_top()
    else:
        arm = 0  # nothing rewarding was observed: every arm estimates to zero
    mem = meter.combine(sketch.memory(), meter.account(registers(instance.T)))
    exact = np.bincount(arms, weights=rewards, minlength=instance.K) if audit else None
    return Prediction(window, arm, mem, env.queries, sketch=sketch, exact_counts=exact,
                      sketch_updates=sketch.total_updates)


def score(instance: BanditInstance, prediction: Prediction | WindowChoice, arm: int | None = None) -> LookaheadScore:
    """Gap between the best arm and the chosen arm over the prediction window."""
    if isinstance(prediction, Prediction):
        window, arm = prediction.window, prediction.arm
    else:
        window = prediction
    if window.pred_end > instance.T or window.t0 < 1:
        raise ValueError(f"prediction window [{window.t0}, {window.pred_end}] outside [1, {instance.T}]")
    z = window_averages(instance, window.t0, window.w)
    return LookaheadScore(float(z.max()), float(z[arm]))


def full_info_arm(instance: BanditInstance, window: WindowChoice) -> int:
    y = window_averages(instance, window.obs_start, window.w)
    return int(np.argmax(y))


def run_full_info_predictor(instance: BanditInstance, lo: int | None = None, hi: int | None = None,
                            rng: np.random.Generator | None = None) -> Prediction:
    """Sees every arm's exact observation-window mean and picks the largest."""
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = _check_horizon(instance, lo, hi)
    window = sample_window(instance.T, lo, hi, rng)
    y = window_averages(instance, window.obs_start, window.w)
    mem = meter.account([StateItem("window_means", "fixed", window.w, count=instance.K)] + registers(instance.T))
    return Prediction(window, int(np.argmax(y)), mem, 0, estimates=y)


def full_info_expected_error(instance: BanditInstance, lo: int | None = None, hi: int | None = None) -> float:
    """Exact expected score error of the full-information predictor under the window law."""
    terms = []
    for window, p in enumerate_windows(instance.T, lo, hi):
        terms.append(float(p) * score(instance, window, full_info_arm(instance, window)).error)
    return math.fsum(terms)


def window_law_probability(T: int, lo: int | None, hi: int | None, pred) -> Fraction:
    """Exact probability that the sampled window satisfies ``pred``."""
    return sum((p for win, p in enumerate_windows(T, lo, hi) if pred(win)), Fraction(0))
