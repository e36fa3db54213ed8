"""Bounded-memory experts learners and the block reduction to bandit feedback.

The reduction splits the horizon into ``Q`` equal blocks.  In each block the
learner's distribution is frozen; one uniformly random round per support arm
is spent exploring that arm, every other round plays an arm drawn from the
distribution, and the explored losses form the block loss estimate fed back
to the learner.  Everything here works in losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import meter
from .instances import BanditInstance
from .lookahead import Environment
from .meter import MemoryReport, StateItem, ceil_log2


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class SparseDistribution:
    support: tuple[tuple[int, float], ...]

    def __post_init__(self):
        arms = [a for a, _ in self.support]
        probs = [p for _, p in self.support]
        if not arms:
            raise ValueError("empty support")
        if len(set(arms)) != len(arms):
            raise ValueError("support arms must be distinct")
        if min(probs) < 0 or abs(math.fsum(probs) - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")

    @property
    def arms(self) -> list[int]:
        return [a for a, _ in self.support]

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.support])

    def __len__(self) -> int:
        return len(self.support)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.probs
        idx = rng.choice(len(p), size=size, p=p / p.sum())
        return np.asarray(self.arms, dtype=np.int64)[idx]

    def as_vector(self, K: int) -> np.ndarray:
        v = np.zeros(K)
        for a, p in self.support:
            v[a] = p
        return v


def _hedge_probs(cum_loss: np.ndarray, eta: float) -> np.ndarray:
    z = np.exp(-eta * (cum_loss - cum_loss.min()))
    return z / z.sum()


class Learner:
    """Protocol: ``next_distribution`` and ``observe`` strictly alternate."""

    s: int

    def __init__(self):
        self._pending: SparseDistribution | None = None

    def next_distribution(self) -> SparseDistribution:
        if self._pending is not None:
            raise ProtocolError("next_distribution called twice without observe")
        dist = self._distribution()
        if len(dist) > self.s:
            raise ProtocolError(f"support {len(dist)} exceeds s={self.s}")
        self._pending = dist
        return dist

    def observe(self, losses: Mapping[int, float]) -> None:
        if self._pending is None:
            raise ProtocolError("observe called before next_distribution")
        support = set(self._pending.arms)
        extra = set(losses) - support
        if extra:
            raise ProtocolError(f"losses given for arms outside the support: {sorted(extra)}")
        self._pending = None
        self._update(losses)

    def _distribution(self) -> SparseDistribution:
        raise NotImplementedError

    def _update(self, losses: Mapping[int, float]) -> None:
        raise NotImplementedError

    def bits(self) -> int:
        return self.memory().total

    def memory(self) -> MemoryReport:
        raise NotImplementedError


class HedgeLearner(Learner):
    """Multiplicative weights over all K arms; memory is Theta(K) counters."""

    name = "hedge"

    def __init__(self, K: int, eta: float | None = None, horizon: int = 1):
        super().__init__()
        if K < 1:
            raise ValueError("K must be positive")
        self.K = self.s = K
        self.horizon = horizon
        self.eta = math.sqrt(8 * math.log(K) / horizon) if eta is None else eta
        if self.eta <= 0 and K > 1:
            raise ValueError("eta must be positive")
        self.cum_loss = np.zeros(K)
        self.steps = 0

    def _distribution(self) -> SparseDistribution:
        p = _hedge_probs(self.cum_loss, self.eta)
        return SparseDistribution(tuple((i, float(p[i])) for i in range(self.K)))

    def _update(self, losses):
        for arm, loss in losses.items():
            self.cum_loss[arm] += loss
        self.steps += 1

    def memory(self) -> MemoryReport:
        return meter.account([
            StateItem("cumulative_losses", "fixed", self.horizon, count=self.K),
            StateItem("step", "counter", self.horizon),
        ])


class PoolHedgeLearner(Learner):
    """Hedge restricted to a pool of ``s`` arms, refreshed once per epoch.

    At the end of every epoch the pool's heaviest-loss arm is evicted and a
    uniformly random outside arm enters with the pool's median cumulative
    loss.  A heuristic bounded-memory stand-in with no regret guarantee.
    """

    name = "pool"

    def __init__(self, K: int, s: int, epoch_len: int = 10, eta: float | None = None,
                 rng: np.random.Generator | None = None, horizon: int = 1):
        super().__init__()
        if not 2 <= s <= K:
            raise ValueError(f"need 2 <= s <= K, got s={s}, K={K}")
        if epoch_len < 1:
            raise ValueError("epoch_len must be positive")
        self.K, self.s, self.epoch_len, self.horizon = K, s, epoch_len, horizon
        self.eta = math.sqrt(8 * math.log(K) / horizon) if eta is None else eta
        self.rng = np.random.default_rng() if rng is None else rng
        self.pool = list(range(s)) if s == K else sorted(self.rng.choice(K, size=s, replace=False).tolist())
        self.cum_loss = np.zeros(s)
        self.steps = 0
        self.admissions: list[tuple[int, int]] = []

    def _distribution(self) -> SparseDistribution:
        p = _hedge_probs(self.cum_loss, self.eta)
        return SparseDistribution(tuple((a, float(p[j])) for j, a in enumerate(self.pool)))

    def _update(self, losses):
        for j, arm in enumerate(self.pool):
            self.cum_loss[j] += losses.get(arm, 0.0)
        self.steps += 1
        if self.s < self.K and self.steps % self.epoch_len == 0:
            self._refresh()

    def _refresh(self):
        worst = max(range(self.s), key=lambda j: (self.cum_loss[j], self.pool[j]))
        keep = [j for j in range(self.s) if j != worst]
        median = float(np.median(self.cum_loss[keep]))
        pool_set = set(self.pool)
        while True:
            newcomer = int(self.rng.integers(self.K))
            if newcomer not in pool_set:
                break
        entries = [(self.pool[j], self.cum_loss[j]) for j in keep] + [(newcomer, median)]
        entries.sort()
        self.pool = [a for a, _ in entries]
        self.cum_loss = np.array([c for _, c in entries])
        self.admissions.append((self.steps, newcomer))

    def memory(self) -> MemoryReport:
        return meter.account(self.state_items())

    def state_items(self) -> list[StateItem]:
        return [
            StateItem("pool_ids", "arm", self.K, count=self.s),
            StateItem("pool_losses", "fixed", self.horizon, count=self.s),
            StateItem("step", "counter", self.horizon),
        ]


# --------------------------------------------------------------------------
# block reduction
# --------------------------------------------------------------------------


def choose_blocks(T: int, K: int, sigma: float) -> int:
    """Largest divisor of ``T`` not above ``ceil(T^(2/3) K^(1/3) / sigma)``."""
    target = max(1, math.ceil(T ** (2 / 3) * K ** (1 / 3) / sigma))
    for q in range(min(target, T), 0, -1):
        if T % q == 0:
            return q
    return 1


def quantize_loss(x: float, bits: int | None) -> float:
    if bits is None:
        return float(x)
    scale = 1 << bits
    return round(x * scale) / scale


def sample_block_estimate(block_losses: np.ndarray, support: list[int], rng: np.random.Generator,
                          bits: int | None = None) -> tuple[dict[int, float], np.ndarray]:
    """Explore each support arm at one distinct uniformly random round of the block.

    ``block_losses`` is the K x L loss table of the block (an oracle view used
    only to read the explored entries).  Returns the estimate and the chosen
    offsets, paired with ``sorted(support)``.
    """
    L = block_losses.shape[1]
    J = sorted(support)
    if L < len(J):
        raise ValueError(f"block length {L} shorter than support size {len(J)}")
    offsets = rng.choice(L, size=len(J), replace=False)
    return {j: quantize_loss(block_losses[j, o], bits) for j, o in zip(J, offsets.tolist())}, offsets


@dataclass
class BlockRecord:
    support: tuple[int, ...]
    probs: tuple[float, ...]
    explore_rounds: tuple[int, ...]
    c_hat: dict[int, float]


@dataclass
class RegretTrace:
    K: int
    T: int
    Q: int
    arms: np.ndarray
    losses: np.ndarray
    explore_mask: np.ndarray
    blocks: list[BlockRecord]
    algorithm_loss: float
    arm_totals: np.ndarray
    memory: MemoryReport
    learner_bits: int
    extra: dict = field(default_factory=dict)

    @property
    def best_arm(self) -> int:
        return int(np.argmin(self.arm_totals))

    @property
    def best_arm_loss(self) -> float:
        return float(self.arm_totals.min())

    @property
    def regret(self) -> float:
        return self.algorithm_loss - self.best_arm_loss

    @property
    def exploration_rounds(self) -> int:
        return int(self.explore_mask.sum())


def _arm_totals(instance: BanditInstance, complement: bool, chunk: int = 1 << 16) -> np.ndarray:
    tot = [np.zeros(instance.K)]
    for s in range(1, instance.T + 1, chunk):
        blk = instance.block(s, min(chunk, instance.T - s + 1))
        tot.append((1.0 - blk if complement else blk).sum(axis=1))
    return np.sum(tot, axis=0)


def run_block_reduction(instance: BanditInstance, learner: Learner, Q: int,
                        rng: np.random.Generator | None = None, complement: bool = False,
                        quantize_bits: int | None = -1) -> RegretTrace:
    """Run the block reduction over ``instance`` read as losses.

    ``complement=True`` reads rewards ``X`` as losses ``1 - X``.
    ``quantize_bits=-1`` (default) rounds block estimates to
    ``ceil(log2 T)`` bits; ``None`` disables rounding.
    """
    rng = np.random.default_rng() if rng is None else rng
    K, T = instance.K, instance.T
    if Q < 1 or T % Q:
        raise ValueError(f"Q={Q} must divide T={T}")
    L = T // Q
    bits = ceil_log2(T) if quantize_bits == -1 else quantize_bits
    env = Environment(instance)
    arms = np.empty(T, dtype=np.int64)
    losses = np.empty(T)
    explore = np.zeros(T, dtype=bool)
    records = []
    max_s = 0
    for tau in range(Q):
        dist = learner.next_distribution()
        J = sorted(dist.arms)
        if L < len(J):
            raise ValueError(f"block length {L} shorter than support size {len(J)}")
        max_s = max(max_s, len(J))
        offsets = rng.choice(L, size=len(J), replace=False)
        block_arms = dist.sample(rng, L)
        block_arms[offsets] = J
        rounds = np.arange(tau * L + 1, (tau + 1) * L + 1)
        obs = env.query_rounds(rounds, block_arms)
        if complement:
            obs = 1.0 - obs
        c_hat = {j: quantize_loss(obs[o], bits) for j, o in zip(J, offsets.tolist())}
        learner.observe(c_hat)
        sl = slice(tau * L, (tau + 1) * L)
        arms[sl], losses[sl] = block_arms, obs
        explore[tau * L + offsets] = True
        records.append(BlockRecord(tuple(dist.arms), tuple(dist.probs.tolist()),
                                   tuple((tau * L + offsets + 1).tolist()), c_hat))
    reduction_state = [
        StateItem("block_index", "counter", Q),
        StateItem("round_in_block", "counter", L),
        StateItem("explore_offsets", "round", L, count=max_s),
        StateItem("c_hat", "counter", (1 << bits) if bits is not None else L, count=max_s),
    ]
    mem = meter.combine(learner.memory(), meter.account(reduction_state), prefixes=("learner.", "reduction."))
    return RegretTrace(K, T, Q, arms, losses, explore, records, math.fsum(losses.tolist()),
                       _arm_totals(instance, complement), mem, learner.bits(),
                       extra={"queries": env.queries})


@dataclass(frozen=True)
class RegretReport:
    regret: float
    exploration_rounds: int
    exploration_loss: float
    exploitation_loss: float
    best_arm_loss: float
    overhead_bound: int


def regret_report(trace: RegretTrace) -> RegretReport:
    """Realized regret split into exploration and exploitation losses."""
    explore_loss = math.fsum(trace.losses[trace.explore_mask].tolist())
    exploit_loss = math.fsum(trace.losses[~trace.explore_mask].tolist())
    s_max = max(len(b.support) for b in trace.blocks)
    return RegretReport(trace.regret, trace.exploration_rounds, explore_loss, exploit_loss,
                        trace.best_arm_loss, trace.Q * s_max)


def hedge_regret_bound(T: int, Q: int, K: int, s: int) -> float:
    """``Q s + (T/Q) sqrt(Q ln K / 2)``: exploration overhead plus block-scaled Hedge regret."""
    return Q * s + (T / Q) * math.sqrt(Q * math.log(K) / 2)
