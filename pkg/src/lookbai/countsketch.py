"""Weighted CountSketch with a single-item ApproxTop query.

Counters are signed fixed-point integers with ``rho`` fractional bits, so
updates are exactly linear and the state is meterable bit for bit.  Bucket
and sign hashes are degree-1 polynomials over GF(2**61 - 1), one
``(a, b)`` pair per row per role, all derived from the sketch seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import meter
from .meter import RHO, StateItem, ceil_log2

MERSENNE_61 = (1 << 61) - 1
HASH_COEFF_BITS = 61
C_WIDTH = 8.0
C_DEPTH = 1.0
DEFAULT_MAX_BITS = 1 << 32


class SketchError(ValueError):
    pass


@dataclass(frozen=True)
class SketchParams:
    k: int
    phi: float
    eps: float
    delta: float
    n_est: int
    depth: int
    width: int
    capacity: int
    seed: int
    rho: int = RHO

    @property
    def counter_bits(self) -> int:
        return ceil_log2(self.n_est + 1) + self.rho + 1


def sketch_params(k: int, phi: float, eps: float, delta: float, n_est: int, seed: int = 0,
                  c_w: float = C_WIDTH, c_d: float = C_DEPTH, capacity: int | None = None,
                  rho: int = RHO, max_bits: int | None = DEFAULT_MAX_BITS) -> SketchParams:
    """Size a sketch: ``width = ceil(c_w phi / eps^2)``, ``depth = ceil(c_d ln(n_est / delta))``."""
    if k < 1 or n_est < 1:
        raise SketchError("k and n_est must be positive")
    if phi <= 0:
        raise SketchError("phi must be positive")
    if not (0 < eps < 1 and 0 < delta < 1):
        raise SketchError("eps and delta must lie in (0, 1)")
    width = max(2, math.ceil(c_w * phi / eps**2))
    depth = max(1, math.ceil(c_d * math.log(n_est / delta)))
    if capacity is None:
        capacity = math.ceil(2 * phi) + 1
    params = SketchParams(k, float(phi), float(eps), float(delta), int(n_est), depth, width,
                          int(capacity), int(seed), rho)
    if max_bits is not None and bits_formula(params) > max_bits:
        raise SketchError(f"sketch of depth={depth} x width={width} needs {bits_formula(params)} bits, "
                          f"over the cap of {max_bits}")
    return params


def bits_formula(p: SketchParams) -> int:
    """Closed-form bit count: counters + candidate set + hash coefficients."""
    cb = p.counter_bits
    return p.depth * p.width * cb + p.capacity * (ceil_log2(p.k) + cb) + p.depth * 4 * HASH_COEFF_BITS


def _coefficients(seed: int, depth: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    a = rng.integers(1, MERSENNE_61, size=(depth, 2), dtype=np.int64)
    b = rng.integers(0, MERSENNE_61, size=(depth, 2), dtype=np.int64)
    return np.stack([a, b], axis=-1)  # (depth, role, [a, b])


class CountSketch:
    """``depth x width`` signed counters plus a bounded candidate set."""

    def __init__(self, params: SketchParams):
        self.params = params
        p = params
        self.coeffs = _coefficients(p.seed, p.depth)
        # Derived lookup cache; recomputable from the coefficients, so not metered.
        self._buckets = np.empty((p.depth, p.k), dtype=np.int64)
        self._signs = np.empty((p.depth, p.k), dtype=np.int64)
        for j in range(p.depth):
            (a1, b1), (a2, b2) = (tuple(map(int, self.coeffs[j, r])) for r in (0, 1))
            self._buckets[j] = [((a1 * x + b1) % MERSENNE_61) % p.width for x in range(p.k)]
            self._signs[j] = [1 if ((a2 * x + b2) % MERSENNE_61) & 1 else -1 for x in range(p.k)]
        self._rows = np.arange(p.depth)
        self.counters = np.zeros((p.depth, p.width), dtype=np.int64)
        self.candidates: dict[int, float] = {}
        self.total_updates = 0
        self._mass = 0
        self._scale = 1 << p.rho

    # ------------------------------------------------------------------
    def bucket(self, row: int, item: int) -> int:
        return int(self._buckets[row, item])

    def sign(self, row: int, item: int) -> int:
        return int(self._signs[row, item])

    def _check_item(self, item: int) -> None:
        if not 0 <= item < self.params.k:
            raise SketchError(f"item {item} outside [0, {self.params.k})")

    def quantize(self, weight: float) -> int:
        return int(round(weight * self._scale))

    def _add(self, item: int, q: int) -> None:
        """Add ``q`` fixed-point units of ``item``; ``q`` may be negative."""
        self.counters[self._rows, self._buckets[:, item]] += self._signs[:, item] * q

    def update(self, item: int, weight: float = 1.0) -> None:
        self._check_item(item)
        if not 0.0 <= weight <= 1.0:
            raise SketchError(f"weight {weight!r} outside [0, 1]")
        q = self.quantize(weight)
        if q == 0:
            return
        self._mass += q
        if self._mass > self.params.n_est * self._scale:
            raise SketchError(f"stream mass exceeds n_est={self.params.n_est}; counters would overflow")
        self._add(item, q)
        self.total_updates += 1
        self._offer(item, self.estimate(item))

    def _offer(self, item: int, est: float) -> None:
        cand = self.candidates
        if item in cand or len(cand) < self.params.capacity:
            cand[item] = est
            return
        # evict the smallest estimate; among equals, the highest index goes first
        victim = min(cand, key=lambda i: (cand[i], -i))
        if est > cand[victim]:
            del cand[victim]
            cand[item] = est

    def raw_estimates(self, item: int) -> np.ndarray:
        return self._signs[:, item] * self.counters[self._rows, self._buckets[:, item]]

    def estimate(self, item: int) -> float:
        """Median over rows of the signed bucket reads, in weight units."""
        self._check_item(item)
        vals = sorted(self.raw_estimates(item).tolist())
        mid = len(vals) // 2
        med = vals[mid] if len(vals) % 2 else (vals[mid - 1] + vals[mid]) / 2
        return med / self._scale

    def approx_top(self) -> int:
        """Candidate with the largest current estimate (lowest index on ties)."""
        if not self.candidates:
            raise SketchError("no observations: the sketch has seen no nonzero update")
        return max(sorted(self.candidates), key=lambda i: (self.estimate(i), -i))

    # ------------------------------------------------------------------
    def state_items(self) -> list[StateItem]:
        p = self.params
        return [
            StateItem("counters", "fixed", p.n_est, count=p.depth * p.width, rho=p.rho),
            StateItem("candidate_ids", "arm", p.k, count=p.capacity),
            StateItem("candidate_estimates", "fixed", p.n_est, count=p.capacity, rho=p.rho),
            StateItem("hash_coefficients", "seed", HASH_COEFF_BITS, count=p.depth * 4),
        ]

    def memory(self) -> meter.MemoryReport:
        return meter.account(self.state_items())

    def bits_used(self) -> int:
        return bits_formula(self.params)


def new_sketch(k: int, phi: float, eps: float, delta: float, n_est: int, seed: int = 0, **kw) -> CountSketch:
    return CountSketch(sketch_params(k, phi, eps, delta, n_est, seed=seed, **kw))


def save_snapshot(sketch: CountSketch, path) -> tuple[Path, Path]:
    """Write ``<path>.json`` (params) and ``<path>.bin`` (row-major little-endian int64 counters)."""
    path = Path(path)
    meta = {"params": asdict(sketch.params), "total_updates": sketch.total_updates, "mass": sketch._mass,
            "candidates": {str(i): v for i, v in sorted(sketch.candidates.items())},
            "counter_dtype": "<i8", "shape": list(sketch.counters.shape)}
    jpath, bpath = path.with_suffix(".json"), path.with_suffix(".bin")
    jpath.write_text(json.dumps(meta, sort_keys=True) + "\n")
    bpath.write_bytes(sketch.counters.astype("<i8").tobytes(order="C"))
    return jpath, bpath


def load_snapshot(path) -> CountSketch:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    sk = CountSketch(SketchParams(**meta["params"]))
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<i8")
    sk.counters = raw.reshape(meta["shape"]).astype(np.int64)
    sk.candidates = {int(i): float(v) for i, v in meta["candidates"].items()}
    sk.total_updates = int(meta["total_updates"])
    sk._mass = int(meta["mass"])
    return sk
