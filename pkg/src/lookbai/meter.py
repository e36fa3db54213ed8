"""Bit accounting for algorithm state.

Memory is a model quantity: every piece of state an algorithm keeps between
rounds is declared as a :class:`StateItem` with an explicit bound, and
:func:`account` converts the declarations into bits under one fixed policy:

========  =============================================  ==========================
kind      meaning                                        bits per item
========  =============================================  ==========================
counter   integer in ``[0, bound]``                      ``ceil(log2(bound + 1))``
fixed     signed fixed point, magnitude ``<= bound``     ``ceil(log2(bound + 1)) + rho + 1``
arm       arm index out of ``bound`` arms                ``ceil(log2(bound))``
round     round index out of ``bound`` rounds            ``ceil(log2(bound))``
seed      random material of ``bound`` bits              ``bound``
========  =============================================  ==========================

The experiment's master seed is public randomness and is never declared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

RHO = 16
KINDS = ("counter", "fixed", "arm", "round", "seed")
ROLES = ("persistent", "scratch", "seed")


class MeterError(ValueError):
    pass


def ceil_log2(x: int) -> int:
    """Smallest ``b`` with ``2**b >= x`` (0 for ``x <= 1``)."""
    x = int(x)
    if x <= 1:
        return 0
    return (x - 1).bit_length()


@dataclass(frozen=True)
class StateItem:
    name: str
    kind: str
    bound: int | None
    count: int = 1
    rho: int = RHO
    role: str = "persistent"

    def bits(self) -> int:
        if self.kind not in KINDS:
            raise MeterError(f"{self.name}: unknown kind {self.kind!r}")
        if self.bound is None or self.bound < 0:
            raise MeterError(f"{self.name}: every state item must declare a finite bound")
        if self.count < 0:
            raise MeterError(f"{self.name}: negative count")
        b = int(self.bound)
        if self.kind == "counter":
            per = ceil_log2(b + 1)
        elif self.kind == "fixed":
            per = ceil_log2(b + 1) + self.rho + 1
        elif self.kind in ("arm", "round"):
            per = ceil_log2(b)
        else:
            per = b
        return per * self.count


@dataclass(frozen=True)
class MemoryReport:
    persistent_bits: int
    scratch_high_water_bits: int
    seed_bits: int
    breakdown: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.breakdown.values())

    def as_row(self) -> dict[str, int]:
        return {
            "bits": self.total,
            "persistent_bits": self.persistent_bits,
            "scratch_bits": self.scratch_high_water_bits,
            "seed_bits": self.seed_bits,
        }


def account(items: Iterable[StateItem]) -> MemoryReport:
    """Meter a list of state declarations.

    Items with the same name are merged in the breakdown.
    """
    per_role = dict.fromkeys(ROLES, 0)
    breakdown: dict[str, int] = {}
    for item in items:
        role = "seed" if item.kind == "seed" else item.role
        if role not in ROLES:
            raise MeterError(f"{item.name}: unknown role {item.role!r}")
        bits = item.bits()
        per_role[role] += bits
        breakdown[item.name] = breakdown.get(item.name, 0) + bits
    return MemoryReport(per_role["persistent"], per_role["scratch"], per_role["seed"], breakdown)


def combine(*reports: MemoryReport, prefixes: Iterable[str] | None = None) -> MemoryReport:
    prefixes = list(prefixes) if prefixes is not None else [""] * len(reports)
    breakdown: dict[str, int] = {}
    for prefix, rep in zip(prefixes, reports):
        for name, bits in rep.breakdown.items():
            key = f"{prefix}{name}"
            breakdown[key] = breakdown.get(key, 0) + bits
    return MemoryReport(
        sum(r.persistent_bits for r in reports),
        sum(r.scratch_high_water_bits for r in reports),
        sum(r.seed_bits for r in reports),
        breakdown,
    )
