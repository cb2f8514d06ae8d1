"""Largest-remainder apportionment of an image budget across subgroups."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

from .targets import AttributeScheme, Distribution, SchemeKind


@dataclass(frozen=True)
class AllocationPlan:
    scheme: AttributeScheme
    counts: tuple[int, ...]
    total: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.counts) != len(self.scheme):
            raise ValueError("one count per category required")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        if sum(self.counts) != self.total:
            raise ValueError(f"counts sum to {sum(self.counts)}, expected {self.total}")

    def __getitem__(self, label: str) -> int:
        return self.counts[self.scheme.index(label)]

    def to_list(self) -> list[dict[str, Any]]:
        return [{"label": c, "count": n} for c, n in zip(self.scheme.categories, self.counts)]

    @classmethod
    def from_list(cls, scheme: AttributeScheme, rows: list[Mapping[str, Any]]) -> "AllocationPlan":
        by_label = {r["label"]: int(r["count"]) for r in rows}
        counts = tuple(by_label.get(c, 0) for c in scheme.categories)
        return cls(scheme, counts, sum(counts))


def allocate(q: Distribution, total: int) -> AllocationPlan:
    """Hamilton apportionment of ``total`` items according to ``q``.

    Every group gets ``floor(q_i * total)``; the leftover units go one at a time
    to the largest fractional parts, ties to the lower index. Zero-probability
    groups never receive a unit.
    """
    if total < 0:
        raise ValueError(f"total must be non-negative, got {total}")
    quotas = [p * total for p in q.probs]
    counts = [math.floor(x) for x in quotas]
    remainder = total - sum(counts)
    # float quotas can overshoot by one ulp-driven unit; pull back from the smallest fractions
    while remainder < 0:
        i = min((i for i, c in enumerate(counts) if c > 0), key=lambda i: (quotas[i] - counts[i], -i))
        counts[i] -= 1
        remainder += 1
    eligible = [i for i, p in enumerate(q.probs) if p > 0]
    order = sorted(eligible, key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    remainder -= min(remainder, len(order))
    if remainder:
        # only reachable if rounding noise left more units than positive groups
        for i in order:
            if not remainder:
                break
            counts[i] += 1
            remainder -= 1
    return AllocationPlan(q.scheme, tuple(counts), total)


def single_group_plan(label: str, total: int) -> AllocationPlan:
    """Allocation for an unconditioned run: one pseudo-group holding the whole budget."""
    return AllocationPlan(AttributeScheme("baseline", (label,), SchemeKind.CUSTOM), (total,), total)
