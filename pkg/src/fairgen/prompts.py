"""Subgroup prompt variants and deterministic generation plans."""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol

import numpy as np

from .allocator import AllocationPlan, allocate, single_group_plan
from .targets import (
    AttributeScheme,
    Distribution,
    Explicit,
    SchemeKind,
    TargetSetting,
    declared_target_record,
    target_from_dict,
)

# controlled vocabulary; users override through config
SKIN_TONE_DESCRIPTORS: dict[str, str] = {
    "I": "very light",
    "II": "light",
    "III": "medium",
    "IV": "olive",
    "V": "brown",
    "VI": "dark",
    "Light": "light",
    "Medium": "medium",
    "Dark": "dark",
    **{f"MST-{i}": f"monk tone {i}" for i in range(1, 11)},
}


class PromptError(ValueError):
    pass


class PromptRewriter(Protocol):
    def rewrite(self, base: str, category: str, scheme: AttributeScheme) -> str: ...


@dataclass(frozen=True)
class SubgroupPrompt:
    text: str
    category: str
    scheme: AttributeScheme
    base_prompt: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise PromptError("subgroup prompt text is empty")
        if self.category not in self.scheme:
            raise PromptError(f"{self.category!r} is not in scheme {self.scheme.name!r}")


def build_subgroup_prompt(
    base: str,
    category: str,
    scheme: AttributeScheme,
    descriptors: Mapping[str, str] | None = None,
    rewriter: PromptRewriter | None = None,
) -> SubgroupPrompt:
    if category not in scheme:
        raise PromptError(f"{category!r} is not in scheme {scheme.name!r}")
    base = base.strip()
    if rewriter is not None:
        text = rewriter.rewrite(base, category, scheme)
    elif scheme.kind is SchemeKind.DEMOGRAPHIC_LABELS:
        text = f"{base} who is {category}"
    elif scheme.kind.is_skin_tone:
        table = {**SKIN_TONE_DESCRIPTORS, **(descriptors or {})}
        if category not in table:
            raise PromptError(f"no skin-tone descriptor for {category!r}")
        text = f"{base} with {table[category]} skin"
    elif scheme.kind is SchemeKind.CUSTOM:
        text = f"{base}, {category}"
    else:
        raise PromptError(f"unknown scheme kind {scheme.kind!r}")
    return SubgroupPrompt(text, category, scheme, base)


def derive_seed(seed_root: int, group_index: int, image_index: int) -> int:
    """Per-image seed from a counter-keyed child of ``seed_root`` (63-bit, never the root itself)."""
    ss = np.random.SeedSequence(entropy=seed_root, spawn_key=(group_index, image_index))
    hi, lo = (int(w) for w in ss.generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) & (2**63 - 1)


@dataclass(frozen=True)
class PlanItem:
    prompt: SubgroupPrompt
    count: int
    seeds: tuple[int, ...]


@dataclass(frozen=True)
class GenerationPlan:
    base_prompt: str
    target: TargetSetting | None
    q: Distribution | None
    allocation: AllocationPlan
    items: tuple[PlanItem, ...]
    seed_root: int
    created_at: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())
    demographics: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if sum(i.count for i in self.items) != self.allocation.total:
            raise ValueError("plan item counts do not match the allocation total")
        seeds = [s for i in self.items for s in i.seeds]
        if len(set(seeds)) != len(seeds):
            raise ValueError("seed collision inside plan")

    @property
    def total(self) -> int:
        return self.allocation.total

    def iter_images(self):
        """Yield ``(item, image_index, seed)`` in plan order."""
        for item in self.items:
            for j, seed in enumerate(item.seeds):
                yield item, j, seed

    def to_dict(self) -> dict[str, Any]:
        target = None
        if self.target is not None and self.q is not None:
            target = declared_target_record(self.target, self.q)
        return {
            "base_prompt": self.base_prompt,
            "target": target,
            "scheme": self.allocation.scheme.to_dict(),
            "alloc": self.allocation.to_list(),
            "items": [
                {"prompt": i.prompt.text, "category": i.prompt.category, "seeds": list(i.seeds)}
                for i in self.items
            ],
            "seed_root": self.seed_root,
            "demographics": self.demographics,
            "created_at": self.created_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenerationPlan":
        scheme = AttributeScheme.from_dict(data["scheme"])
        allocation = AllocationPlan.from_list(scheme, data["alloc"])
        target = q = None
        if data.get("target"):
            target = target_from_dict(data["target"])
            q = Distribution.from_dict(data["target"]["q"])
        items = tuple(
            PlanItem(
                SubgroupPrompt(it["prompt"], it["category"], scheme, data["base_prompt"]),
                len(it["seeds"]),
                tuple(int(s) for s in it["seeds"]),
            )
            for it in data["items"]
        )
        return cls(
            data["base_prompt"],
            target,
            q,
            allocation,
            items,
            int(data["seed_root"]),
            data.get("created_at", ""),
            data.get("demographics"),
        )


def plan(
    base: str,
    q: Distribution,
    total: int,
    seed_root: int,
    setting: TargetSetting | None = None,
    descriptors: Mapping[str, str] | None = None,
    rewriter: PromptRewriter | None = None,
    demographics: dict[str, Any] | None = None,
) -> GenerationPlan:
    """Allocate ``total`` images over ``q`` and attach one prompt and seed list per non-empty group."""
    allocation = allocate(q, total)
    items = []
    for idx, (label, count) in enumerate(zip(q.scheme.categories, allocation.counts)):
        if count == 0:
            continue
        prompt = build_subgroup_prompt(base, label, q.scheme, descriptors, rewriter)
        seeds = tuple(derive_seed(seed_root, idx, j) for j in range(count))
        items.append(PlanItem(prompt, count, seeds))
    return GenerationPlan(
        base,
        setting if setting is not None else Explicit(q),
        q,
        allocation,
        tuple(items),
        seed_root,
        demographics=demographics,
    )


def baseline_plan(base: str, total: int, seed_root: int) -> GenerationPlan:
    """Unconditioned run: the base prompt verbatim for every image."""
    allocation = single_group_plan("baseline", total)
    items = ()
    if total:
        prompt = SubgroupPrompt(base, "baseline", allocation.scheme, base)
        items = (PlanItem(prompt, total, tuple(derive_seed(seed_root, 0, j) for j in range(total))),)
    return GenerationPlan(base, None, None, allocation, items, seed_root)
