"""Attribute schemes, probability distributions and declared-target construction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np

SUM_TOLERANCE = 1e-9


class SchemeKind(str, Enum):
    SKIN_TONE_FITZPATRICK = "skin_tone_fitzpatrick"
    SKIN_TONE_BINS3 = "skin_tone_bins3"
    SKIN_TONE_MONK = "skin_tone_monk"
    DEMOGRAPHIC_LABELS = "demographic_labels"
    CUSTOM = "custom"

    @property
    def is_skin_tone(self) -> bool:
        return self in (
            SchemeKind.SKIN_TONE_FITZPATRICK,
            SchemeKind.SKIN_TONE_BINS3,
            SchemeKind.SKIN_TONE_MONK,
        )


class DistributionError(ValueError):
    """A probability vector violates the distribution invariants."""


class SchemeMismatchError(ValueError):
    pass


class DegenerateReferenceError(ValueError):
    """The extreme target cannot redistribute mass away from a focal group holding all of it."""


@dataclass(frozen=True)
class AttributeScheme:
    """Named, ordered set of categories. Order is significant and drives tie-breaking."""

    name: str
    categories: tuple[str, ...]
    kind: SchemeKind = SchemeKind.CUSTOM

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not self.categories:
            raise ValueError(f"scheme {self.name!r} has no categories")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError(f"scheme {self.name!r} has duplicate labels")

    def __len__(self) -> int:
        return len(self.categories)

    def __contains__(self, label: object) -> bool:
        return label in self.categories

    def index(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise KeyError(f"{label!r} is not a category of scheme {self.name!r}") from None

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind.value, "labels": list(self.categories)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AttributeScheme":
        return cls(data["name"], tuple(data["labels"]), SchemeKind(data.get("kind", "custom")))


FITZPATRICK = AttributeScheme(
    "fitzpatrick", ("I", "II", "III", "IV", "V", "VI"), SchemeKind.SKIN_TONE_FITZPATRICK
)
BINS3 = AttributeScheme("bins3", ("Light", "Medium", "Dark"), SchemeKind.SKIN_TONE_BINS3)
MONK = AttributeScheme(
    "monk", tuple(f"MST-{i}" for i in range(1, 11)), SchemeKind.SKIN_TONE_MONK
)

BUILTIN_SCHEMES = {s.name: s for s in (FITZPATRICK, BINS3, MONK)}


def demographic_scheme(labels: Iterable[str], name: str = "demographics") -> AttributeScheme:
    return AttributeScheme(name, tuple(labels), SchemeKind.DEMOGRAPHIC_LABELS)


@dataclass(frozen=True)
class Distribution:
    scheme: AttributeScheme
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != len(self.scheme):
            raise DistributionError(
                f"{len(probs)} probabilities for {len(self.scheme)} categories of {self.scheme.name!r}"
            )
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise DistributionError(f"probabilities must be finite and non-negative: {probs}")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise DistributionError(f"probabilities sum to {total!r}, expected 1")

    @classmethod
    def normalized(cls, scheme: AttributeScheme, weights: Sequence[float]) -> "Distribution":
        """Build a distribution from non-negative weights, rescaling them to unit sum."""
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(scheme),) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DistributionError(f"invalid weights {list(weights)} for {scheme.name!r}")
        total = w.sum()
        if total <= 0:
            raise DistributionError("weights sum to zero")
        return cls(scheme, tuple(w / total))

    @classmethod
    def from_mapping(cls, scheme: AttributeScheme, mapping: Mapping[str, float]) -> "Distribution":
        unknown = set(mapping) - set(scheme.categories)
        if unknown:
            raise KeyError(f"labels not in scheme {scheme.name!r}: {sorted(unknown)}")
        return cls(scheme, tuple(float(mapping.get(c, 0.0)) for c in scheme.categories))

    def __getitem__(self, label: str) -> float:
        return self.probs[self.scheme.index(label)]

    def as_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=float)

    def as_mapping(self) -> dict[str, float]:
        return dict(zip(self.scheme.categories, self.probs))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme.name,
            "kind": self.scheme.kind.value,
            "labels": list(self.scheme.categories),
            "probs": list(self.probs),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Distribution":
        scheme = AttributeScheme(data["scheme"], tuple(data["labels"]), SchemeKind(data.get("kind", "custom")))
        return cls(scheme, tuple(data["probs"]))


def _require_same_scheme(a: Distribution, b: Distribution) -> None:
    if a.scheme.categories != b.scheme.categories:
        raise SchemeMismatchError(f"schemes differ: {a.scheme.name!r} vs {b.scheme.name!r}")


def mix(a: Distribution, b: Distribution, alpha: float) -> Distribution:
    """Convex combination ``alpha * a + (1 - alpha) * b``."""
    _require_same_scheme(a, b)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"mixing weight must lie in [0, 1], got {alpha}")
    return Distribution(a.scheme, tuple(alpha * x + (1 - alpha) * y for x, y in zip(a.probs, b.probs)))


def uniform_target(scheme: AttributeScheme) -> Distribution:
    m = len(scheme)
    return Distribution(scheme, (1.0 / m,) * m)


def intermediate_target(r: Distribution, alpha: float = 0.5) -> Distribution:
    """Blend the reference distribution ``r`` with the uniform target.

    ``alpha=0`` gives uniform and ``alpha=1`` gives ``r`` back; the declared
    intermediate setting itself uses the open interval (see :class:`Intermediate`).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    m = len(r.scheme)
    return Distribution(r.scheme, tuple(alpha * p + (1 - alpha) / m for p in r.probs))


def extreme_target(s: Distribution, focal: str, alpha: float) -> Distribution:
    """Put ``alpha`` on ``focal`` and spread the rest proportionally to ``s``."""
    if not 0.5 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0.5, 1], got {alpha}")
    k = s.scheme.index(focal)
    # sum the others directly; 1 - s_focal cancels badly when s_focal is near 1
    rest = math.fsum(p for i, p in enumerate(s.probs) if i != k)
    if alpha == 1.0:
        probs = [0.0] * len(s.scheme)
    elif rest <= 0.0:
        raise DegenerateReferenceError(
            f"reference puts all mass on {focal!r}; cannot spread {1 - alpha:.3g} over other groups"
        )
    else:
        probs = [(1.0 - alpha) * (p / rest) for p in s.probs]
    probs[k] = alpha
    return Distribution(s.scheme, tuple(probs))


def fallback_target(override: Distribution | None = None) -> Distribution:
    if override is None:
        return uniform_target(FITZPATRICK)
    if not isinstance(override, Distribution):
        raise DistributionError(f"fallback override must be a Distribution, got {type(override).__name__}")
    return override


def majority_group(r: Distribution) -> str:
    # np.argmax returns the first maximal index, which is the tie-break rule
    return r.scheme.categories[int(np.argmax(r.as_array()))]


def smallest_in_top_k(r: Distribution, k: int) -> str:
    """Smallest non-zero group among the ``k`` largest; a caller-chosen focal-group rule."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(len(r.scheme)), key=lambda i: (-r.probs[i], i))[:k]
    nonzero = [i for i in order if r.probs[i] > 0]
    if not nonzero:
        raise ValueError("no non-zero group among the top-k")
    return r.scheme.categories[nonzero[-1]]


def aggregate_to_bins(d: Distribution) -> Distribution:
    """Collapse Fitzpatrick I-VI into Light (I-II), Medium (III-IV), Dark (V-VI)."""
    if d.scheme.categories != FITZPATRICK.categories:
        raise SchemeMismatchError(f"expected a Fitzpatrick I-VI distribution, got {d.scheme.name!r}")
    p = d.probs
    return Distribution(BINS3, (p[0] + p[1], p[2] + p[3], p[4] + p[5]))


# -- declared target settings ------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    variant = "uniform"

    def resolve(self, scheme: AttributeScheme, reference: Distribution | None = None) -> Distribution:
        return uniform_target(scheme)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant}


@dataclass(frozen=True)
class Intermediate:
    alpha: float = 0.5
    variant = "intermediate"

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"intermediate alpha must lie in (0, 1), got {self.alpha}")

    def resolve(self, scheme: AttributeScheme, reference: Distribution | None = None) -> Distribution:
        if reference is None:
            raise ValueError("intermediate target needs a reference distribution")
        return intermediate_target(reference, self.alpha)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "alpha": self.alpha}


@dataclass(frozen=True)
class Extreme:
    focal: str
    alpha: float = 1.0
    variant = "extreme"

    def __post_init__(self) -> None:
        if not 0.5 < self.alpha <= 1.0:
            raise ValueError(f"extreme alpha must lie in (0.5, 1], got {self.alpha}")

    def resolve(self, scheme: AttributeScheme, reference: Distribution | None = None) -> Distribution:
        if self.focal not in scheme:
            raise KeyError(f"focal group {self.focal!r} is not in scheme {scheme.name!r}")
        if reference is None:
            if self.alpha < 1.0:
                raise ValueError("extreme target with alpha < 1 needs a reference distribution")
            reference = uniform_target(scheme)
        return extreme_target(reference, self.focal, self.alpha)

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "focal": self.focal, "alpha": self.alpha}


@dataclass(frozen=True)
class Explicit:
    dist: Distribution
    variant = "explicit"

    def resolve(self, scheme: AttributeScheme | None = None, reference: Distribution | None = None) -> Distribution:
        if scheme is not None and scheme.categories != self.dist.scheme.categories:
            raise SchemeMismatchError(f"explicit target is over {self.dist.scheme.name!r}, not {scheme.name!r}")
        return self.dist

    def to_dict(self) -> dict[str, Any]:
        return {"variant": self.variant, "dist": self.dist.to_dict()}


@dataclass(frozen=True)
class Fallback:
    override: Distribution | None = None
    variant = "fallback"

    def resolve(self, scheme: AttributeScheme | None = None, reference: Distribution | None = None) -> Distribution:
        return fallback_target(self.override)

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "override": None if self.override is None else self.override.to_dict(),
        }


TargetSetting = Union[Uniform, Intermediate, Extreme, Explicit, Fallback]


def target_from_dict(data: Mapping[str, Any]) -> TargetSetting:
    variant = data["variant"]
    if variant == "uniform":
        return Uniform()
    if variant == "intermediate":
        return Intermediate(float(data.get("alpha", 0.5)))
    if variant == "extreme":
        return Extreme(data["focal"], float(data.get("alpha", 1.0)))
    if variant == "explicit":
        return Explicit(Distribution.from_dict(data["dist"]))
    if variant == "fallback":
        override = data.get("override")
        return Fallback(None if override is None else Distribution.from_dict(override))
    raise ValueError(f"unknown target variant {variant!r}")


def declared_target_record(setting: TargetSetting, q: Distribution) -> dict[str, Any]:
    """JSON form of a declared target: the setting plus the resolved distribution."""
    return {**setting.to_dict(), "q": q.to_dict()}
