"""Alignment error, improvement, and status-group report tables."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from statistics import fmean
from typing import Any, Iterable, Mapping, Sequence

from .targets import Distribution, SchemeMismatchError

SIOPS_MIN, SIOPS_MAX = 12.0, 78.0
STATUS_ORDER = ("high", "moderate", "low")
STATUS_LABELS = {"high": "High-Status", "moderate": "Moderate-Status", "low": "Low-Status"}


def alignment_error(p: Distribution, q: Distribution) -> float:
    """Sum of squared differences between observed and declared proportions."""
    if p.scheme.categories != q.scheme.categories:
        raise SchemeMismatchError(f"cannot compare {p.scheme.name!r} with {q.scheme.name!r}")
    return math.fsum((a - b) ** 2 for a, b in zip(p.probs, q.probs))


def improvement(baseline_err: float, treated_err: float) -> float:
    """Relative error reduction in percent."""
    if baseline_err <= 0:
        raise ZeroDivisionError("baseline error must be positive")
    return 100.0 * (1.0 - treated_err / baseline_err)


@dataclass(frozen=True)
class AuditComparison:
    q: Distribution
    p: Distribution
    alignment_error: float
    n_images: int
    discards: int = 0

    @classmethod
    def of(cls, p: Distribution, q: Distribution, n_images: int, discards: int = 0) -> "AuditComparison":
        return cls(q, p, alignment_error(p, q), n_images, discards)

    def __post_init__(self) -> None:
        if abs(alignment_error(self.p, self.q) - self.alignment_error) > 1e-12:
            raise ValueError("stored alignment error does not match p and q")

    def to_dict(self) -> dict[str, Any]:
        return {
            "q": self.q.to_dict(),
            "p": self.p.to_dict(),
            "alignment_error": self.alignment_error,
            "n_images": self.n_images,
            "discards": self.discards,
        }


@dataclass(frozen=True)
class OccupationEntry:
    occupation: str
    status: str
    siops: float | None

    def __post_init__(self) -> None:
        if self.status not in STATUS_ORDER:
            raise ValueError(f"unknown status {self.status!r}")
        if self.siops is not None and not SIOPS_MIN <= self.siops <= SIOPS_MAX:
            raise ValueError(f"SIOPS {self.siops} outside [{SIOPS_MIN}, {SIOPS_MAX}]")


def _norm(name: str) -> str:
    name = re.sub(r"\(.*?\)", "", name.lower())
    name = re.sub(r"^(a|an)\s+", "", name.strip())
    return re.sub(r"\s+", " ", name).strip()


class OccupationTable:
    def __init__(self, entries: Iterable[OccupationEntry]):
        self.entries = tuple(entries)
        self._index = {_norm(e.occupation): e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, occupation: str) -> OccupationEntry:
        try:
            return self._index[_norm(occupation)]
        except KeyError:
            raise KeyError(f"unknown occupation {occupation!r}") from None

    @classmethod
    def from_csv(cls, text: str) -> "OccupationTable":
        rows = csv.DictReader(io.StringIO(text))
        return cls(
            OccupationEntry(r["occupation"], r["status"].strip().lower(), float(r["siops"]) if r["siops"] else None)
            for r in rows
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "OccupationTable":
        if path is None:
            text = resources.files("fairgen").joinpath("data/occupations.csv").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_csv(text)


@dataclass(frozen=True)
class GroupRow:
    group: str
    n: int
    baseline: float
    treated: float

    @property
    def improvement(self) -> float:
        return improvement(self.baseline, self.treated)

    def to_dict(self) -> dict[str, Any]:
        return {
            "group": self.group,
            "n": self.n,
            "baseline": self.baseline,
            "treated": self.treated,
            "improvement": self.improvement,
        }


def group_report(
    comparisons: Mapping[str, tuple[float, float]],
    table: OccupationTable,
) -> list[GroupRow]:
    """Status-group means of ``occupation -> (baseline_err, treated_err)``.

    Rows come in high/moderate/low order for the groups present, then an
    ``Average`` row over the group means and an ``Average (occupations)`` row over
    all occupations. Improvement is computed from the row means.
    """
    by_status: dict[str, list[tuple[float, float]]] = {}
    for occ, errs in comparisons.items():
        by_status.setdefault(table.lookup(occ).status, []).append(tuple(errs))
    rows = []
    for status in STATUS_ORDER:
        if status in by_status:
            pairs = by_status[status]
            rows.append(
                GroupRow(STATUS_LABELS[status], len(pairs), fmean(b for b, _ in pairs), fmean(t for _, t in pairs))
            )
    if rows:
        rows.append(GroupRow("Average", len(rows), fmean(r.baseline for r in rows), fmean(r.treated for r in rows)))
        everything = [tuple(v) for v in comparisons.values()]
        rows.append(
            GroupRow(
                "Average (occupations)",
                len(everything),
                fmean(b for b, _ in everything),
                fmean(t for _, t in everything),
            )
        )
    return rows


# -- output formats ----------------------------------------------------------


def rows_to_csv(rows: Sequence[GroupRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "n", "baseline", "treated", "improvement_pct"])
    for r in rows:
        w.writerow([r.group, r.n, f"{r.baseline:.6f}", f"{r.treated:.6f}", f"{r.improvement:.2f}"])
    return buf.getvalue()


def rows_to_text(rows: Sequence[GroupRow]) -> str:
    header = f"{'Category':<24}{'Baseline':>10}{'Ours':>10}{'Improvement':>13}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.group:<24}{r.baseline:>10.3f}{r.treated:>10.3f}{r.improvement:>12.1f}%")
    return "\n".join(lines)


def histogram_csv(distributions: Mapping[str, Distribution]) -> str:
    """Long-format ``condition,category,frequency`` rows for external plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["condition", "scheme", "category", "frequency"])
    for condition, d in distributions.items():
        for label, p in zip(d.scheme.categories, d.probs):
            w.writerow([condition, d.scheme.name, label, f"{p:.6f}"])
    return buf.getvalue()


def write_report(out_dir: str | Path, report: Mapping[str, Any], rows: Sequence[GroupRow] | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if rows:
        (out / "report.csv").write_text(rows_to_csv(rows))
