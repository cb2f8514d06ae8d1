"""Desk-scale baseline vs. target-conditioned experiments on the synthetic backend."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .allocator import allocate
from .audit import SkinToneReading, classify_image, estimate_distribution
from .demographics import extract_concept
from .generation import BackendParams, SyntheticBackend, SyntheticBackendConfig, execute
from .metrics import GroupRow, OccupationTable, alignment_error, group_report, improvement
from .prompts import baseline_plan, derive_seed, plan
from .targets import (
    FITZPATRICK,
    AttributeScheme,
    Distribution,
    Fallback,
    Intermediate,
    SchemeMismatchError,
    TargetSetting,
    Uniform,
    aggregate_to_bins,
    target_from_dict,
    uniform_target,
)

SIGMAS = 4.0
SIM_PARAMS = BackendParams(width=64, height=96, steps=1, guidance=0.0, precision="n/a")


def _fitz(*probs: float) -> Distribution:
    return Distribution(FITZPATRICK, probs)


# Fitzpatrick I-VI skews; the constrained shares follow the reported baselines and
# the remaining mass is spread by hand.
PRESET_BASELINES: dict[str, Distribution] = {
    "high-status": _fitz(0.12, 0.69, 0.10, 0.075, 0.01, 0.005),  # II = 0.69, V-VI < 0.02
    "moderate-status": _fitz(0.12, 0.33, 0.22, 0.15, 0.10, 0.08),  # II = 0.33, V-VI = 0.18
    "low-status": _fitz(0.04, 0.20, 0.12, 0.155, 0.145, 0.34),  # I-II = 0.24, V-VI > 0.48, VI = 0.34
    "smiling": _fitz(0.35, 0.46, 0.09, 0.05, 0.03, 0.02),  # I-II > 0.80
}


def prompt_sets() -> dict[str, Any]:
    return json.loads(resources.files("fairgen").joinpath("data/prompts.json").read_text())


def _occupational_prompts(status: str) -> tuple[str, ...]:
    sets = prompt_sets()
    return tuple(sets["template_occupational"].format(occupation=o) for o in sets["occupational"][status])


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    prompts: tuple[str, ...]
    baseline: Distribution
    target: TargetSetting = field(default_factory=Uniform)
    descriptor_fidelity: float = 0.9
    n: int = 600
    seed_root: int = 0
    reference: Distribution | None = None
    params: BackendParams = SIM_PARAMS

    def __post_init__(self) -> None:
        if self.n <= 0:
            raise ValueError("images per condition must be positive")
        if not self.prompts:
            raise ValueError("scenario needs at least one prompt")
        if self.baseline.scheme.categories != FITZPATRICK.categories:
            raise SchemeMismatchError("scenario baseline must be over Fitzpatrick I-VI")

    def declared_target(self) -> Distribution:
        return self.target.resolve(FITZPATRICK, self.reference or self.baseline)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        base = preset(data["preset"]) if "preset" in data else None
        kw: dict[str, Any] = {}
        if "name" in data:
            kw["name"] = data["name"]
        if "prompts" in data:
            kw["prompts"] = tuple(data["prompts"])
        if "baseline" in data:
            kw["baseline"] = _fitz(*data["baseline"])
        if "reference" in data:
            kw["reference"] = _fitz(*data["reference"])
        if "target" in data:
            kw["target"] = target_from_dict(data["target"])
        for key, cast in (("descriptor_fidelity", float), ("n", int), ("seed_root", int)):
            if key in data:
                kw[key] = cast(data[key])
        if "params" in data:
            kw["params"] = BackendParams.from_dict(data["params"])
        return replace(base, **kw) if base is not None else cls(**kw)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ScenarioConfig":
        path = Path(path)
        if path.suffix == ".toml":
            data = tomllib.loads(path.read_text())
        else:
            data = json.loads(path.read_text())
        return cls.from_dict(data)


def preset(name: str, **overrides: Any) -> ScenarioConfig:
    if name not in PRESET_BASELINES:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESET_BASELINES)}")
    if name == "smiling":
        sets = prompt_sets()
        prompts = (sets["template_descriptive"].format(description="someone smiling"),)
        cfg = ScenarioConfig(name, prompts, PRESET_BASELINES[name], target=Fallback())
    else:
        cfg = ScenarioConfig(name, _occupational_prompts(name.split("-")[0]), PRESET_BASELINES[name])
    return replace(cfg, **overrides)


def expected_observed(baseline: Distribution, q: Distribution, fidelity: float) -> Distribution:
    """Mixture the synthetic backend converges to: ``f * q + (1 - f) * baseline``."""
    if baseline.scheme.categories != q.scheme.categories:
        raise SchemeMismatchError("baseline and target must share a scheme")
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError("fidelity must lie in [0, 1]")
    return Distribution(q.scheme, tuple(fidelity * a + (1 - fidelity) * b for a, b in zip(q.probs, baseline.probs)))


def multinomial_tolerance(p: float, n: int, sigmas: float = SIGMAS) -> float:
    return sigmas * math.sqrt(p * (1 - p) / n)


def error_tolerance(expected: Distribution, q: Distribution, n: int, sigmas: float = SIGMAS) -> float:
    """Largest change in squared error when every cell moves by at most its multinomial tolerance."""
    total = 0.0
    for e, t in zip(expected.probs, q.probs):
        d = multinomial_tolerance(e, n, sigmas)
        total += d * (2 * abs(e - t) + d)
    return total


@dataclass
class ScenarioResult:
    name: str
    q: Distribution
    fidelity: float
    n_baseline: int
    n_treated: int
    baseline_observed: Distribution
    treated_observed: Distribution
    expected_treated: Distribution
    discards: int
    per_prompt: dict[str, tuple[float, float]]
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def q_bins(self) -> Distribution:
        return aggregate_to_bins(self.q)

    @property
    def baseline_error(self) -> float:
        return alignment_error(aggregate_to_bins(self.baseline_observed), self.q_bins)

    @property
    def treated_error(self) -> float:
        return alignment_error(aggregate_to_bins(self.treated_observed), self.q_bins)

    @property
    def expected_treated_error(self) -> float:
        return alignment_error(aggregate_to_bins(self.expected_treated), self.q_bins)

    @property
    def treated_error_to_uniform(self) -> float:
        b = aggregate_to_bins(self.treated_observed)
        return alignment_error(b, uniform_target(b.scheme))

    @property
    def improvement(self) -> float:
        return improvement(self.baseline_error, self.treated_error)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def deltas(self) -> dict[str, float]:
        return {
            c: o - e
            for c, o, e in zip(FITZPATRICK.categories, self.treated_observed.probs, self.expected_treated.probs)
        }

    def group_rows(self, table: OccupationTable | None = None) -> list[GroupRow]:
        table = table or OccupationTable.load()
        try:
            return group_report(self.per_prompt, table)
        except KeyError:
            return [GroupRow(self.name, len(self.per_prompt), self.baseline_error, self.treated_error)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.name,
            "declared_target": self.q.to_dict(),
            "fidelity": self.fidelity,
            "n_baseline": self.n_baseline,
            "n_treated": self.n_treated,
            "discards": self.discards,
            "observed": {
                "baseline": self.baseline_observed.to_dict(),
                "treated": self.treated_observed.to_dict(),
                "expected_treated": self.expected_treated.to_dict(),
            },
            "alignment_error_bins3": {
                "baseline": self.baseline_error,
                "treated": self.treated_error,
                "expected_treated": self.expected_treated_error,
                "treated_to_uniform": self.treated_error_to_uniform,
            },
            "improvement_pct": self.improvement,
            "per_prompt": {k: {"baseline": b, "treated": t} for k, (b, t) in self.per_prompt.items()},
            "deltas": self.deltas(),
            "checks": self.checks,
            "passed": self.passed,
        }


def _read_run(run_dir: Path, records) -> list[SkinToneReading]:
    out = []
    for r in records:
        if r.status != "ok":
            out.append(SkinToneReading(image=r.image, status="failed_generation"))
        else:
            out.append(classify_image(run_dir / r.image, name=r.image))
    return out


def _within(observed: Distribution, expected: Distribution, n: int) -> bool:
    return all(
        abs(o - e) <= multinomial_tolerance(e, n) + 1e-12 for o, e in zip(observed.probs, expected.probs)
    )


def run_scenario(
    cfg: ScenarioConfig,
    out_dir: str | os.PathLike | None = None,
    concurrency: int = 4,
) -> ScenarioResult:
    """Generate and audit baseline and treated conditions, then check them against the mixture oracle."""
    if out_dir is None:
        with tempfile.TemporaryDirectory(prefix="fairgen-sim-") as tmp:
            return run_scenario(cfg, tmp, concurrency)

    out = Path(out_dir)
    q = cfg.declared_target()
    if q.scheme.categories != FITZPATRICK.categories:
        raise SchemeMismatchError("simulated targets must be declared over Fitzpatrick I-VI")
    backend = SyntheticBackend(SyntheticBackendConfig(cfg.baseline, descriptor_fidelity=cfg.descriptor_fidelity))
    prompt_scheme = AttributeScheme("prompts", tuple(f"p{i}" for i in range(len(cfg.prompts))))
    per_prompt_n = allocate(uniform_target(prompt_scheme), cfg.n).counts

    base_readings: list[SkinToneReading] = []
    treated_readings: list[SkinToneReading] = []
    planned = [0] * len(FITZPATRICK)
    per_prompt: dict[str, tuple[float, float]] = {}
    q_bins = aggregate_to_bins(q)
    for i, (prompt, n_i) in enumerate(zip(cfg.prompts, per_prompt_n)):
        if n_i == 0:
            continue
        bplan = baseline_plan(prompt, n_i, derive_seed(cfg.seed_root, 0, i))
        tplan = plan(prompt, q, n_i, derive_seed(cfg.seed_root, 1, i), setting=cfg.target)
        for k, c in enumerate(tplan.allocation.counts):
            planned[k] += c
        runs = []
        for label, p in (("baseline", bplan), ("treated", tplan)):
            run_dir = out / label / f"prompt_{i:02d}"
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "plan.json").write_text(p.to_json())
            records = execute(p, backend, cfg.params, run_dir, concurrency=concurrency)
            runs.append(_read_run(run_dir, records))
        base_readings += runs[0]
        treated_readings += runs[1]
        try:
            pb, _ = estimate_distribution(runs[0])
            pt, _ = estimate_distribution(runs[1])
            per_prompt[extract_concept(prompt)] = (
                alignment_error(aggregate_to_bins(pb), q_bins),
                alignment_error(aggregate_to_bins(pt), q_bins),
            )
        except ValueError:
            pass

    baseline_p, d0 = estimate_distribution(base_readings)
    treated_p, d1 = estimate_distribution(treated_readings)
    realized_q = Distribution.normalized(FITZPATRICK, planned)
    expected = expected_observed(cfg.baseline, realized_q, cfg.descriptor_fidelity)
    n_b = len(base_readings) - d0
    n_t = len(treated_readings) - d1

    result = ScenarioResult(
        cfg.name, q, cfg.descriptor_fidelity, n_b, n_t, baseline_p, treated_p, expected, d0 + d1, per_prompt
    )
    result.checks = {
        "baseline_within_tolerance": _within(baseline_p, cfg.baseline, n_b),
        "treated_within_tolerance": _within(treated_p, expected, n_t),
    }
    if result.baseline_error > 0:
        result.checks["treated_error_below_baseline"] = result.treated_error < result.baseline_error
    (out / "report.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return result


def alpha_sweep(
    cfg: ScenarioConfig,
    alphas: Sequence[float] = (0.25, 0.5, 0.75),
    out_dir: str | os.PathLike | None = None,
) -> list[ScenarioResult]:
    """Intermediate targets at each ``alpha`` against the same reference distribution."""
    results = []
    for a in alphas:
        sub = None if out_dir is None else Path(out_dir) / f"alpha_{a:g}"
        results.append(run_scenario(replace(cfg, target=Intermediate(a), name=f"{cfg.name}@alpha={a:g}"), sub))
    return results
