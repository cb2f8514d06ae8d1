"""``fairgen`` command line: retrieve, plan, generate, audit, report, simulate.

Exit codes:
    0  success
    1  unexpected error
    2  usage error
    3  configuration error (missing key, bad config file)
    4  provider/backend transport error
    5  provider schema violation
    6  confidence/groups contract violation
    7  missing upstream artifact (run the earlier stage first)
    8  no usable data (empty manifest, every image discarded)
    9  simulation check failed
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import demographics as dem
from .audit import AUDIT_NAME, NoValidReadingsError, audit_run
from .config import RunConfig
from .generation import MANIFEST_NAME, execute
from .metrics import (
    GroupRow,
    OccupationTable,
    alignment_error,
    group_report,
    histogram_csv,
    improvement,
    rows_to_csv,
    rows_to_text,
)
from .prompts import GenerationPlan, baseline_plan, plan as build_plan
from .schemas import validate
from .simulate import PRESET_BASELINES, ScenarioConfig, preset, run_scenario
from .targets import (
    BINS3,
    BUILTIN_SCHEMES,
    FITZPATRICK,
    Distribution,
    Explicit,
    Extreme,
    Fallback,
    Intermediate,
    Uniform,
    aggregate_to_bins,
    majority_group,
)

EXIT_CONFIG = 3
EXIT_TRANSPORT = 4
EXIT_SCHEMA = 5
EXIT_CONTRACT = 6
EXIT_MISSING = 7
EXIT_NO_DATA = 8
EXIT_SIM_FAILED = 9

PLAN_NAME = "plan.json"


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _probs(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


def _dump(data) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML run config.")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None) -> None:
    """Declare a representation target, generate toward it, and audit the result."""
    try:
        ctx.obj = RunConfig.load(config_path)
    except dem.ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)


def _retrieve(cfg: RunConfig, prompt: str, scope: str) -> dem.DemographicResult:
    query = dem.DemographicQuery(dem.extract_concept(prompt), scope, prompt)
    try:
        provider = cfg.make_provider()
        return dem.retrieve_demographics(query, provider, dem.DemographicCache(cfg.cache_dir))
    except dem.ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except dem.ProviderTransportError as exc:
        _fail(f"provider unreachable: {exc}", EXIT_TRANSPORT)
    except dem.SchemaViolationError as exc:
        _fail(str(exc), EXIT_SCHEMA)
    except dem.ContractViolationError as exc:
        _fail(str(exc), EXIT_CONTRACT)


@cli.command()
@click.option("--prompt", required=True)
@click.option("--scope", default="global", show_default=True, help="global, us, or free text.")
@click.pass_obj
def retrieve(cfg: RunConfig, prompt: str, scope: str) -> None:
    """Fetch (or reuse cached) demographic proportions for a prompt."""
    result = _retrieve(cfg, prompt, scope)
    decision = dem.route(result, cfg.threshold)
    _dump({"result": result.to_dict(), "routing": decision.to_dict()})
    if decision.use_fallback:
        click.echo(f"hint: no usable statistics ({decision.reason}); plan with --fallback", err=True)


def _declare(cfg, prompt, target, scheme, alpha, focal, probs, reference, scope, fallback):
    """Resolve the CLI target options into ``(setting, q, demographics log)``."""
    demographics = None
    if fallback:
        override = _probs(probs)
        setting = Fallback(Distribution(FITZPATRICK, override) if override else None)
        q = setting.resolve()
        demographics = {"result": None, "routing": {"outcome": "use_fallback", "reason": "user_forced",
                                                    "threshold": cfg.threshold}}
    elif scheme == "demographics":
        result = _retrieve(cfg, prompt, scope)
        decision = dem.route(result, cfg.threshold)
        demographics = {"result": result.to_dict(), "routing": decision.to_dict()}
        if decision.use_fallback:
            click.echo(f"routing to fallback target ({decision.reason})", err=True)
            setting = Fallback()
            q = setting.resolve()
        else:
            r = result.proportions
            setting = {
                "uniform": lambda: Uniform(),
                "intermediate": lambda: Intermediate(alpha if alpha is not None else 0.5),
                "extreme": lambda: Extreme(focal or majority_group(r), alpha if alpha is not None else 1.0),
                "context": lambda: Explicit(r),
                "explicit": lambda: Explicit(Distribution(r.scheme, _probs(probs))),
            }[target]()
            q = setting.resolve(r.scheme, r)
    else:
        sch = BUILTIN_SCHEMES[scheme]
        ref = _probs(reference)
        ref_dist = Distribution(sch, ref) if ref else None
        if target == "uniform":
            setting = Uniform()
        elif target == "intermediate":
            setting = Intermediate(alpha if alpha is not None else 0.5)
        elif target == "extreme":
            if focal is None:
                raise click.BadParameter("--focal is required for skin-tone extreme targets")
            setting = Extreme(focal, alpha if alpha is not None else 1.0)
        elif target == "explicit":
            if probs is None:
                raise click.BadParameter("--probs is required for explicit targets")
            setting = Explicit(Distribution(sch, _probs(probs)))
        else:
            raise click.BadParameter("--target context needs --scheme demographics")
        q = setting.resolve(sch, ref_dist)

    return setting, q, demographics


@cli.command()
@click.option("--prompt", required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="run", show_default=True)
@click.option(
    "--target",
    type=click.Choice(["uniform", "intermediate", "extreme", "explicit", "context"]),
    default="uniform",
    show_default=True,
    help="'context' uses the retrieved proportions as the target.",
)
@click.option(
    "--scheme",
    type=click.Choice(["bins3", "fitzpatrick", "monk", "demographics"]),
    default="bins3",
    show_default=True,
)
@click.option("--alpha", type=float, default=None)
@click.option("--focal", default=None, help="Focal group of an extreme target (default: majority group).")
@click.option("--probs", default=None, help="Comma-separated probabilities for explicit targets or fallback override.")
@click.option("--reference", default=None, help="Comma-separated reference distribution for skin-tone schemes.")
@click.option("--n", "total", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scope", default="global", show_default=True)
@click.option("--fallback", is_flag=True, help="Skip demographic statistics and use the fallback target.")
@click.option("--baseline", is_flag=True, help="Unconditioned run: the prompt verbatim, no target.")
@click.pass_obj
def plan(cfg, prompt, out_dir, target, scheme, alpha, focal, probs, reference, total, seed, scope, fallback,
         baseline) -> None:
    """Write plan.json: declared target, allocation, subgroup prompts and seeds."""
    if total < 0:
        raise click.BadParameter("--n must be non-negative")
    if baseline:
        gp = baseline_plan(prompt, total, seed)
    else:
        try:
            setting, q, demographics = _declare(
                cfg, prompt, target, scheme, alpha, focal, probs, reference, scope, fallback
            )
        except (ValueError, KeyError) as exc:
            raise click.BadParameter(str(exc)) from None
        gp = build_plan(prompt, q, total, seed, setting=setting, descriptors=cfg.descriptors, demographics=demographics)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = gp.to_dict()
    validate("plan", data)
    (out / PLAN_NAME).write_text(gp.to_json())
    q_out = data["target"]["q"]["probs"] if data["target"] else None
    _dump({"plan": str(out / PLAN_NAME), "alloc": data["alloc"], "q": q_out})


@cli.command()
@click.option("--run", "run_dir", type=click.Path(file_okay=False), default="run", show_default=True)
@click.pass_obj
def generate(cfg: RunConfig, run_dir: str) -> None:
    """Render every planned image and write sidecars plus manifest.json."""
    run = Path(run_dir)
    if not (run / PLAN_NAME).exists():
        _fail(f"{run / PLAN_NAME} not found; run `fairgen plan` first", EXIT_MISSING)
    gp = GenerationPlan.from_dict(json.loads((run / PLAN_NAME).read_text()))
    try:
        backend = cfg.make_backend()
    except dem.ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    records = execute(gp, backend, cfg.params, run, concurrency=cfg.concurrency, plan_ref=PLAN_NAME)
    failed = sum(r.status != "ok" for r in records)
    _dump({"manifest": str(run / MANIFEST_NAME), "planned": len(records), "ok": len(records) - failed,
           "failed": failed})


@cli.command()
@click.option("--run", "run_dir", type=click.Path(file_okay=False), default="run", show_default=True)
def audit(run_dir: str) -> None:
    """Classify skin tone per image and write audit.json."""
    run = Path(run_dir)
    if not (run / MANIFEST_NAME).exists():
        _fail(f"{run / MANIFEST_NAME} not found; run `fairgen generate` first", EXIT_MISSING)
    try:
        result = audit_run(run)
    except NoValidReadingsError as exc:
        _fail(str(exc), EXIT_NO_DATA)
    _dump({"audit": str(run / AUDIT_NAME), "n_ok": result["n_ok"], "discards": result["discards"],
           "observed": {k: v["probs"] for k, v in result["observed"].items()}})


def _target_on(q: Distribution, scheme_name: str) -> Distribution | None:
    """Declared target expressed on the report scheme, if it is a skin-tone target there."""
    if q.scheme.categories == BUILTIN_SCHEMES[scheme_name].categories:
        return q
    if scheme_name == "bins3" and q.scheme.categories == FITZPATRICK.categories:
        return aggregate_to_bins(q)
    return None


def _load_audit(run: Path) -> dict:
    if not (run / AUDIT_NAME).exists():
        _fail(f"{run / AUDIT_NAME} not found; run `fairgen audit` first", EXIT_MISSING)
    return json.loads((run / AUDIT_NAME).read_text())


@cli.command()
@click.option("--run", "run_dir", type=click.Path(file_okay=False), default="run", show_default=True)
@click.option("--baseline-run", type=click.Path(file_okay=False), default=None, help="Audited unconditioned run.")
@click.option("--scheme", type=click.Choice(["bins3", "fitzpatrick", "monk"]), default="bins3", show_default=True)
def report(run_dir: str, baseline_run: str | None, scheme: str) -> None:
    """Compare observed skin tones with the declared target; write report.json/csv."""
    run = Path(run_dir)
    treated = _load_audit(run)
    observed = {"treated": Distribution.from_dict(treated["observed"][scheme])}
    discards = {"treated": treated["discards"]}
    if baseline_run is not None:
        base = _load_audit(Path(baseline_run))
        observed["baseline"] = Distribution.from_dict(base["observed"][scheme])
        discards["baseline"] = base["discards"]

    declared = treated.get("target")
    q = _target_on(Distribution.from_dict(declared["q"]), scheme) if declared else None
    errors = {k: (alignment_error(p, q) if q is not None else None) for k, p in observed.items()}
    imp = None
    rows: list[GroupRow] = []
    if q is not None and "baseline" in errors:
        if errors["baseline"] > 0:
            imp = improvement(errors["baseline"], errors["treated"])
        rows = [GroupRow(run.name, 1, errors["baseline"], errors["treated"])]
    out = {
        "scheme": scheme,
        "declared_target": declared,
        "observed": {k: v.to_dict() for k, v in observed.items()},
        "alignment_error": errors,
        "improvement_pct": imp,
        "discards": discards,
        "rows": [r.to_dict() for r in rows if r.baseline > 0],
        "note": None if q is not None else "target is not declared in skin-tone space; compare distributions only",
    }
    validate("report", out)
    (run / "report.json").write_text(json.dumps(out, indent=2, sort_keys=True))
    (run / "report.csv").write_text(rows_to_csv([r for r in rows if r.baseline > 0]))
    (run / "histogram.csv").write_text(histogram_csv(observed))
    _dump({"alignment_error": errors, "improvement_pct": imp})


@cli.command()
@click.option("--preset", "preset_name", type=click.Choice([*PRESET_BASELINES, "all"]), default="high-status",
              show_default=True)
@click.option("--scenario", type=click.Path(dir_okay=False, exists=True), default=None,
              help="Scenario JSON/TOML file (overrides --preset).")
@click.option("--n", "total", type=int, default=None, help="Images per condition.")
@click.option("--fidelity", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def simulate(preset_name, scenario, total, fidelity, seed, out_dir) -> None:
    """Run synthetic baseline vs. target-conditioned scenarios and check them."""
    if scenario is not None:
        configs = [ScenarioConfig.load(scenario)]
    elif preset_name == "all":
        configs = [preset(p) for p in ("high-status", "moderate-status", "low-status")]
    else:
        configs = [preset(preset_name)]
    overrides = {k: v for k, v in (("n", total), ("descriptor_fidelity", fidelity), ("seed_root", seed)) if v is not None}

    results = []
    for c in configs:
        c = replace(c, **overrides)
        sub = None if out_dir is None else Path(out_dir) / c.name
        results.append(run_scenario(c, sub))

    occupational = {}
    for r in results:
        occupational.update(r.per_prompt)
    try:
        rows = group_report(occupational, OccupationTable.load())
    except KeyError:
        rows = [GroupRow(r.name, 1, r.baseline_error, r.treated_error) for r in results]
    click.echo(rows_to_text(rows))
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status} {r.name}: pooled error {r.baseline_error:.4f} -> {r.treated_error:.4f} "
                   f"({r.improvement:.1f}%), checks={r.checks}")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        summary = {"scenarios": [r.to_dict() for r in results], "rows": [row.to_dict() for row in rows]}
        (Path(out_dir) / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        (Path(out_dir) / "report.csv").write_text(rows_to_csv(rows))
    if not all(r.passed for r in results):
        sys.exit(EXIT_SIM_FAILED)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
