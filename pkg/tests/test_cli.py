import json
import shutil

import pytest
from click.testing import CliRunner

from fairgen.cli import cli
from fairgen.config import RunConfig
from fairgen.demographics import ConfigError
from fairgen.schemas import canonical_json, validate

from conftest import FIXTURES

DOCTOR = "A full-color headshot of a doctor"


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config(tmp_path):
    shutil.copy(FIXTURES / "stub_responses.json", tmp_path / "stub.json")
    path = tmp_path / "fairgen.toml"
    path.write_text(
        '[paths]\ncache_dir = "cache"\n'
        '[llm]\nprovider = "stub"\nstub_responses = "stub.json"\nthreshold = 0.5\n'
        '[backend]\nkind = "synthetic"\nconcurrency = 2\n'
        '[backend.params]\nwidth = 64\nheight = 96\nsteps = 1\nguidance = 0.0\nprecision = "n/a"\n'
    )
    return str(path)


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def test_retrieve(runner, config):
    r = invoke(runner, "--config", config, "retrieve", "--prompt", DOCTOR, "--scope", "us")
    assert r.exit_code == 0
    out = json.loads(r.stdout)
    assert out["result"]["confidence"] == 0.8 and out["routing"]["outcome"] == "use_demographics"


def test_retrieve_confidence_zero_hints_fallback(runner, config):
    r = invoke(runner, "--config", config, "retrieve", "--prompt", "a happy person")
    assert r.exit_code == 0
    assert json.loads(r.stdout)["result"]["confidence"] == 0.0
    assert "fallback" in r.stderr


def test_retrieve_schema_violation_exit_code(runner, config):
    assert invoke(runner, "--config", config, "retrieve", "--prompt", "pilot").exit_code == 5
    assert invoke(runner, "--config", config, "retrieve", "--prompt", "chef").exit_code == 6


def test_missing_api_key_is_config_error(runner, tmp_path, monkeypatch):
    monkeypatch.delenv("FAIRGEN_LLM_API_KEY", raising=False)
    cfg = tmp_path / "c.toml"
    cfg.write_text('[llm]\nprovider = "openai"\n')
    assert invoke(runner, "--config", cfg, "retrieve", "--prompt", DOCTOR).exit_code == 3
    assert invoke(runner, "--config", tmp_path / "missing.toml", "retrieve", "--prompt", DOCTOR).exit_code == 3


def test_plan_uniform_allocation(runner, tmp_path):
    out = tmp_path / "run"
    r = invoke(runner, "plan", "--prompt", DOCTOR, "--target", "uniform", "--n", 50, "--seed", 42, "--out", out)
    assert r.exit_code == 0
    plan = json.loads((out / "plan.json").read_text())
    validate("plan", plan)
    assert [a["count"] for a in plan["alloc"]] == [17, 17, 16]
    assert [a["label"] for a in plan["alloc"]] == ["Light", "Medium", "Dark"]


def test_plan_variants(runner, tmp_path, config):
    def alloc(*args):
        out = tmp_path / "p"
        r = invoke(runner, "--config", config, "plan", "--prompt", DOCTOR, "--out", out, *args)
        assert r.exit_code == 0, r.output
        return json.loads((out / "plan.json").read_text())

    assert [a["count"] for a in alloc("--fallback", "--n", 50)["alloc"]] == [9, 9, 8, 8, 8, 8]
    ext = alloc("--scheme", "fitzpatrick", "--target", "extreme", "--focal", "VI", "--alpha", 1, "--n", 10)
    assert [a["count"] for a in ext["alloc"]] == [0, 0, 0, 0, 0, 10]
    exp = alloc("--target", "explicit", "--probs", "0.5,0.3,0.2", "--n", 50)
    assert [a["count"] for a in exp["alloc"]] == [25, 15, 10]
    ctx = alloc("--scheme", "demographics", "--target", "context", "--scope", "us", "--n", 100)
    assert ctx["demographics"]["routing"]["outcome"] == "use_demographics"
    assert ctx["items"][0]["prompt"] == f"{DOCTOR} who is White"
    base = alloc("--baseline", "--n", 5)
    assert base["target"] is None and base["items"][0]["prompt"] == DOCTOR


def test_plan_demographics_low_confidence_falls_back(runner, tmp_path, config):
    out = tmp_path / "p"
    prompt = "A full-color headshot of a janitor"
    r = invoke(runner, "--config", config, "plan", "--prompt", prompt, "--scheme", "demographics", "--scope", "us",
               "--out", out)
    assert r.exit_code == 0
    plan = json.loads((out / "plan.json").read_text())
    assert plan["target"]["variant"] == "fallback"
    assert plan["demographics"]["routing"]["reason"] == "low_confidence"


def test_plan_rejects_bad_probabilities(runner, tmp_path):
    r = invoke(runner, "plan", "--prompt", DOCTOR, "--target", "explicit", "--probs", "0.5,0.6,0.1",
               "--out", tmp_path / "p")
    assert r.exit_code == 2


def test_stages_need_upstream_artifacts(runner, tmp_path):
    assert invoke(runner, "generate", "--run", tmp_path).exit_code == 7
    assert invoke(runner, "audit", "--run", tmp_path).exit_code == 7
    assert invoke(runner, "report", "--run", tmp_path).exit_code == 7


def test_audit_on_empty_manifest(runner, tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"records": []}))
    assert invoke(runner, "audit", "--run", tmp_path).exit_code == 8


def _pipeline(runner, config, run, *plan_args):
    assert invoke(runner, "--config", config, "plan", "--prompt", DOCTOR, "--out", run, *plan_args).exit_code == 0
    assert invoke(runner, "--config", config, "generate", "--run", run).exit_code == 0
    assert invoke(runner, "audit", "--run", run).exit_code == 0


def test_full_pipeline_and_report(runner, tmp_path, config):
    treated, base = tmp_path / "treated", tmp_path / "base"
    _pipeline(runner, config, treated, "--n", 60, "--seed", 1)
    _pipeline(runner, config, base, "--baseline", "--n", 60, "--seed", 2)
    r = invoke(runner, "report", "--run", treated, "--baseline-run", base)
    assert r.exit_code == 0
    report = json.loads((treated / "report.json").read_text())
    validate("report", report)
    assert report["alignment_error"]["treated"] < report["alignment_error"]["baseline"]
    assert report["improvement_pct"] > 50
    assert (treated / "report.csv").read_text().startswith("group,")
    assert "condition,scheme,category,frequency" in (treated / "histogram.csv").read_text()


def test_rerun_is_identical_apart_from_timestamps(runner, tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    for run in (a, b):
        _pipeline(runner, config, run, "--n", 24, "--seed", 9)
    for name in ("plan.json", "manifest.json", "audit.json"):
        left = json.loads((a / name).read_text())
        right = json.loads((b / name).read_text())
        assert canonical_json(left) == canonical_json(right), name
    for img in (a / "images").glob("*.png"):
        assert img.read_bytes() == (b / "images" / img.name).read_bytes()


def test_simulate_command(runner, tmp_path):
    r = invoke(runner, "simulate", "--preset", "high-status", "--n", 600, "--out", tmp_path)
    assert r.exit_code == 0
    assert "PASS high-status" in r.stdout and "High-Status" in r.stdout
    summary = json.loads((tmp_path / "report.json").read_text())
    assert summary["scenarios"][0]["passed"] is True


def test_config_rejects_missing_referenced_file(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[llm]\nstub_responses = "nope.json"\n')
    with pytest.raises(ConfigError):
        RunConfig.load(cfg)


def test_config_backends(monkeypatch):
    monkeypatch.delenv("FAIRGEN_BACKEND_API_KEY", raising=False)
    assert RunConfig.from_dict({"backend": {"kind": "sdapi"}}).make_backend().backend_id.startswith("sdapi:")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"backend": {"kind": "hosted"}}).make_backend()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"backend": {"kind": "mystery"}}).make_backend()
