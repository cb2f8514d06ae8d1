import json
import pytest

from fairgen import simulate

from fairgen.metrics import alignment_error
from fairgen.simulate import (
    PRESET_BASELINES,
    ScenarioConfig,
    alpha_sweep,
    error_tolerance,
    expected_observed,
    multinomial_tolerance,
    preset,
    run_scenario,
)
from fairgen.targets import (
    BINS3,
    FITZPATRICK,
    Distribution,
    Extreme,
    Fallback,
    SchemeMismatchError,
    aggregate_to_bins,
    uniform_target,
)

HIGH = PRESET_BASELINES["high-status"]
U6 = uniform_target(FITZPATRICK)


def test_mixture_oracle():
    assert expected_observed(HIGH, U6, 1.0).probs == pytest.approx(U6.probs)
    assert expected_observed(HIGH, U6, 0.0).probs == pytest.approx(HIGH.probs)
    want = [0.9 / 6 + 0.1 * b for b in HIGH.probs]
    assert expected_observed(HIGH, U6, 0.9).probs == pytest.approx(want, abs=1e-15)
    with pytest.raises(SchemeMismatchError):
        expected_observed(HIGH, uniform_target(BINS3), 0.5)


def test_presets_match_reported_shares():
    assert HIGH["II"] == 0.69 and HIGH["V"] + HIGH["VI"] < 0.02
    low = PRESET_BASELINES["low-status"]
    assert low["V"] + low["VI"] > 0.48
    assert sum(PRESET_BASELINES["smiling"].probs[:2]) > 0.8
    assert isinstance(preset("smiling").target, Fallback)
    with pytest.raises(KeyError):
        preset("nope")


def test_uniform_fidelity_one_error_bound(tmp_path):
    res = run_scenario(preset("high-status", descriptor_fidelity=1.0, n=600), tmp_path)
    assert res.treated_error <= 0.005
    assert res.passed
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] is True and report["n_treated"] == 600


def test_baseline_error_matches_analytic_value():
    res = run_scenario(preset("high-status", n=600))
    analytic = alignment_error(aggregate_to_bins(HIGH), uniform_target(BINS3))
    assert abs(res.baseline_error - analytic) <= error_tolerance(aggregate_to_bins(HIGH), uniform_target(BINS3), 600)


def test_one_hot_target_at_full_fidelity_audits_as_focal(tmp_path):
    cfg = preset("high-status", target=Extreme("VI", 1.0), descriptor_fidelity=1.0, n=600)
    res = run_scenario(cfg, tmp_path)
    assert res.treated_observed["VI"] == 1.0


def test_graded_ordering_baseline_intermediate_uniform():
    cfg = preset("low-status", n=300)
    (mid,) = alpha_sweep(cfg, (0.5,))
    full = run_scenario(cfg)
    base = full.baseline_error
    assert full.treated_error_to_uniform < mid.treated_error_to_uniform < base


def test_failing_checks_are_reported(tmp_path, monkeypatch):
    # a backend that ignores descriptors cannot meet the fidelity-0.9 oracle
    real = simulate.SyntheticBackendConfig
    monkeypatch.setattr(simulate, "SyntheticBackendConfig", lambda *a, **kw: real(*a, **{**kw, "descriptor_fidelity": 0.0}))
    res = run_scenario(preset("high-status", n=300), tmp_path)
    assert not res.passed
    assert res.checks["treated_within_tolerance"] is False
    assert set(res.deltas()) == set(FITZPATRICK.categories)


def test_tolerances():
    assert multinomial_tolerance(1 / 6, 600) == pytest.approx(0.0609, abs=1e-4)
    e = Distribution(BINS3, (0.4, 0.3, 0.3))
    assert error_tolerance(e, e, 100) > 0


def test_scenario_files(tmp_path):
    toml = tmp_path / "s.toml"
    toml.write_text('preset = "moderate-status"\nn = 120\nseed_root = 3\n[target]\nvariant = "uniform"\n')
    cfg = ScenarioConfig.load(toml)
    assert cfg.name == "moderate-status" and cfg.n == 120 and cfg.seed_root == 3
    js = tmp_path / "s.json"
    js.write_text(json.dumps({"name": "custom", "prompts": ["A full-color headshot of a doctor"],
                              "baseline": [0, 1, 0, 0, 0, 0], "n": 60}))
    assert ScenarioConfig.load(js).baseline["II"] == 1.0
    with pytest.raises(ValueError):
        ScenarioConfig("x", (), HIGH)
