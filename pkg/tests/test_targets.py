import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgen.targets import (
    BINS3,
    FITZPATRICK,
    MONK,
    AttributeScheme,
    DegenerateReferenceError,
    Distribution,
    DistributionError,
    Explicit,
    Extreme,
    Fallback,
    Intermediate,
    SchemeMismatchError,
    Uniform,
    aggregate_to_bins,
    declared_target_record,
    demographic_scheme,
    extreme_target,
    fallback_target,
    intermediate_target,
    majority_group,
    mix,
    smallest_in_top_k,
    target_from_dict,
    uniform_target,
)

G3 = AttributeScheme("g3", ("g1", "g2", "g3"))


def d3(*p):
    return Distribution(G3, p)


def approx(d, *want, tol=1e-5):
    return all(abs(a - b) <= tol for a, b in zip(d.probs, want))


@st.composite
def distributions(draw, scheme=None):
    if scheme is None:
        m = draw(st.integers(1, 10))
        scheme = AttributeScheme(f"s{m}", tuple(f"g{i}" for i in range(m)))
    w = draw(st.lists(st.floats(0, 1), min_size=len(scheme), max_size=len(scheme)))
    if sum(w) <= 1e-6:
        w = [1.0] + [0.0] * (len(scheme) - 1)
    return Distribution.normalized(scheme, w)


def test_uniform_examples():
    four = AttributeScheme("g4", tuple("abcd"))
    assert uniform_target(four).probs == (0.25,) * 4
    assert approx(uniform_target(BINS3), 1 / 3, 1 / 3, 1 / 3, tol=1e-12)
    assert uniform_target(AttributeScheme("one", ("x",))).probs == (1.0,)


def test_intermediate_examples():
    r = d3(0.7, 0.2, 0.1)
    assert approx(intermediate_target(r, 0.5), 0.51667, 0.26667, 0.21667)
    assert approx(intermediate_target(r, 0), 1 / 3, 1 / 3, 1 / 3, tol=1e-12)
    assert approx(intermediate_target(r, 1), 0.7, 0.2, 0.1, tol=1e-12)
    with pytest.raises(ValueError):
        intermediate_target(r, 1.5)


def test_extreme_examples():
    assert approx(extreme_target(d3(0.6, 0.3, 0.1), "g1", 0.8), 0.8, 0.15, 0.05, tol=1e-12)
    assert extreme_target(d3(0.6, 0.3, 0.1), "g2", 1.0).probs == (0.0, 1.0, 0.0)
    with pytest.raises(DegenerateReferenceError):
        extreme_target(d3(1.0, 0.0, 0.0), "g1", 0.8)
    with pytest.raises(ValueError):
        extreme_target(d3(0.6, 0.3, 0.1), "g1", 0.5)


def test_fallback_examples():
    assert approx(fallback_target(), *(1 / 6,) * 6, tol=1e-12)
    override = Distribution(FITZPATRICK, (0.5, 0.1, 0.1, 0.1, 0.1, 0.1))
    assert fallback_target(override) == override
    with pytest.raises(DistributionError):
        Distribution(FITZPATRICK, (0.4, 0.1, 0.1, 0.1, 0.1, 0.1))


def test_majority_group_ties_to_lowest_index():
    assert majority_group(d3(0.7, 0.2, 0.1)) == "g1"
    assert majority_group(d3(0.4, 0.4, 0.2)) == "g1"
    assert majority_group(d3(1 / 3, 1 / 3, 1 / 3)) == "g1"
    assert majority_group(d3(0.2, 0.3, 0.5)) == "g3"


def test_smallest_in_top_k():
    r = Distribution(FITZPATRICK, (0.05, 0.5, 0.2, 0.15, 0.1, 0.0))
    assert smallest_in_top_k(r, 3) == "IV"
    assert smallest_in_top_k(r, 1) == "II"
    with pytest.raises(ValueError):
        smallest_in_top_k(r, 0)


def test_aggregate_examples():
    assert approx(aggregate_to_bins(uniform_target(FITZPATRICK)), 1 / 3, 1 / 3, 1 / 3, tol=1e-12)
    assert approx(aggregate_to_bins(Distribution(FITZPATRICK, (0.1, 0.2, 0.15, 0.15, 0.2, 0.2))), 0.3, 0.3, 0.4)
    assert aggregate_to_bins(Distribution(FITZPATRICK, (1, 0, 0, 0, 0, 0))).probs == (1, 0, 0)
    with pytest.raises(SchemeMismatchError):
        aggregate_to_bins(uniform_target(BINS3))


def test_distribution_validation():
    with pytest.raises(DistributionError):
        d3(0.5, 0.5)
    with pytest.raises(DistributionError):
        d3(1.2, -0.1, -0.1)
    with pytest.raises(DistributionError):
        d3(math.nan, 0.5, 0.5)
    with pytest.raises(DistributionError):
        Distribution.normalized(G3, (0, 0, 0))
    with pytest.raises(KeyError):
        Distribution.from_mapping(G3, {"g9": 1.0})
    assert Distribution.from_mapping(G3, {"g2": 1.0}).probs == (0, 1, 0)


def test_scheme_rules():
    with pytest.raises(ValueError):
        AttributeScheme("dup", ("a", "a"))
    assert len(MONK) == 10 and MONK.categories[0] == "MST-1"
    s = demographic_scheme(["White", "Asian"])
    assert s.index("Asian") == 1
    assert AttributeScheme.from_dict(s.to_dict()) == s


def test_mix_rejects_scheme_mismatch():
    with pytest.raises(SchemeMismatchError):
        mix(uniform_target(BINS3), uniform_target(FITZPATRICK), 0.5)


def test_settings_resolve_and_round_trip():
    r = Distribution(FITZPATRICK, (0.12, 0.69, 0.1, 0.075, 0.01, 0.005))
    for setting in (Uniform(), Intermediate(0.5), Extreme("VI", 1.0), Explicit(r), Fallback()):
        q = setting.resolve(FITZPATRICK, r)
        record = declared_target_record(setting, q)
        assert Distribution.from_dict(record["q"]) == q
        back = target_from_dict(record)
        assert back.resolve(FITZPATRICK, r) == q
    with pytest.raises(ValueError):
        Intermediate(0.0)
    with pytest.raises(ValueError):
        Intermediate(1.0)
    with pytest.raises(ValueError):
        Extreme("I", 0.4)


@settings(max_examples=200, deadline=None)
@given(distributions())
def test_distribution_invariants(d):
    assert abs(math.fsum(d.probs) - 1) <= 1e-9
    assert min(d.probs) >= 0
    assert Distribution.from_dict(d.to_dict()) == d


@settings(max_examples=200, deadline=None)
@given(distributions(), st.floats(0, 1), st.floats(0, 1))
def test_intermediate_monotone_error_to_uniform(r, a, b):
    lo, hi = sorted((a, b))
    u = uniform_target(r.scheme)

    def err(d):
        return sum((x - y) ** 2 for x, y in zip(d.probs, u.probs))

    assert err(intermediate_target(r, lo)) <= err(intermediate_target(r, hi)) + 1e-15


@settings(max_examples=200, deadline=None)
@given(distributions(FITZPATRICK), distributions(FITZPATRICK), st.floats(0, 1))
def test_aggregate_commutes_with_mix(a, b, w):
    lhs = aggregate_to_bins(mix(a, b, w))
    rhs = mix(aggregate_to_bins(a), aggregate_to_bins(b), w)
    assert all(abs(x - y) < 1e-12 for x, y in zip(lhs.probs, rhs.probs))


@settings(max_examples=200, deadline=None)
@given(distributions(), st.data())
def test_extreme_places_alpha_on_focal(s, data):
    focal = data.draw(st.sampled_from(s.scheme.categories))
    alpha = data.draw(st.floats(0.5, 1.0, exclude_min=True))
    others = [p for c, p in zip(s.scheme.categories, s.probs) if c != focal]
    if not any(others) and alpha < 1.0:
        with pytest.raises(DegenerateReferenceError):
            extreme_target(s, focal, alpha)
        return
    e = extreme_target(s, focal, alpha)
    assert abs(e[focal] - alpha) < 1e-12
    assert abs(math.fsum(e.probs) - 1) <= 1e-9
