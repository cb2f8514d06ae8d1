import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgen.metrics import (
    AuditComparison,
    OccupationTable,
    alignment_error,
    group_report,
    histogram_csv,
    improvement,
    rows_to_csv,
    rows_to_text,
    write_report,
)
from fairgen.simulate import prompt_sets
from fairgen.targets import BINS3, FITZPATRICK, Distribution, SchemeMismatchError, uniform_target


def bins(*p):
    return Distribution(BINS3, p)


def test_alignment_error_examples():
    u = uniform_target(BINS3)
    assert alignment_error(u, u) == 0
    assert alignment_error(bins(1, 0, 0), u) == pytest.approx(0.6667, abs=1e-4)
    assert alignment_error(bins(0.5, 0.3, 0.2), u) == pytest.approx(0.0467, abs=1e-4)
    with pytest.raises(SchemeMismatchError):
        alignment_error(u, uniform_target(FITZPATRICK))


def test_improvement_examples():
    assert improvement(0.179, 0.023) == pytest.approx(87.2, abs=0.1)
    assert improvement(0.147, 0.013) == pytest.approx(91.1, abs=0.1)
    assert improvement(0.3, 0.3) == 0
    with pytest.raises(ZeroDivisionError):
        improvement(0.0, 0.1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_error_is_a_bounded_symmetric_squared_distance(a, b):
    if sum(a) < 1e-6 or sum(b) < 1e-6:
        return
    p, q = Distribution.normalized(BINS3, a), Distribution.normalized(BINS3, b)
    e = alignment_error(p, q)
    assert 0 <= e <= 2
    assert e == pytest.approx(alignment_error(q, p), abs=1e-15)


def test_audit_comparison_consistency():
    u = uniform_target(BINS3)
    c = AuditComparison.of(bins(1, 0, 0), u, 10)
    assert json.loads(json.dumps(c.to_dict()))["n_images"] == 10
    with pytest.raises(ValueError):
        AuditComparison(u, bins(1, 0, 0), 0.1, 10)


def test_occupation_table():
    t = OccupationTable.load()
    assert (t.lookup("doctor").status, t.lookup("doctor").siops) == ("high", 78)
    assert (t.lookup("Janitor").status, t.lookup("janitor").siops) == ("low", 15)
    assert t.lookup("a Doctor").occupation.lower() == "doctor"
    with pytest.raises(KeyError):
        t.lookup("astronaut")


def test_every_shipped_prompt_occupation_is_in_the_table():
    t = OccupationTable.load()
    for status, occupations in prompt_sets()["occupational"].items():
        assert len(occupations) == 10
        for o in occupations:
            assert t.lookup(o).status == status


def test_group_report_rows():
    t = OccupationTable.load()
    occ = prompt_sets()["occupational"]
    comps = {o: (0.2, 0.02) for o in occ["high"]}
    comps |= {o: (0.1, 0.05) for o in occ["low"]}
    rows = group_report(comps, t)
    assert [r.group for r in rows] == ["High-Status", "Low-Status", "Average", "Average (occupations)"]
    assert rows[0].n == 10 and rows[0].baseline == pytest.approx(0.2)
    assert rows[2].baseline == pytest.approx(0.15) and rows[2].treated == pytest.approx(0.035)
    assert rows[2].improvement == pytest.approx(100 * (1 - 0.035 / 0.15))
    assert "High-Status" in rows_to_text(rows)
    assert rows_to_csv(rows).splitlines()[0] == "group,n,baseline,treated,improvement_pct"


def test_report_files(tmp_path):
    h = histogram_csv({"treated": uniform_target(BINS3)})
    assert h.splitlines()[1].startswith("treated,bins3,Light,0.333333")
    write_report(tmp_path, {"x": 1}, [])
    assert json.loads((tmp_path / "report.json").read_text()) == {"x": 1}
