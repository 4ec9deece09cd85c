import csv
import io
import json

import pytest

from changeframe.bootstrap import BootstrapConfig
from changeframe.exceptions import InvalidParameterError
from changeframe.simulate import (
    LEVEL_FACTORS,
    REFERENCE_LAMBDA,
    SIGMA_LEVELS,
    SIGMA_TABLE,
    builtin_scenario,
    derived_sigma_table,
    run_simulation,
    sigma_transform,
    summaries_to_csv,
    summaries_to_json,
    true_regions,
)

FAST = BootstrapConfig(b1=60, b2=6, seed=3)


def test_builtin_examples():
    s = builtin_scenario(2, "small")
    assert s.theta == (8.791, -0.946, 17.589, 10.0) and s.sigma == 0.149
    s = builtin_scenario(5, "medium")
    assert s.spec.name == "beta" and s.sigma == 0.566 and s.spec.scal == pytest.approx(54.0)
    assert builtin_scenario(1, "large").sigma == 0.056
    assert builtin_scenario(3, "mid_large").level == "mid-large"
    with pytest.raises(InvalidParameterError):
        builtin_scenario(7)
    with pytest.raises(InvalidParameterError):
        builtin_scenario(1, "huge")


def test_design_and_lambda():
    s = builtin_scenario(4)
    assert s.design.n == 47 and list(s.design.times) == [0, 3, 9, 15, 21, 27, 33, 39, 45]
    assert s.lam == REFERENCE_LAMBDA


def test_sigma_transform_examples():
    assert sigma_transform(1.19, 1.19, 0.7) == 0.7
    assert sigma_transform(0.946, 3.783, 1.190) == pytest.approx(0.29758, abs=1e-5)
    assert sigma_transform(0.0, 3.0, 1.0) == 0.0
    with pytest.raises(InvalidParameterError):
        sigma_transform(1.0, 0.0, 1.0)


@pytest.mark.parametrize("sid", range(1, 7))
def test_sigma_levels_are_multiples_of_medium(sid):
    row = SIGMA_TABLE[sid]
    medium = row[SIGMA_LEVELS.index("medium")]
    for level, value in zip(SIGMA_LEVELS, row):
        # printed values are rounded to 3 decimals
        assert value == pytest.approx(LEVEL_FACTORS[level] * medium, abs=1.5e-3)


def test_sigma_table_flags():
    flagged = [(e.scenario, e.level) for e in derived_sigma_table() if e.flagged]
    assert flagged == [(2, "medium"), (3, "mid-large")]


def test_true_regions_table():
    assert true_regions(builtin_scenario(1)) == ()
    r = true_regions(builtin_scenario(3))
    assert [(x.start, x.end) for x in r] == [(5.9, 36.3)]
    assert 5.8 < r[0].raw_start < 5.9 and 36.3 < r[0].raw_end < 36.4
    r = true_regions(builtin_scenario(4))
    assert [(x.start, x.end) for x in r] == [(0.0, 33.6), (41.2, 45.0)]


def test_true_regions_empty_for_large_lambda():
    assert true_regions(builtin_scenario(3), lam=10.0) == ()


def test_run_simulation_invariants():
    s = run_simulation(builtin_scenario(2, "small"), 6, FAST, keep_runs=True)
    assert s.runs + s.failed == 6
    assert s.rejections <= s.runs
    assert sum(s.histogram.values()) == s.runs
    assert len(s.run_regions) == 6
    st = s.stat("start")
    assert st.truth == 11.7 and st.n <= s.runs
    again = run_simulation(builtin_scenario(2, "small"), 6, FAST, keep_runs=True)
    assert again.to_dict() == s.to_dict()


def test_export_formats():
    sums = [run_simulation(builtin_scenario(1, "small"), 3, FAST),
            run_simulation(builtin_scenario(2, "small"), 3, FAST)]
    rows = list(csv.DictReader(io.StringIO(summaries_to_csv(sums))))
    assert len(rows) == 2
    assert rows[0]["scenario"] == "1" and rows[1]["sigma_level"] == "small"
    assert "start1_bias" in rows[1]
    payload = json.loads(summaries_to_json(sums))
    assert payload[1]["histogram"] and payload[0]["rejections"] == 0
