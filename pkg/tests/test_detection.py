import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changeframe.detection import (
    ChangeReport,
    Region,
    Threshold,
    change_summary,
    default_lambda,
    find_regions,
)
from changeframe.exceptions import InvalidParameterError
from changeframe.fitting import FitResult
from changeframe.models import fourpll

GRID = np.round(np.arange(1, 451) * 0.1, 10)


def test_default_lambda_values():
    assert default_lambda(45).value == pytest.approx(np.log2(1.5) / 45)
    assert default_lambda(45, 2.0, 0.5).value == pytest.approx(1 / 22.5)
    assert default_lambda(10, 1.0).value == 0.0
    for args in ((0,), (45, 0.5), (45, 1.5, 0.0), (45, 1.5, 1.5)):
        with pytest.raises(InvalidParameterError):
            default_lambda(*args)
    with pytest.raises(InvalidParameterError):
        Threshold(-1.0)


def test_no_region_when_band_below():
    assert find_regions(GRID, np.zeros_like(GRID), 0.01, 0.0, 45.0) == ()


def test_strict_inequality():
    lower = np.full_like(GRID, 0.01)
    assert find_regions(GRID, lower, 0.01, 0.0, 45.0) == ()


def test_interior_region_interpolated():
    lower = 0.02 - 0.001 * np.abs(GRID - 20.0)  # crosses 0.01 at 10 and 30
    (reg,) = find_regions(GRID, lower, 0.01, 0.0, 45.0)
    assert reg.start == pytest.approx(10.0) and reg.end == pytest.approx(30.0)
    assert reg.t_max == pytest.approx(20.0)


def test_boundary_regions_snap_to_design_limits():
    lower = np.where(GRID < 5, 1.0, 0.0) + np.where(GRID > 40, 1.0, 0.0)
    regs = find_regions(GRID, lower, 0.5, 0.0, 45.0)
    assert [(r.start, r.end) for r in regs][0][0] == 0.0
    assert regs[-1].end == 45.0
    assert len(regs) == 2


def test_tmax_ties_take_earliest():
    lower = np.where((GRID > 10) & (GRID < 20), 1.0, 0.0)
    (reg,) = find_regions(GRID, lower, 0.5, 0.0, 45.0)
    assert reg.t_max == pytest.approx(10.1)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=450, max_size=450), st.floats(-0.5, 0.5))
def test_region_invariants(values, lam):
    lower = np.asarray(values)
    regs = find_regions(GRID, lower, lam, 0.0, 45.0)
    report = ChangeReport(lam, regs)
    assert report.reject_h0 == bool(np.any(lower > lam))
    for a, b in zip(regs, regs[1:]):
        assert a.end <= b.start and a.last < b.first
    covered = np.zeros(GRID.size, dtype=bool)
    for r in regs:
        assert 0.0 <= r.start <= r.end <= 45.0
        assert np.all(lower[r.first:r.last + 1] > lam)
        assert r.start <= GRID[r.first] and GRID[r.last] <= r.end
        covered[r.first:r.last + 1] = True
    np.testing.assert_array_equal(covered, lower > lam)


def test_contains():
    report = ChangeReport(0.1, (Region(1.0, 2.0, 1.5, 0, 1), Region(5.0, 6.0, 5.5, 4, 5)))
    np.testing.assert_array_equal(report.contains([0.5, 1.0, 3.0, 6.0]), [False, True, False, True])


def test_change_summary():
    theta = np.array([8.791, -0.946, 17.589, 10.0])
    fit = FitResult(fourpll(), theta, 0.01, 0.43, -100.0, 47)
    report = ChangeReport(0.013, (Region(11.7, 24.5, 17.2, 0, 1),))
    (s,) = change_summary(fit, report)
    expected = abs(fit.predict(24.5) - fit.predict(11.7))
    assert s.change == pytest.approx(expected)
    assert s.fraction == pytest.approx(expected / 0.946)
    assert 0.9 < s.fraction < 1.0
