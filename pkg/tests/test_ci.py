import numpy as np
import pytest

from changeframe.bootstrap import BootstrapConfig, lower_band, rng_stream, simulate_dataset
from changeframe.ci import compare_onsets, outer_reports, percentile_interval, time_point_cis
from changeframe.detection import ChangeReport, Region, extract_regions
from changeframe.exceptions import InsufficientSamplesError, NoChangeDetectedError
from changeframe.fitting import Dataset, TimeDesign, fit_ols
from changeframe.models import eval_model, fourpll

S2 = (8.791, -0.946, 17.589, 10.0)
CFG = BootstrapConfig(b1=60, b2=6, seed=4)


@pytest.fixture(scope="module")
def analysed():
    design = TimeDesign.reference()
    data = simulate_dataset(fourpll(), S2, 0.149, design, rng_stream(163))
    fit = fit_ols(data, fourpll())
    report = extract_regions(lower_band(data, fit, CFG), 0.013)
    return data, fit, report


def test_percentile_interval():
    lo, hi = percentile_interval(np.arange(1.0, 201.0), 0.05)
    assert (lo, hi) == (5.0, 195.0)


def test_intervals_bracket_estimates(analysed):
    data, fit, report = analysed
    assert report.n_subsets == 1
    cis = time_point_cis(data, fit, report, CFG, b3=20)
    assert [c.kind for c in cis] == ["start", "end", "max"]
    for c in cis:
        assert c.lower <= c.upper
        assert c.valid_runs <= 20
    start = cis[0]
    assert 5 < start.lower <= start.upper < 25


def test_intervals_are_deterministic(analysed):
    data, fit, report = analysed
    a = time_point_cis(data, fit, report, CFG, b3=10)
    b = time_point_cis(data, fit, report, CFG, b3=10)
    assert a == b


def test_reuses_precomputed_runs(analysed):
    data, fit, report = analysed
    runs = outer_reports(data, fit, CFG, report.lam, 10)
    assert time_point_cis(data, fit, report, CFG, b3=10, reports=runs) == \
        time_point_cis(data, fit, report, CFG, b3=10)


def test_subset_count_filter(analysed):
    data, fit, report = analysed
    two = ChangeReport(report.lam, report.regions + (Region(40.0, 45.0, 45.0, 0, 0),))
    with pytest.raises(InsufficientSamplesError):
        time_point_cis(data, fit, two, CFG, b3=10)


def test_requires_detection(analysed):
    data, fit, report = analysed
    with pytest.raises(NoChangeDetectedError):
        time_point_cis(data, fit, ChangeReport(report.lam, ()), CFG, b3=5)


def test_zero_noise_intervals_degenerate():
    design = TimeDesign.reference()
    t = design.expanded_times()
    data = Dataset.from_long(t, eval_model(fourpll(), S2, t))
    fit = fit_ols(data, fourpll())
    report = extract_regions(lower_band(data, fit, CFG), 0.013)
    for c in time_point_cis(data, fit, report, CFG, b3=5):
        assert c.lower == pytest.approx(c.estimate, abs=1e-9)
        assert c.upper == pytest.approx(c.estimate, abs=1e-9)


def test_compare_identical_groups(analysed):
    data, fit, report = analysed
    res = compare_onsets(data, data, fit, fit, CFG, report.lam, b3=15)
    assert res.difference == 0.0
    assert res.lower <= 0.0 <= res.upper
    assert res.pairs + res.dropped == 15


def test_compare_shifted_groups():
    design = TimeDesign.reference()
    late = (8.791, -0.946, 25.0, 10.0)
    data_a = simulate_dataset(fourpll(), S2, 0.1, design, rng_stream(1))
    data_b = simulate_dataset(fourpll(), late, 0.1, design, rng_stream(2))
    fa, fb = fit_ols(data_a, fourpll()), fit_ols(data_b, fourpll())
    res = compare_onsets(data_a, data_b, fa, fb, CFG, 0.013, b3=15)
    assert res.difference < 0
    assert res.upper < 0
