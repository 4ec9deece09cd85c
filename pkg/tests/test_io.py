import csv
import io
import json
import re

import numpy as np
import pytest

from changeframe.bootstrap import BootstrapConfig, rng_stream, simulate_dataset
from changeframe.detection import ChangeReport, Region
from changeframe.exceptions import DataError, InvalidParameterError
from changeframe.fitting import TimeDesign
from changeframe.io import (
    ThresholdSpec,
    analyse,
    batch_screen,
    batch_to_csv,
    batch_to_dicts,
    dataset_to_csv,
    dumps_json,
    parse_dataset,
    read_report,
    render_report,
    report_to_dict,
    window_pass,
)
from changeframe.models import fourpll

S2 = (8.791, -0.946, 17.589, 10.0)
CFG = BootstrapConfig(b1=60, b2=6, seed=5)


def _series(seed, theta=S2, sigma=0.15):
    return simulate_dataset(fourpll(), theta, sigma, TimeDesign.reference(), rng_stream(seed))


@pytest.fixture(scope="module")
def report():
    return analyse(_series(1), "4pll", thresholds=ThresholdSpec(values=(0.013, 0.03)), cfg=CFG)


def test_parse_single_series():
    data = parse_dataset(io.StringIO(dataset_to_csv(_series(1))))
    assert data.design.m == 9 and data.design.n == 47
    np.testing.assert_array_equal(data.y, _series(1).y)


def test_parse_batch_keeps_order():
    text = dataset_to_csv({"b": _series(1), "a": _series(2), "c": _series(3)})
    out = parse_dataset(io.StringIO(text))
    assert list(out) == ["b", "a", "c"]
    assert all(d.design.n == 47 for d in out.values())


@pytest.mark.parametrize("text,pattern", [
    ("", "empty input"),
    ("time,value\n", "header only"),
    ("t,y\n0,1\n", ":1: expected header"),
    ("time,value\n0,1\n3,abc\n", ":3: value 'abc' is not a number"),
    ("time,value\n0,1\n3,nan\n", ":3: value must be finite"),
    ("time,value\n0,1\n3,1,2\n", ":3: expected 2 fields"),
    ("time,value\n0,1\n0,2\n", "distinct"),
    ("id,time,value\n,0,1\n", ":2: empty id"),
])
def test_parse_errors(text, pattern):
    with pytest.raises(DataError, match=re.escape(pattern)):
        parse_dataset(io.StringIO(text))


def test_parse_forced_layout():
    with pytest.raises(DataError):
        parse_dataset(io.StringIO("time,value\n0,1\n3,2\n"), batch=True)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="missing.csv"):
        parse_dataset(tmp_path / "missing.csv")


def test_json_round_trip(report, tmp_path):
    text = render_report(report, "json")
    path = tmp_path / "r.json"
    path.write_text(text)
    back = read_report(path)
    assert back == json.loads(text)
    assert dumps_json(back) == text
    assert [t["lambda"] for t in back["thresholds"]] == [0.013, 0.03]


def test_band_csv(report):
    rows = list(csv.reader(io.StringIO(render_report(report, "csv"))))
    assert rows[0] == ["grid", "estimate", "sd", "lower"]
    assert len(rows) - 1 == report.band.grid.size
    assert all(len(r) == 4 for r in rows)
    assert float(rows[-1][3]) == report.band.lower[-1]


def test_fit_only_csv():
    rep = analyse(_series(1), "auto", band=False)
    rows = dict(csv.reader(io.StringIO(render_report(rep, "csv"))))
    assert rows["model"] in ("4pll", "beta") and "aic_beta" in rows
    assert "band" not in report_to_dict(rep) or report_to_dict(rep)["band"] is None


def test_svg_marks(report):
    svg = render_report(report, "svg")
    assert svg.lstrip().startswith("<?xml")
    assert svg.count('id="lambda-') == 2
    n_periods = sum(r.n_subsets for r in report.reports)
    assert n_periods >= 1
    assert len(re.findall(r'id="period-\d+-\d+-start"', svg)) == n_periods
    assert len(re.findall(r'id="period-\d+-\d+-end"', svg)) == n_periods
    assert render_report(report, "svg") == svg


def test_unknown_format(report):
    with pytest.raises(InvalidParameterError):
        render_report(report, "pdf")


def test_window_rules():
    rep = ChangeReport(0.01, (Region(12.0, 20.0, 15.0, 0, 1),))
    assert window_pass(rep, (10, 25))
    assert window_pass(rep, (10, 25), "overlap")
    early = ChangeReport(0.01, (Region(5.0, 20.0, 15.0, 0, 1),))
    assert not window_pass(early, (10, 25))
    assert window_pass(early, (10, 25), "overlap")
    assert not window_pass(ChangeReport(0.01, ()), (0, 45), "overlap")
    assert not window_pass(None, (0, 45))
    with pytest.raises(InvalidParameterError):
        window_pass(rep, (10, 25), "inside")


def test_batch_records_series_errors():
    flat = parse_dataset(io.StringIO("time,value\n0,1\n3,2\n"))
    data = {"good": _series(1), "tiny": flat, "other": _series(2, sigma=0.05)}
    res = batch_screen(data, (5, 40), "overlap", "4pll", cfg=CFG)
    assert [r.id for r in res] == ["good", "tiny", "other"]
    assert res[1].error and res[1].passed is None
    assert res[0].error is None and res[0].passed
    rows = list(csv.DictReader(io.StringIO(batch_to_csv(res))))
    assert len(rows) == 3 and rows[1]["error"]
    assert batch_to_dicts(res)[0]["reject_h0"] is True


def test_batch_all_failed():
    flat = parse_dataset(io.StringIO("time,value\n0,1\n3,2\n"))
    with pytest.raises(Exception):
        batch_screen({"a": flat}, cfg=CFG)
    with pytest.raises(InvalidParameterError):
        batch_screen({"a": _series(1)}, (20, 10), cfg=CFG)


def test_batch_jobs_do_not_change_results():
    data = {str(i): _series(10 + i) for i in range(3)}
    one = batch_to_csv(batch_screen(data, cfg=CFG, n_jobs=1))
    three = batch_to_csv(batch_screen(data, cfg=CFG, n_jobs=3))
    assert one == three
