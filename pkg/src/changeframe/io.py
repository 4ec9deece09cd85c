"""CSV ingestion, report serialisation (JSON/CSV/SVG) and batch screening."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import BootstrapConfig, ConfidenceBand, lower_band
from .detection import ChangeReport, Threshold, change_summary, default_lambda, extract_regions
from .exceptions import ChangeFrameError, DataError, InvalidParameterError
from .fitting import Dataset, FitResult, fit_candidates

log = logging.getLogger(__name__)

SINGLE_HEADER = ("time", "value")
BATCH_HEADER = ("id", "time", "value")


# ------------------------------------------------------------------ parsing

def _open_text(source):
    if hasattr(source, "read"):
        return source, False, getattr(source, "name", "<stream>")
    try:
        return open(source, newline="", encoding="utf-8"), True, os.fspath(source)
    except OSError as exc:
        raise DataError(f"{source}: {exc.strerror or exc}") from exc


def _number(text: str, what: str, where: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"{where}: {what} {text!r} is not a number") from None
    if not math.isfinite(val):
        raise DataError(f"{where}: {what} must be finite, got {text!r}")
    return val


def parse_dataset(source, batch: bool | None = None):
    """Read long-format CSV data.

    Parameters
    ----------
    source : path or text stream
        Header ``time,value`` for one series or ``id,time,value`` for a batch.
    batch : bool, optional
        Force or forbid the batch layout; by default it follows the header.

    Returns
    -------
    Dataset or dict
        A single :class:`Dataset`, or ``{id: Dataset}`` in first-seen order.

    Raises
    ------
    DataError
        Malformed rows (with their line number), empty input, non-finite
        values or fewer than two distinct times.
    """
    fh, owned, name = _open_text(source)
    try:
        rows = list(csv.reader(fh))
    except (UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"{name}: {exc}") from exc
    finally:
        if owned:
            fh.close()
    lines = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not lines:
        raise DataError(f"{name}: empty input")
    header_line, header = lines[0]
    header = tuple(c.strip().lower().lstrip("﻿") for c in header)
    if header == SINGLE_HEADER:
        is_batch = False
    elif header == BATCH_HEADER:
        is_batch = True
    else:
        raise DataError(f"{name}:{header_line}: expected header 'time,value' or 'id,time,value', "
                        f"got {','.join(header)!r}")
    if batch is not None and batch != is_batch:
        want = "id,time,value" if batch else "time,value"
        raise DataError(f"{name}:{header_line}: expected header {want!r}")
    body = lines[1:]
    if not body:
        raise DataError(f"{name}: empty input (header only)")

    width = len(header)
    series: dict[str, tuple[list, list]] = {}
    for lineno, row in body:
        where = f"{name}:{lineno}"
        if len(row) != width:
            raise DataError(f"{where}: expected {width} fields, got {len(row)}")
        sid = row[0].strip() if is_batch else ""
        if is_batch and not sid:
            raise DataError(f"{where}: empty id")
        t = _number(row[-2].strip(), "time", where)
        y = _number(row[-1].strip(), "value", where)
        ts, ys = series.setdefault(sid, ([], []))
        ts.append(t)
        ys.append(y)

    out = {}
    for sid, (ts, ys) in series.items():
        try:
            out[sid] = Dataset.from_long(ts, ys)
        except DataError as exc:
            label = f" series {sid!r}" if is_batch else ""
            raise DataError(f"{name}:{label} {exc}") from exc
    return out if is_batch else out[""]


def dataset_to_csv(data, ids=None) -> str:
    """Inverse of :func:`parse_dataset` (single series or ``{id: Dataset}``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(data, Dataset):
        w.writerow(SINGLE_HEADER)
        for t, y in zip(data.t, data.y):
            w.writerow([_num(t), _num(y)])
    else:
        w.writerow(BATCH_HEADER)
        for sid, ds in data.items():
            for t, y in zip(ds.t, ds.y):
                w.writerow([sid, _num(t), _num(y)])
    return buf.getvalue()


# ---------------------------------------------------------------- thresholds

@dataclass(frozen=True)
class ThresholdSpec:
    """Either absolute thresholds or a fold change over a fraction of the study."""

    values: tuple = ()
    fold: float = 1.5
    fraction: float = 1.0

    def resolve(self, design) -> list[Threshold]:
        if self.values:
            return [Threshold(float(v), f"{float(v):g}") for v in self.values]
        return [default_lambda(design.duration, self.fold, self.fraction)]


# ---------------------------------------------------------------- reports

@dataclass
class AnalysisReport:
    fit: FitResult
    aics: dict
    band: ConfidenceBand | None = None
    thresholds: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    cis: list | None = None
    config: dict = field(default_factory=dict)
    data: Dataset | None = None


def analyse(data: Dataset, model: str = "auto", scal=None, thresholds: ThresholdSpec | None = None,
            cfg: BootstrapConfig | None = None, band: bool = True, b3: int = 0) -> AnalysisReport:
    """Fit, band and detect for one series (``band=False`` stops after the fit)."""
    from .ci import time_point_cis
    from .estimator import candidate_specs

    cfg = cfg or BootstrapConfig()
    thresholds = thresholds or ThresholdSpec()
    cands = fit_candidates(data, candidate_specs(model, scal), cfg.fit_options)
    fit = cands.best
    rep = AnalysisReport(fit=fit, aics=cands.aics(), data=data)
    if not band:
        return rep
    rep.config = _config_dict(cfg)
    rep.band = lower_band(data, fit, cfg)
    rep.thresholds = thresholds.resolve(data.design)
    rep.reports = [extract_regions(rep.band, th.value) for th in rep.thresholds]
    if b3:
        rep.config["b3"] = int(b3)
        first = rep.reports[0]
        if first.reject_h0:
            rep.cis = time_point_cis(data, fit, first, cfg, b3=b3)
        else:
            rep.cis = []
    return rep


def _config_dict(cfg: BootstrapConfig) -> dict:
    return {"b1": cfg.b1, "b2": cfg.b2, "alpha": cfg.alpha, "seed": cfg.seed,
            "grid_step": cfg.grid_step}


def _num(x):
    """Float for JSON/CSV: ``repr`` round-trips exactly; non-finite becomes null/empty."""
    x = float(x)
    return x if math.isfinite(x) else None


def _fit_dict(fit: FitResult) -> dict:
    return {
        "model": fit.spec.name,
        "scal": fit.spec.scal,
        "params": {k: _num(v) for k, v in fit.params.items()},
        "sigma": _num(fit.sigma),
        "rss": _num(fit.rss),
        "aic": _num(fit.aic),
        "n": fit.n,
        "method": fit.method,
    }


def _band_dict(band: ConfidenceBand) -> dict:
    return {
        "alpha": band.alpha,
        "critical_value": _num(band.critical_value),
        "valid_first_level": band.n_valid,
        "first_level_failures": band.first_level_failures,
        "second_level_failures": band.second_level_failures,
        "grid": [_num(v) for v in band.grid],
        "estimate": [_num(v) for v in band.estimate],
        "sd": [_num(v) for v in band.sd],
        "lower": [_num(v) for v in band.lower],
    }


def report_to_dict(rep: AnalysisReport) -> dict:
    out = {"fit": _fit_dict(rep.fit),
           "aic": {k: (None if v is None else _num(v)) for k, v in rep.aics.items()},
           "config": dict(rep.config)}
    if rep.band is not None:
        out["band"] = _band_dict(rep.band)
        out["thresholds"] = []
        for th, cr in zip(rep.thresholds, rep.reports):
            summ = change_summary(rep.fit, cr)
            out["thresholds"].append({
                "lambda": _num(th.value),
                "label": th.label,
                "reject_h0": cr.reject_h0,
                "periods": [
                    {"start": _num(r.start), "end": _num(r.end), "t_max": _num(r.t_max),
                     "change": _num(s.change), "fraction_of_b": _num(s.fraction)}
                    for r, s in zip(cr.regions, summ)],
            })
    if rep.cis is not None:
        out["intervals"] = [
            {"period": c.subset + 1, "kind": c.kind, "estimate": _num(c.estimate),
             "lower": _num(c.lower), "upper": _num(c.upper), "valid_runs": c.valid_runs}
            for c in rep.cis]
    return out


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def read_report(source) -> dict:
    """Load a JSON report written by :func:`emit_report`."""
    fh, owned, name = _open_text(source)
    try:
        return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{name}: invalid JSON report: {exc}") from exc
    finally:
        if owned:
            fh.close()


def band_to_csv(band: ConfidenceBand) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grid", "estimate", "sd", "lower"])
    for row in zip(band.grid, band.estimate, band.sd, band.lower):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def fit_to_csv(rep: AnalysisReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "value"])
    w.writerow(["model", rep.fit.spec.name])
    for k, v in rep.fit.params.items():
        w.writerow([k, repr(float(v))])
    for k in ("sigma", "rss", "aic"):
        w.writerow([k, repr(float(getattr(rep.fit, k)))])
    for k, v in rep.aics.items():
        w.writerow([f"aic_{k}", "" if v is None else repr(float(v))])
    return buf.getvalue()


def report_to_svg(rep: AnalysisReport) -> str:
    """Two panels: data with the fitted curve, and ``|f'|`` with its lower band.

    Threshold lines carry ids ``lambda-<i>``; period boundaries carry
    ``period-<i>-<j>-start`` / ``-end``.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fit = rep.fit
    with plt.rc_context({"svg.hashsalt": "changeframe", "svg.fonttype": "none"}):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
        if rep.data is not None:
            t0, t1 = rep.data.design.t_first, rep.data.design.t_last
            ax0.plot(rep.data.t, rep.data.y, "o", ms=3, color="0.4", label="data")
        else:
            t0, t1 = rep.band.t_first, rep.band.t_last
        tt = np.linspace(t0, t1, 400)
        ax0.plot(tt, fit.predict(tt), color="C0", label=f"{fit.spec.name} fit")
        ax0.set_xlabel("time")
        ax0.set_ylabel("response")
        ax0.legend(loc="best", fontsize=8)
        if rep.band is not None:
            b = rep.band
            ax1.plot(b.grid, b.estimate, color="C0", label="|f'| estimate")
            ax1.plot(b.grid, b.lower, color="C1", ls="--",
                     label=f"lower {1 - b.alpha:.0%} band")
            for i, (th, cr) in enumerate(zip(rep.thresholds, rep.reports)):
                ax1.axhline(th.value, color="C3", lw=1, gid=f"lambda-{i}")
                for j, reg in enumerate(cr.regions):
                    ax1.axvline(reg.start, color="C3", lw=0.8, ls=":",
                                gid=f"period-{i}-{j}-start")
                    ax1.axvline(reg.end, color="C3", lw=0.8, ls=":",
                                gid=f"period-{i}-{j}-end")
            ax1.legend(loc="best", fontsize=8)
        ax1.set_xlabel("time")
        ax1.set_ylabel("|f'(t)|")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def render_report(rep: AnalysisReport, fmt: str = "json") -> str:
    if fmt == "json":
        return dumps_json(report_to_dict(rep))
    if fmt == "csv":
        return band_to_csv(rep.band) if rep.band is not None else fit_to_csv(rep)
    if fmt == "svg":
        return report_to_svg(rep)
    raise InvalidParameterError(f"unknown output format {fmt!r}")


def write_text(text: str, path=None):
    """Write to ``path`` or stdout; I/O errors name the path."""
    if path is None or str(path) == "-":
        import sys
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def emit_report(rep: AnalysisReport, fmt: str = "json", path=None) -> str:
    """Render ``rep`` as json, csv or svg and write it to ``path`` (stdout if None)."""
    text = render_report(rep, fmt)
    write_text(text, path)
    return text


# ------------------------------------------------------------------ batch

WINDOW_MODES = ("contain", "overlap")


def window_pass(report: ChangeReport | None, window, mode: str = "contain") -> bool:
    """Containment: some period lies inside ``[lo, hi]``.  Overlap: some period meets it."""
    if report is None or not report.reject_h0:
        return False
    lo, hi = window
    if mode == "contain":
        return any(r.start >= lo and r.end <= hi for r in report.regions)
    if mode == "overlap":
        return any(r.start <= hi and r.end >= lo for r in report.regions)
    raise InvalidParameterError(f"window mode must be one of {WINDOW_MODES}")


@dataclass
class BatchResult:
    id: str
    model: str | None = None
    aics: dict = field(default_factory=dict)
    report: ChangeReport | None = None
    passed: bool | None = None
    error: str | None = None


def batch_screen(datasets: dict, window=None, mode: str = "contain", model: str = "auto",
                 scal=None, thresholds: ThresholdSpec | None = None,
                 cfg: BootstrapConfig | None = None, n_jobs: int = 1) -> list[BatchResult]:
    """Analyse every series with shared settings and apply the window filter.

    Series-level failures are recorded in ``BatchResult.error``; only when
    every series fails is an error raised.  Results keep input order.
    """
    cfg = cfg or BootstrapConfig()
    thresholds = thresholds or ThresholdSpec()
    if window is not None:
        lo, hi = window
        if not lo <= hi:
            raise InvalidParameterError(f"window lower bound {lo} exceeds upper bound {hi}")
    inner = dataclasses.replace(cfg, n_jobs=1)

    def one(item):
        sid, data = item
        try:
            rep = analyse(data, model, scal, thresholds, inner)
        except (ChangeFrameError, ValueError) as exc:
            return BatchResult(sid, error=f"{type(exc).__name__}: {exc}")
        cr = rep.reports[0]
        passed = window_pass(cr, window, mode) if window is not None else cr.reject_h0
        return BatchResult(sid, rep.fit.spec.name, rep.aics, cr, passed)

    items = list(datasets.items())
    if not items:
        raise DataError("batch input contains no series")
    if n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(one, items))
    else:
        results = [one(it) for it in items]
    if all(r.error is not None for r in results):
        raise ChangeFrameError(f"all {len(results)} series failed; first error: {results[0].error}")
    return results


def batch_to_dicts(results) -> list[dict]:
    out = []
    for r in results:
        row = {"id": r.id, "model": r.model, "error": r.error, "pass": bool(r.passed),
               "aic": {k: (None if v is None else _num(v)) for k, v in r.aics.items()}}
        if r.report is not None:
            row["lambda"] = _num(r.report.lam)
            row["reject_h0"] = r.report.reject_h0
            row["periods"] = [{"start": _num(g.start), "end": _num(g.end), "t_max": _num(g.t_max)}
                              for g in r.report.regions]
        out.append(row)
    return out


def batch_to_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "model", "aic_4pll", "aic_beta", "reject_h0", "n_periods", "periods",
                "pass", "error"])
    for r in results:
        rep = r.report
        periods = "" if rep is None else ";".join(
            f"{g.start!r}:{g.end!r}" for g in rep.regions)
        aic4, aicb = r.aics.get("4pll"), r.aics.get("beta")
        w.writerow([r.id, r.model or "", "" if aic4 is None else repr(float(aic4)),
                    "" if aicb is None else repr(float(aicb)),
                    "" if rep is None else int(rep.reject_h0),
                    "" if rep is None else rep.n_subsets, periods, int(bool(r.passed)),
                    r.error or ""])
    return buf.getvalue()
