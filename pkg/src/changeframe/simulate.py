"""Scenario registry and Monte-Carlo harness for the change-period procedure.

Six reference scenarios (three logistic, three beta) on a nine time point
design with five noise levels.  :func:`run_simulation` repeats the full
analysis (draw, fit, band, detect) and aggregates rejections, subset counts,
band coverage and the bias/variance of the detected time points.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .bootstrap import BootstrapConfig, rng_stream, simulate_dataset, two_step_band
from .detection import TIME_POINT_KINDS, default_lambda, extract_regions
from .exceptions import ChangeFrameError, InvalidParameterError
from .fitting import TimeDesign, _scal, fit_ols
from .models import ModelSpec, beta, fourpll, validate_params

log = logging.getLogger(__name__)

RUN_LEVEL = 4

SIGMA_LEVELS = ("small", "mid-small", "medium", "mid-large", "large")
LEVEL_FACTORS = {"small": 0.5, "mid-small": 0.75, "medium": 1.0, "mid-large": 1.5, "large": 2.0}

REFERENCE_LAMBDA = default_lambda(45.0).value

# id -> (family, theta, printed true regions)
SCENARIOS = {
    1: ("4pll", (8.791, -0.089, 17.589, 10.0), ()),
    2: ("4pll", (8.791, -0.946, 17.589, 10.0), ((11.7, 24.5),)),
    3: ("4pll", (8.791, -3.783, 17.589, 5.0), ((5.9, 36.3),)),
    4: ("beta", (6.997, 2.952, 0.506, 0.215), ((0.0, 33.6), (41.2, 45.0))),
    5: ("beta", (6.997, 2.952, 3.286, 1.290), ((5.7, 38.1), (39.4, 45.0))),
    6: ("beta", (6.997, 2.952, 0.228, 0.084), ((0.0, 28.9),)),
}

SCENARIO_NAMES = {1: "no relevant change", 2: "small jump", 3: "large jump",
                  4: "dip", 5: "dip alternative", 6: "no dip"}

# printed noise levels, small .. large
SIGMA_TABLE = {
    1: (0.014, 0.021, 0.028, 0.042, 0.056),
    2: (0.149, 0.223, 0.297, 0.446, 0.595),
    3: (0.595, 0.892, 1.190, 1.784, 2.380),
    4: (0.283, 0.424, 0.566, 0.849, 1.132),
    5: (0.283, 0.424, 0.566, 0.849, 1.132),
    6: (0.283, 0.424, 0.566, 0.849, 1.132),
}

# real-data bases for the noise transform: (b_real, sigma_real) per family
SIGMA_ANCHORS = {"4pll": (3.783, 1.190), "beta": (2.952, 0.566)}


def reference_design() -> TimeDesign:
    return TimeDesign.reference()


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    level: str
    spec: ModelSpec
    theta: tuple
    sigma: float
    design: TimeDesign = field(default_factory=reference_design)
    lam: float = REFERENCE_LAMBDA
    printed_regions: tuple = ()

    @property
    def name(self) -> str:
        return SCENARIO_NAMES.get(self.id, f"scenario {self.id}")


def _parse_level(level: str) -> str:
    key = str(level).strip().lower().replace("_", "-")
    if key not in LEVEL_FACTORS:
        raise InvalidParameterError(f"unknown sigma level {level!r}; choose from {SIGMA_LEVELS}")
    return key


def builtin_scenario(scenario_id: int, level: str = "medium") -> ScenarioSpec:
    """Reference scenario ``scenario_id`` (1-6) at noise level ``level``.

    >>> builtin_scenario(2, "small").sigma
    0.149
    """
    if scenario_id not in SCENARIOS:
        raise InvalidParameterError(f"scenario id must be in 1..6, got {scenario_id}")
    level = _parse_level(level)
    fam, theta, regions = SCENARIOS[scenario_id]
    design = reference_design()
    spec = fourpll() if fam == "4pll" else beta().resolved(design.times)
    sigma = SIGMA_TABLE[scenario_id][SIGMA_LEVELS.index(level)]
    return ScenarioSpec(scenario_id, level, spec, tuple(theta), sigma, design,
                        REFERENCE_LAMBDA, regions)


def sigma_transform(b_sce: float, b_real: float, sigma_real: float) -> float:
    """Scale a real-data noise level by the ratio of maximal changes ``|b|``."""
    if b_real == 0:
        raise InvalidParameterError("b_real must be non-zero")
    return abs(b_sce / b_real) * sigma_real


@dataclass(frozen=True)
class SigmaEntry:
    scenario: int
    level: str
    derived: float
    printed: float

    @property
    def rounded(self) -> float:
        return round(self.derived, 3)

    @property
    def flagged(self) -> bool:
        return not math.isclose(self.rounded, self.printed, abs_tol=1e-12)


def derived_sigma_table() -> list[SigmaEntry]:
    """Noise levels rebuilt from the two real-data anchors.

    The medium level is transformed from the anchor of the same family and the
    other levels are multiples of the unrounded medium value.  Entries whose
    derivation disagrees with the printed value at three decimals are flagged.
    """
    out = []
    for sid, (fam, theta, _) in SCENARIOS.items():
        b_real, s_real = SIGMA_ANCHORS[fam]
        medium = sigma_transform(theta[1], b_real, s_real)
        for k, level in enumerate(SIGMA_LEVELS):
            out.append(SigmaEntry(sid, level, medium * LEVEL_FACTORS[level],
                                  SIGMA_TABLE[sid][k]))
    return out


# ---------------------------------------------------------------- true regions

@dataclass(frozen=True)
class TrueRegion:
    start: float
    end: float
    t_max: float
    raw_start: float
    raw_end: float

    def time_point(self, kind: str) -> float:
        return {"start": self.start, "end": self.end, "max": self.t_max}[kind]


def _abs_slope_fn(spec: ModelSpec, theta):
    theta = validate_params(spec, theta)
    x = np.ascontiguousarray(theta[None, :])
    code, scal = spec.family.code, _scal(spec)

    def fn(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((1, t.size))
        _kernels.abs_slope_grid(code, scal, x, np.ascontiguousarray(np.maximum(t, 1e-12)), out)
        return out[0]

    return fn


def true_regions(scenario: ScenarioSpec, lam: float | None = None, scan_step: float = 0.01,
                 resolution: float = 0.1) -> tuple[TrueRegion, ...]:
    """Periods where the true ``|f'|`` exceeds ``lam`` on the design's time range.

    Sign changes of ``|f'| - lam`` are bracketed on a ``scan_step`` scan and
    refined with Brent's method.  Endpoints are then snapped inward onto the
    ``resolution`` grid (start rounded up, end rounded down) so that the
    reported interval only contains grid points that exceed ``lam``; an
    interval touching a design boundary keeps that boundary.
    """
    lam = scenario.lam if lam is None else float(lam)
    design = scenario.design
    t0, t1 = design.t_first, design.t_last
    fn = _abs_slope_fn(scenario.spec, scenario.theta)
    n = int(round((t1 - t0) / scan_step))
    ts = np.linspace(t0, t1, n + 1)
    d = fn(ts) - lam
    above = d > 0
    if not above.any():
        return ()

    def root(a, b):
        return brentq(lambda s: fn(s)[0] - lam, a, b, xtol=1e-12)

    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    out = []
    for i, j in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1) - 1):
        raw_s = t0 if i == 0 else root(ts[i - 1], ts[i])
        raw_e = t1 if j == n else root(ts[j], ts[j + 1])
        start = t0 if i == 0 else math.ceil(raw_s / resolution - 1e-9) * resolution
        end = t1 if j == n else math.floor(raw_e / resolution + 1e-9) * resolution
        k = i + int(np.argmax(d[i:j + 1]))
        out.append(TrueRegion(round(start, 10), round(end, 10), float(ts[k]), raw_s, raw_e))
    return tuple(out)


def band_covers(band, scenario: ScenarioSpec) -> bool:
    """True when the lower band stays at or below the true ``|f'|`` on the whole grid."""
    truth = _abs_slope_fn(scenario.spec, scenario.theta)(band.grid)
    return bool(np.all(band.lower <= truth))


# ------------------------------------------------------------------ harness

@dataclass(frozen=True)
class TimePointStat:
    kind: str
    subset: int
    truth: float
    n: int
    bias: float
    variance: float

    @property
    def se(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else math.nan


@dataclass
class SimulationSummary:
    scenario: int
    level: str
    sigma: float
    lam: float
    runs: int
    failed: int
    rejections: int
    coverage: int
    histogram: dict
    stats: list
    run_regions: list | None = None

    def stat(self, kind: str, subset: int = 0) -> TimePointStat | None:
        for s in self.stats:
            if s.kind == kind and s.subset == subset:
                return s
        return None

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario, "sigma_level": self.level, "sigma": self.sigma,
            "lambda": self.lam, "runs": self.runs, "failed": self.failed,
            "rejections": self.rejections, "coverage": self.coverage,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "time_points": [
                {"kind": s.kind, "subset": s.subset + 1, "truth": s.truth, "n": s.n,
                 "bias": _finite(s.bias), "variance": _finite(s.variance)}
                for s in self.stats],
        }
        if self.run_regions is not None:
            out["run_regions"] = [
                None if regs is None else [[r.start, r.end, r.t_max] for r in regs]
                for regs in self.run_regions]
        return out


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _aggregate(scenario, truth, reports):
    stats = []
    n_true = len(truth)
    matched = [rep for rep in reports if rep is not None and rep.n_subsets == n_true]
    for j, reg in enumerate(truth):
        for kind in TIME_POINT_KINDS:
            errs = np.array([rep.regions[j].time_point(kind) - reg.time_point(kind)
                             for rep in matched])
            bias = float(errs.mean()) if errs.size else math.nan
            var = float(errs.var(ddof=1)) if errs.size > 1 else math.nan
            stats.append(TimePointStat(kind, j, reg.time_point(kind), int(errs.size), bias, var))
    return stats


def run_simulation(scenario: ScenarioSpec, runs: int, cfg: BootstrapConfig | None = None,
                   keep_runs: bool = False) -> SimulationSummary:
    """Repeat the full analysis ``runs`` times on data drawn from ``scenario``.

    Parameters
    ----------
    scenario : ScenarioSpec
        Generating model, noise level and design.
    runs : int
        Number of simulated studies.
    cfg : BootstrapConfig
        Band settings; ``cfg.seed`` is the master seed, run ``r`` uses its own
        streams so results do not depend on execution order or ``n_jobs``.
    keep_runs : bool
        Keep the detected periods of every run.

    Returns
    -------
    SimulationSummary
        Bias and variance (estimate minus truth) only use runs whose number of
        periods matches the truth.  Runs that fail numerically are counted in
        ``failed`` and excluded from everything else.
    """
    if runs < 1:
        raise InvalidParameterError("runs must be positive")
    cfg = cfg or BootstrapConfig()
    spec, design = scenario.spec, scenario.design
    truth = true_regions(scenario)
    reports, failed, covered = [], 0, 0
    for r in range(runs):
        key = (RUN_LEVEL, r)
        try:
            data = simulate_dataset(spec, scenario.theta, scenario.sigma, design,
                                    rng_stream(cfg.seed, *key))
            fit = fit_ols(data, spec, cfg.fit_options)
            band = two_step_band(design, fit.spec, fit.theta, fit.sigma, cfg, key)
        except ChangeFrameError as exc:
            log.debug("run %d failed: %s", r, exc)
            failed += 1
            reports.append(None)
            continue
        reports.append(extract_regions(band, scenario.lam))
        covered += band_covers(band, scenario)
    done = [rep for rep in reports if rep is not None]
    hist: dict[int, int] = {}
    for rep in done:
        hist[rep.n_subsets] = hist.get(rep.n_subsets, 0) + 1
    return SimulationSummary(
        scenario=scenario.id, level=scenario.level, sigma=scenario.sigma, lam=scenario.lam,
        runs=len(done), failed=failed, rejections=sum(rep.reject_h0 for rep in done),
        coverage=covered, histogram=hist, stats=_aggregate(scenario, truth, reports),
        run_regions=[None if rep is None else list(rep.regions) for rep in reports]
        if keep_runs else None)


# ------------------------------------------------------------------- export

def summaries_to_csv(summaries) -> str:
    """One row per scenario x level; time point columns are ``<kind><subset>_bias|_var``."""
    base = ["scenario", "sigma_level", "sigma", "lambda", "runs", "failed", "rejections",
            "coverage", "histogram"]
    tp_cols = []
    for s in summaries:
        for st in s.stats:
            for suffix in ("bias", "var"):
                col = f"{st.kind}{st.subset + 1}_{suffix}"
                if col not in tp_cols:
                    tp_cols.append(col)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(base + tp_cols)
    for s in summaries:
        row = [s.scenario, s.level, _fmt(s.sigma), _fmt(s.lam), s.runs, s.failed, s.rejections,
               s.coverage, ";".join(f"{k}:{v}" for k, v in sorted(s.histogram.items()))]
        vals = {}
        for st in s.stats:
            vals[f"{st.kind}{st.subset + 1}_bias"] = st.bias
            vals[f"{st.kind}{st.subset + 1}_var"] = st.variance
        row += [_fmt(vals[c]) if c in vals else "" for c in tp_cols]
        w.writerow(row)
    return buf.getvalue()


def summaries_to_json(summaries) -> str:
    return json.dumps([s.to_dict() for s in summaries], indent=2, sort_keys=True) + "\n"


def _fmt(x) -> str:
    if x is None or not math.isfinite(x):
        return ""
    return repr(float(x))
