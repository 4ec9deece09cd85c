"""Percentile confidence intervals for change-period time points.

An outer parametric bootstrap around the original fit reruns the complete
band-and-detection procedure on every outer dataset.  Runs whose number of
coherent periods differs from the original analysis are discarded; the
remaining start/end/max times are pooled per period index and their
``alpha/2`` and ``1 - alpha/2`` order statistics form the interval.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bootstrap import (
    BootstrapConfig,
    lower_band,
    order_statistic,
    rng_stream,
    simulate_dataset,
    two_step_band,
)
from .detection import TIME_POINT_KINDS, ChangeReport, default_lambda, extract_regions
from .exceptions import InsufficientSamplesError, NoChangeDetectedError, NumericalError
from .fitting import Dataset, FitResult, fit_ols

log = logging.getLogger(__name__)

OUTER_LEVEL = 3
GROUP_LEVEL = 5
MIN_KEPT_FRACTION = 0.2


@dataclass(frozen=True)
class TimePointCI:
    kind: str
    subset: int
    estimate: float
    lower: float
    upper: float
    valid_runs: int

    @property
    def contains_estimate(self) -> bool:
        return self.lower <= self.estimate <= self.upper


@dataclass(frozen=True)
class OnsetComparison:
    """Difference ``start_A - start_B`` of the first change periods."""

    difference: float
    lower: float
    upper: float
    start_a: float
    start_b: float
    pairs: int
    dropped: int


def percentile_interval(samples, alpha: float) -> tuple[float, float]:
    return order_statistic(samples, alpha / 2), order_statistic(samples, 1 - alpha / 2)


def outer_reports(data: Dataset, fit: FitResult, cfg: BootstrapConfig, lam: float, b3: int,
                  key: tuple = ()) -> list[ChangeReport | None]:
    """Detection reports for ``b3`` outer datasets drawn around ``fit``.

    Failed runs (refit or band errors) are ``None``.
    """
    design = data.design
    out = []
    for k in range(b3):
        run_key = (*key, OUTER_LEVEL, k)
        try:
            boot = simulate_dataset(fit.spec, fit.theta, fit.sigma, design,
                                    rng_stream(cfg.seed, *run_key))
            refit = fit_ols(boot, fit.spec, cfg.fit_options, init=fit.theta)
            band = two_step_band(design, refit.spec, refit.theta, refit.sigma, cfg, run_key)
            out.append(extract_regions(band, lam))
        except NumericalError as exc:
            log.debug("outer run %d failed: %s", k, exc)
            out.append(None)
    return out


def _matching(reports, n_subsets):
    return [i for i, rep in enumerate(reports) if rep is not None and rep.n_subsets == n_subsets]


def time_point_cis(data: Dataset, fit: FitResult, report: ChangeReport,
                   cfg: BootstrapConfig | None = None, b3: int = 500,
                   lam: float | None = None, reports=None) -> list[TimePointCI]:
    """Percentile intervals for every start, end and max time of ``report``.

    Parameters
    ----------
    data, fit : Dataset, FitResult
        Original data and its fit.
    report : ChangeReport
        Detection result on the original data; must reject.
    cfg : BootstrapConfig
        Settings for the inner two-level band (B1, B2, alpha, seed, ...).
    b3 : int
        Number of outer bootstrap datasets.
    lam : float, optional
        Threshold; defaults to ``report.lam``.
    reports : list, optional
        Precomputed :func:`outer_reports` output, to reuse outer runs.

    Raises
    ------
    InsufficientSamplesError
        Fewer than ``0.2 * b3`` outer runs reproduce the original number of
        periods.
    """
    cfg = cfg or BootstrapConfig()
    if not report.reject_h0:
        raise NoChangeDetectedError("no change period detected; nothing to build intervals for")
    lam = report.lam if lam is None else float(lam)
    if reports is None:
        reports = outer_reports(data, fit, cfg, lam, b3)
    kept = _matching(reports, report.n_subsets)
    if len(kept) < MIN_KEPT_FRACTION * len(reports):
        raise InsufficientSamplesError(
            f"only {len(kept)} of {len(reports)} outer runs found {report.n_subsets} period(s)")
    out = []
    for j, reg in enumerate(report.regions):
        for kind in TIME_POINT_KINDS:
            samples = [reports[i].regions[j].time_point(kind) for i in kept]
            lo, hi = percentile_interval(samples, cfg.alpha)
            out.append(TimePointCI(kind, j, reg.time_point(kind), lo, hi, len(kept)))
    return out


def compare_onsets(data_a: Dataset, data_b: Dataset, fit_a: FitResult, fit_b: FitResult,
                   cfg: BootstrapConfig | None = None, lam: float | None = None, b3: int = 500,
                   report_a: ChangeReport | None = None,
                   report_b: ChangeReport | None = None) -> OnsetComparison:
    """Compare the first change onsets of two groups.

    Both groups are bootstrapped independently; outer run ``k`` of group A is
    paired with run ``k`` of group B and pairs where either run failed or
    found a different number of periods are dropped.  ``lam`` defaults to
    the 1.5-fold threshold over group A's study duration.
    """
    cfg = cfg or BootstrapConfig()
    if lam is None:
        lam = default_lambda(data_a.design.duration).value
    if report_a is None:
        report_a = extract_regions(lower_band(data_a, fit_a, cfg), lam)
    if report_b is None:
        report_b = extract_regions(lower_band(data_b, fit_b, cfg), lam)
    if not (report_a.reject_h0 and report_b.reject_h0):
        raise NoChangeDetectedError("both groups need a detected change period to compare onsets")
    runs_a = outer_reports(data_a, fit_a, cfg, lam, b3, (GROUP_LEVEL, 0))
    runs_b = outer_reports(data_b, fit_b, cfg, lam, b3, (GROUP_LEVEL, 1))
    kept_a = set(_matching(runs_a, report_a.n_subsets))
    kept_b = set(_matching(runs_b, report_b.n_subsets))
    pairs = sorted(kept_a & kept_b)
    dropped = b3 - len(pairs)
    if dropped:
        log.info("compare_onsets: dropped %d of %d unmatched outer runs", dropped, b3)
    if len(pairs) < MIN_KEPT_FRACTION * b3:
        raise InsufficientSamplesError(f"only {len(pairs)} of {b3} outer run pairs usable")
    diffs = np.array([runs_a[k].regions[0].start - runs_b[k].regions[0].start for k in pairs])
    lo, hi = percentile_interval(diffs, cfg.alpha)
    sa, sb = report_a.regions[0].start, report_b.regions[0].start
    return OnsetComparison(sa - sb, lo, hi, sa, sb, len(pairs), dropped)
