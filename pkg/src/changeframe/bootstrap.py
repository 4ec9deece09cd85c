"""Two-level parametric bootstrap for a lower simultaneous band on |f'(t)|.

The band is ``L(t) = |f'(t, theta_hat)| - c * sd(t)`` where ``sd`` is the
bootstrap standard deviation of ``|f'(t, theta*)|`` and ``c`` is the
``(1 - alpha)`` quantile of the studentized maximal deviation

    D_l = max_t (|f'(t, theta*_l)| - |f'(t, theta_hat)|) / sd_l(t)

with ``sd_l`` estimated from a second bootstrap level around ``theta*_l``.

Random numbers come from one independent stream per (level, replicate), so
results are reproducible regardless of thread count and adding replicates
never changes the ones already drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import (
    InsufficientSamplesError,
    InvalidParameterError,
    NumericalError,
    RefitFailureError,
)
from .fitting import Dataset, FitOptions, FitResult, TimeDesign, _scal, refit_batch
from .models import ModelSpec

FIRST_LEVEL = 1
SECOND_LEVEL = 2
MIN_CRITICAL_SAMPLES = 50


class DegenerateVarianceError(NumericalError):
    """A bootstrap standard deviation is exactly zero and flooring is off."""


@dataclass(frozen=True)
class BootstrapConfig:
    b1: int = 500
    b2: int = 25
    alpha: float = 0.05
    seed: int = 0
    grid_step: float = 0.1
    max_refit_failure_fraction: float = 0.10
    sd_floor: bool = True
    n_jobs: int = 1
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.b1 < 50:
            raise InvalidParameterError(f"b1 must be at least 50, got {self.b1}")
        if self.b2 < 5:
            raise InvalidParameterError(f"b2 must be at least 5, got {self.b2}")
        if not 0 < self.alpha < 1:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.grid_step > 0:
            raise InvalidParameterError(f"grid_step must be positive, got {self.grid_step}")
        if not 0 <= self.max_refit_failure_fraction < 1:
            raise InvalidParameterError("max_refit_failure_fraction must lie in [0, 1)")
        if self.seed < 0:
            raise InvalidParameterError("seed must be non-negative")


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    """Lower simultaneous band evaluated on a time grid.

    ``guarded`` is true when the grid starts one step after ``t_first``
    because the derivative may be unbounded at t = 0.
    """

    grid: np.ndarray
    estimate: np.ndarray
    sd: np.ndarray
    critical_value: float
    alpha: float
    t_first: float
    t_last: float
    guarded: bool = False
    n_valid: int = 0
    first_level_failures: int = 0
    second_level_failures: int = 0
    d_samples: np.ndarray | None = None
    first_level_theta: np.ndarray | None = None

    @property
    def lower(self) -> np.ndarray:
        return self.estimate - self.critical_value * self.sd


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the replicate identified by ``key``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def band_grid(design: TimeDesign, step: float = 0.1) -> tuple[np.ndarray, bool]:
    """Uniform grid over ``[max(t_1, step), t_m]``; ``t_m`` is always included."""
    t1, tm = design.t_first, design.t_last
    k = int(math.floor((tm - t1) / step + 1e-9))
    grid = t1 + step * np.arange(k + 1)
    if tm - grid[-1] > 1e-9 * max(1.0, abs(tm)):
        grid = np.append(grid, tm)
    grid[-1] = tm
    guarded = t1 < step
    if guarded:
        grid = grid[grid >= step - 1e-12]
    return np.round(grid, 10), guarded


def simulate_dataset(spec: ModelSpec, theta, sigma: float, design: TimeDesign,
                     rng: np.random.Generator) -> Dataset:
    """Draw ``y = f(t_p, theta) + sigma * eps`` with iid standard normal ``eps``."""
    if sigma < 0:
        raise InvalidParameterError("sigma must be non-negative")
    spec = spec.resolved(design.times)
    mean = _design_values(spec, np.asarray(theta, dtype=float)[None, :], design)[0]
    eps = rng.standard_normal(design.n)
    return Dataset(design, np.repeat(mean, design.counts) + sigma * eps)


def order_statistic(samples, prob: float) -> float:
    """Empirical quantile as the order statistic of rank ``ceil(prob * K)`` (min 1)."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise InsufficientSamplesError("no samples")
    rank = max(1, math.ceil(prob * x.size - 1e-9))
    return float(x[min(rank, x.size) - 1])


def pointwise_sd(samples, floor: bool = True) -> np.ndarray:
    """Column-wise sample standard deviation (ddof=1) of a (B, G) matrix.

    With ``floor`` set, entries below ``1e-8 * max(sd)`` are raised to that
    value so that studentized ratios stay finite.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 2:
        raise InsufficientSamplesError("need at least two samples for a standard deviation")
    sd = samples.std(axis=0, ddof=1)
    return _apply_floor(sd, floor)


def _apply_floor(sd, floor):
    if not floor:
        if np.any(sd == 0):
            raise DegenerateVarianceError("zero bootstrap standard deviation at some grid point")
        return sd
    eps = 1e-8 * max(float(np.nanmax(sd, initial=0.0)), 1e-300)
    return np.maximum(sd, eps)


def critical_value(d_samples, alpha: float) -> float:
    """``(1 - alpha)`` empirical quantile of the studentized maxima."""
    d = np.asarray(d_samples, dtype=float)
    d = d[np.isfinite(d)]
    if d.size < MIN_CRITICAL_SAMPLES:
        raise InsufficientSamplesError(
            f"only {d.size} valid bootstrap maxima; need {MIN_CRITICAL_SAMPLES}")
    return order_statistic(d, 1.0 - alpha)


def _design_values(spec: ModelSpec, params, design: TimeDesign) -> np.ndarray:
    params = np.ascontiguousarray(params, dtype=float)
    out = np.empty((params.shape[0], design.m))
    _kernels.model_values(spec.family.code, _scal(spec), params, design.times, out)
    return out


def _abs_slopes(spec: ModelSpec, params, grid) -> np.ndarray:
    params = np.ascontiguousarray(params, dtype=float)
    out = np.empty((params.shape[0], grid.size))
    _kernels.abs_slope_grid(spec.family.code, _scal(spec), params, grid, out)
    return out


def _noise_summaries(eps: np.ndarray, design: TimeDesign):
    """Per-time means and within-time sum of squares of noise draws (..., n)."""
    starts = np.concatenate([[0], np.cumsum(design.counts)[:-1]])
    means = np.add.reduceat(eps, starts, axis=-1) / design.counts
    wss = np.sum(eps * eps, axis=-1) - np.sum(design.counts * means * means, axis=-1)
    return means, np.maximum(wss, 0.0)


def _check_failures(failed: int, total: int, cfg: BootstrapConfig, level: str):
    if total and failed / total > cfg.max_refit_failure_fraction:
        raise RefitFailureError(
            f"{failed} of {total} {level} bootstrap refits failed "
            f"(limit {cfg.max_refit_failure_fraction:.0%})")


def two_step_band(design: TimeDesign, spec: ModelSpec, theta, sigma: float,
                  cfg: BootstrapConfig, key: tuple = ()) -> ConfidenceBand:
    """Band around ``(theta, sigma)`` on ``design``; ``key`` namespaces the RNG streams."""
    theta = np.asarray(theta, dtype=float)
    n, r = design.n, spec.param_count
    grid, guarded = band_grid(design, cfg.grid_step)
    opts = cfg.fit_options

    # first level: datasets around (theta, sigma), warm-started refits
    f_hat = _design_values(spec, theta[None, :], design)[0]
    eps1 = np.stack([rng_stream(cfg.seed, *key, FIRST_LEVEL, l).standard_normal(n)
                     for l in range(cfg.b1)])
    m1, w1 = _noise_summaries(eps1, design)
    theta1, rss1, st1 = refit_batch(spec, design, f_hat + sigma * m1, sigma * sigma * w1,
                                    theta, opts, cfg.n_jobs)
    ok1 = (st1 == _kernels.CONVERGED) & np.isfinite(rss1)
    idx = np.flatnonzero(ok1)
    sigma1 = np.sqrt(np.maximum(rss1[idx], 0.0) / (n - r))

    # second level: B2 datasets around each first-level estimate
    eps2 = np.stack([rng_stream(cfg.seed, *key, SECOND_LEVEL, l).standard_normal((cfg.b2, n))
                     for l in idx]) if idx.size else np.empty((0, cfg.b2, n))
    m2, w2 = _noise_summaries(eps2, design)
    f1 = _design_values(spec, theta1[idx], design)
    ybar2 = f1[:, None, :] + sigma1[:, None, None] * m2
    wss2 = sigma1[:, None] ** 2 * w2
    x0 = np.repeat(theta1[idx], cfg.b2, axis=0)
    theta2, rss2, st2 = refit_batch(spec, design, ybar2.reshape(-1, design.m), wss2.ravel(),
                                    x0, opts, cfg.n_jobs)
    ok2 = ((st2 == _kernels.CONVERGED) & np.isfinite(rss2)).reshape(idx.size, cfg.b2)
    theta2 = theta2.reshape(idx.size, cfg.b2, 4)

    keep = ok2.sum(axis=1) >= 2
    first_failed = cfg.b1 - int(keep.sum())
    second_failed = int((~ok2).sum())
    _check_failures(first_failed, cfg.b1, cfg, "first-level")
    _check_failures(second_failed, idx.size * cfg.b2, cfg, "second-level")

    sd_star = np.empty((idx.size, grid.size))
    _kernels.slope_sd_grid(spec.family.code, _scal(spec), np.ascontiguousarray(theta2),
                           ok2, grid, sd_star)
    sd_star = sd_star[keep]
    if cfg.sd_floor:
        row_max = np.nanmax(sd_star, axis=1, initial=0.0)
        eps_floor = 1e-8 * np.maximum(row_max, 1e-300)
        sd_star = np.maximum(sd_star, eps_floor[:, None])
    elif np.any(sd_star == 0):
        raise DegenerateVarianceError("zero second-level standard deviation")

    abs_hat = _abs_slopes(spec, theta[None, :], grid)[0]
    abs1 = _abs_slopes(spec, theta1[idx], grid)
    d = np.max((abs1[keep] - abs_hat) / sd_star, axis=1)
    c = critical_value(d, cfg.alpha)
    sd_hat = pointwise_sd(abs1, floor=cfg.sd_floor)

    theta1_out = np.full((cfg.b1, 4), np.nan)
    theta1_out[idx] = theta1[idx]
    return ConfidenceBand(
        grid=grid,
        estimate=abs_hat,
        sd=sd_hat,
        critical_value=c,
        alpha=cfg.alpha,
        t_first=design.t_first,
        t_last=design.t_last,
        guarded=guarded,
        n_valid=int(keep.sum()),
        first_level_failures=first_failed,
        second_level_failures=second_failed,
        d_samples=d,
        first_level_theta=theta1_out,
    )


def lower_band(data: Dataset, fit: FitResult, cfg: BootstrapConfig | None = None) -> ConfidenceBand:
    """Lower ``1 - alpha`` simultaneous confidence band for ``|f'(t, theta)|``.

    Parameters
    ----------
    data : Dataset
        The data ``fit`` was estimated from; only its design is reused.
    fit : FitResult
        Least-squares fit supplying ``theta_hat`` and ``sigma_hat``.
    cfg : BootstrapConfig, optional
        Replicate counts, level, seed and grid step.

    Raises
    ------
    RefitFailureError
        More than ``cfg.max_refit_failure_fraction`` of the refits at either
        bootstrap level failed.
    InsufficientSamplesError
        Fewer than 50 studentized maxima are available for the quantile.
    """
    cfg = cfg or BootstrapConfig()
    return two_step_band(data.design, fit.spec, fit.theta, fit.sigma, cfg)
