"""Ordinary least-squares fits of the time-response models and AIC selection."""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _kernels
from .exceptions import (
    DataError,
    DegenerateDataWarning,
    DomainError,
    NonConvergenceError,
    NumericalError,
)
from .models import Family, ModelSpec, eval_abs_derivative, eval_derivative, eval_model


@dataclass(frozen=True, eq=False)
class TimeDesign:
    """Observation times ``t_1 < ... < t_m`` and replicate counts ``n_p``."""

    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        counts = np.asarray(self.counts).ravel()
        if times.size < 2:
            raise DataError(f"need at least 2 distinct time points, got {times.size}")
        if times.shape != counts.shape:
            raise DataError("times and counts differ in length")
        if not np.all(np.isfinite(times)):
            raise DataError("time points must be finite")
        if np.any(np.diff(times) <= 0):
            raise DataError("time points must be strictly increasing")
        if np.any(counts < 1) or np.any(counts != np.round(counts)):
            raise DataError("replicate counts must be positive integers")
        times.flags.writeable = False
        counts = counts.astype(np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def reference(cls) -> "TimeDesign":
        """Nine feeding times (weeks) with 47 animals: 5 at each of the first seven."""
        return cls([0, 3, 9, 15, 21, 27, 33, 39, 45], [5, 5, 5, 5, 5, 5, 5, 4, 8])

    @property
    def m(self) -> int:
        return int(self.times.size)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def t_first(self) -> float:
        return float(self.times[0])

    @property
    def t_last(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.t_last - self.t_first

    def expanded_times(self) -> np.ndarray:
        return np.repeat(self.times, self.counts)

    def __eq__(self, other):
        if not isinstance(other, TimeDesign):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.counts, other.counts))

    def __repr__(self):
        return f"TimeDesign(times={self.times.tolist()}, counts={self.counts.tolist()})"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Responses ``y`` ordered time-major, replicate-minor along ``design``."""

    design: TimeDesign
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size != self.design.n:
            raise DataError(f"expected {self.design.n} responses, got {y.size}")
        if not np.all(np.isfinite(y)):
            raise DataError("responses must be finite")
        y.flags.writeable = False
        object.__setattr__(self, "y", y)

    @classmethod
    def from_long(cls, t, y) -> "Dataset":
        """Build from paired (time, response) observations in any order."""
        t = np.asarray(t, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if t.size != y.size:
            raise DataError("time and response arrays differ in length")
        if t.size == 0:
            raise DataError("no observations")
        order = np.argsort(t, kind="stable")
        t, y = t[order], y[order]
        times, counts = np.unique(t, return_counts=True)
        return cls(TimeDesign(times, counts), y)

    @property
    def t(self) -> np.ndarray:
        return self.design.expanded_times()

    @property
    def n(self) -> int:
        return self.design.n

    def group_means(self) -> np.ndarray:
        starts = np.concatenate([[0], np.cumsum(self.design.counts)[:-1]])
        return np.add.reduceat(self.y, starts) / self.design.counts

    def within_ss(self) -> float:
        resid = self.y - np.repeat(self.group_means(), self.design.counts)
        return float(resid @ resid)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.design == other.design and np.array_equal(self.y, other.y)


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``max_starts`` caps the multi-start grid (``None`` uses all of it).
    ``hill_max`` bounds the 4pLL slope h, ``delta_max`` the beta shapes.
    """

    tol: float = 1e-10
    max_iter: int = 500
    max_starts: int | None = None
    fallback: bool = True
    hill_max: float = 10.0
    delta_max: float = 4.0


@dataclass(frozen=True, eq=False)
class FitResult:
    spec: ModelSpec
    theta: np.ndarray
    sigma2: float
    rss: float
    aic: float
    n: int
    converged: bool = True
    n_starts_used: int = 1
    degenerate: bool = False
    method: str = "lm"

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.spec.param_names, map(float, self.theta)))

    def predict(self, t):
        return eval_model(self.spec, self.theta, t)

    def derivative(self, t):
        return eval_derivative(self.spec, self.theta, t)

    def abs_derivative(self, t):
        return eval_abs_derivative(self.spec, self.theta, t)


def aic(rss: float, n: int, n_params: int = 4) -> float:
    """Gaussian AIC up to an additive constant: ``n log(rss/n) + 2 (r + 1)``.

    The extra parameter counts the error variance.
    """
    if not rss > 0:
        raise DomainError(f"AIC needs a positive residual sum of squares, got {rss}")
    return n * math.log(rss / n) + 2 * (n_params + 1)


def param_bounds(spec: ModelSpec, design: TimeDesign,
                 opts: FitOptions | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Box used during optimisation (a and b are unbounded)."""
    opts = opts or FitOptions()
    inf = np.inf
    if spec.family is Family.FOURPLL:
        tm = max(design.t_last, 1e-12)
        return (np.array([-inf, -inf, 1e-6 * tm, 1e-3]),
                np.array([inf, inf, 5.0 * tm, opts.hill_max]))
    return (np.array([-inf, -inf, 1e-3, 1e-3]),
            np.array([inf, inf, opts.delta_max, opts.delta_max]))


def _shape_grid(spec: ModelSpec, design: TimeDesign) -> list[tuple[float, float]]:
    if spec.family is Family.FOURPLL:
        tb = design.duration
        cs = [design.t_first + f * tb for f in (0.25, 0.5, 0.75)]
        return list(itertools.product(cs, (0.5, 1.0, 2.0, 5.0, 10.0)))
    ds = (0.25, 0.5, 1.0, 2.0, 4.0)
    return list(itertools.product(ds, ds))


def _linear_start(spec, design, ybar, p, q):
    """Weighted least-squares (a, b) for fixed shape parameters."""
    x = np.empty((1, 4))
    x[0] = [0.0, 1.0, p, q]
    g = np.empty((1, design.m))
    _kernels.model_values(spec.family.code, _scal(spec), x, design.times, g)
    w = design.counts.astype(float)
    g = g[0]
    gm = np.average(g, weights=w)
    ym = np.average(ybar, weights=w)
    sgg = np.sum(w * (g - gm) ** 2)
    if sgg <= 1e-300:
        return ym, 0.0
    b = np.sum(w * (g - gm) * (ybar - ym)) / sgg
    return ym - b * gm, b


def _scal(spec: ModelSpec) -> float:
    return spec.scal if spec.scal is not None else 0.0


def _check_design(spec: ModelSpec, design: TimeDesign):
    if design.n < spec.param_count + 2:
        raise DataError(f"need at least {spec.param_count + 2} observations, got {design.n}")
    if design.t_first < 0:
        raise DataError("time points must be non-negative")
    if spec.family is Family.BETA and spec.scal <= design.t_last:
        raise DomainError(f"scal={spec.scal} must exceed the last time point {design.t_last}")


def refit_batch(spec: ModelSpec, design: TimeDesign, ybar, wss, x0, opts: FitOptions | None = None,
                n_jobs: int = 1):
    """Fit many datasets sharing one design, each from its own start.

    Returns ``(params, rss, status)`` arrays; ``status == 0`` marks a
    converged fit.  Results do not depend on ``n_jobs``.
    """
    opts = opts or FitOptions()
    ybar = np.ascontiguousarray(ybar, dtype=float)
    wss = np.ascontiguousarray(wss, dtype=float)
    x0 = np.ascontiguousarray(np.broadcast_to(x0, (ybar.shape[0], 4)), dtype=float)
    k = ybar.shape[0]
    params = np.empty((k, 4))
    rss = np.empty(k)
    status = np.empty(k, dtype=np.int64)
    lo, hi = param_bounds(spec, design, opts)
    t = np.ascontiguousarray(design.times)
    sw = np.sqrt(design.counts.astype(float))
    fam, scal = spec.family.code, _scal(spec)

    def run(sl):
        _kernels.fit_many(fam, scal, t, sw, ybar[sl], wss[sl], x0[sl], lo, hi,
                          opts.max_iter, opts.tol, params[sl], rss[sl], status[sl])

    n_jobs = max(1, int(n_jobs))
    if n_jobs == 1 or k < 2 * n_jobs:
        run(slice(0, k))
    else:
        bounds = np.linspace(0, k, n_jobs + 1).astype(int)
        with ThreadPoolExecutor(n_jobs) as pool:
            list(pool.map(run, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]))
    return params, rss, status


def _nelder_mead(spec, design, ybar, wss, x0, opts):
    lo, hi = param_bounds(spec, design, opts)
    w = design.counts.astype(float)
    fam, scal = spec.family.code, _scal(spec)
    buf = np.empty((1, design.m))

    def objective(x):
        _kernels.model_values(fam, scal, x[None, :], design.times, buf)
        val = wss + np.sum(w * (ybar - buf[0]) ** 2)
        return val if np.isfinite(val) else np.inf

    res = optimize.minimize(objective, np.clip(x0, lo, hi), method="Nelder-Mead",
                            bounds=list(zip(lo, hi)),
                            options={"maxiter": 20 * opts.max_iter, "xatol": 1e-10, "fatol": 1e-14})
    return res.x, float(res.fun), bool(res.success)


def fit_ols(data: Dataset, spec: ModelSpec, opts: FitOptions | None = None, init=None) -> FitResult:
    """Least-squares fit of ``spec`` to ``data`` from a grid of starts.

    Each start fixes the shape parameters from a small grid and solves for
    ``(a, b)`` by weighted linear regression; every start is then refined by
    Levenberg-Marquardt and the lowest RSS wins.  ``init`` adds one more start.
    When no start converges a bounded Nelder-Mead search is tried before
    giving up with :class:`NonConvergenceError`.
    """
    opts = opts or FitOptions()
    design = data.design
    spec = spec.resolved(design.times)
    _check_design(spec, design)
    ybar = data.group_means()
    wss = data.within_ss()

    starts = []
    for p, q in _shape_grid(spec, design):
        a, b = _linear_start(spec, design, ybar, p, q)
        starts.append([a, b, p, q])
    if opts.max_starts is not None:
        starts = starts[: max(1, opts.max_starts)]
    if init is not None:
        starts.insert(0, list(np.asarray(init, dtype=float)))
    starts = np.array(starts)

    params, rss, status = refit_batch(spec, design, np.tile(ybar, (len(starts), 1)),
                                      np.full(len(starts), wss), starts, opts)
    ok = (status == _kernels.CONVERGED) & np.isfinite(rss)
    method = "lm"
    if ok.any():
        idx = np.flatnonzero(ok)
        best = idx[np.argmin(rss[idx])]
        theta, best_rss = params[best], float(rss[best])
    else:
        if not opts.fallback:
            raise NonConvergenceError(f"none of {len(starts)} starts converged for {spec.name}")
        finite = np.flatnonzero(np.isfinite(rss))
        x0 = params[finite[np.argmin(rss[finite])]] if finite.size else starts[0]
        theta, best_rss, success = _nelder_mead(spec, design, ybar, wss, x0, opts)
        if not (success and np.isfinite(best_rss)):
            raise NonConvergenceError(f"none of {len(starts)} starts converged for {spec.name}")
        method = "nelder-mead"

    n, r = design.n, spec.param_count
    degenerate = bool(np.ptp(data.y) == 0)
    if degenerate:
        warnings.warn("all responses are equal; residual variance is zero", DegenerateDataWarning,
                      stacklevel=2)
    best_rss = max(best_rss, 0.0)
    return FitResult(
        spec=spec,
        theta=np.array(theta, dtype=float),
        sigma2=best_rss / (n - r),
        rss=best_rss,
        aic=aic(best_rss, n, r) if best_rss > 0 else -math.inf,
        n=n,
        converged=True,
        n_starts_used=len(starts),
        degenerate=degenerate,
        method=method,
    )


@dataclass
class CandidateFits:
    """Outcome of fitting several candidate models to one dataset.

    ``fits[i]`` is ``None`` when ``specs[i]`` failed; the exception is kept in
    ``errors[i]``.
    """

    specs: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def best(self) -> FitResult:
        best = None
        for f in self.fits:
            if f is not None and (best is None or f.aic < best.aic):
                best = f
        if best is None:
            raise next(e for e in reversed(self.errors) if e is not None)
        return best

    def aics(self) -> dict[str, float | None]:
        return {s.name: (None if f is None else f.aic) for s, f in zip(self.specs, self.fits)}


def fit_candidates(data: Dataset, candidates, opts: FitOptions | None = None) -> CandidateFits:
    out = CandidateFits()
    for spec in candidates:
        out.specs.append(spec)
        try:
            out.fits.append(fit_ols(data, spec, opts))
            out.errors.append(None)
        except (NumericalError, DomainError) as exc:
            out.fits.append(None)
            out.errors.append(exc)
    return out


def select_model(data: Dataset, candidates, opts: FitOptions | None = None) -> FitResult:
    """Fit every candidate and return the one with the smallest AIC.

    Ties go to the earlier candidate.  Fit errors only propagate when every
    candidate fails.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate model")
    return fit_candidates(data, candidates, opts).best
