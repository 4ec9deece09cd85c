"""Test decision and periods of significant change from a confidence band."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bootstrap import ConfidenceBand
from .exceptions import InvalidParameterError
from .fitting import FitResult


@dataclass(frozen=True)
class Threshold:
    """Relevance threshold on |f'| in response units per time unit."""

    value: float
    label: str = ""

    def __post_init__(self):
        if not self.value >= 0:
            raise InvalidParameterError(f"threshold must be non-negative, got {self.value}")

    def __float__(self):
        return float(self.value)


def default_lambda(duration: float, fold: float = 1.5, fraction: float = 1.0) -> Threshold:
    """Slope of a line gaining ``log2(fold)`` over ``fraction * duration``.

    ``default_lambda(45)`` is the 1.5-fold change over a 45 week study,
    ``log2(1.5) / 45 = 0.013007``.
    """
    if not duration > 0:
        raise InvalidParameterError("duration must be positive")
    if not fold >= 1:
        raise InvalidParameterError("fold must be at least 1")
    if not 0 < fraction <= 1:
        raise InvalidParameterError("fraction must lie in (0, 1]")
    value = math.log2(fold) / (fraction * duration)
    return Threshold(value, f"log2({fold:g})/{fraction * duration:g}")


@dataclass(frozen=True)
class Region:
    """One coherent period ``[start, end]`` where the band exceeds the threshold.

    ``first``/``last`` index the band grid points inside the period.
    """

    start: float
    end: float
    t_max: float
    first: int
    last: int

    @property
    def width(self) -> float:
        return self.end - self.start

    def time_point(self, kind: str) -> float:
        return {"start": self.start, "end": self.end, "max": self.t_max}[kind]


TIME_POINT_KINDS = ("start", "end", "max")


@dataclass(frozen=True)
class ChangeReport:
    lam: float
    regions: tuple[Region, ...] = ()

    @property
    def reject_h0(self) -> bool:
        return len(self.regions) > 0

    @property
    def n_subsets(self) -> int:
        return len(self.regions)

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for reg in self.regions:
            out |= (t >= reg.start) & (t <= reg.end)
        return out


def test_h0(band: ConfidenceBand, lam: float) -> bool:
    """Reject "no relevant change" iff the band exceeds ``lam`` somewhere."""
    return bool(np.any(band.lower > float(lam)))


test_h0.__test__ = False  # not a pytest test


def find_regions(grid, lower, lam: float, t_first: float, t_last: float) -> tuple[Region, ...]:
    """Maximal runs of grid points with ``lower > lam``.

    Interior endpoints are refined by linear interpolation of ``lower - lam``
    between the bracketing grid points; runs touching the grid ends are
    reported as starting at ``t_first`` / ending at ``t_last``.
    """
    grid = np.asarray(grid, dtype=float)
    d = np.asarray(lower, dtype=float) - float(lam)
    above = d > 0
    if not above.any():
        return ()
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    firsts = np.flatnonzero(edges == 1)
    lasts = np.flatnonzero(edges == -1) - 1
    last_idx = grid.size - 1
    out = []
    for i, j in zip(firsts, lasts):
        if i == 0:
            start = t_first
        else:
            start = _crossing(grid[i - 1], grid[i], d[i - 1], d[i])
        if j == last_idx:
            end = t_last
        else:
            end = _crossing(grid[j], grid[j + 1], d[j], d[j + 1])
        k = i + int(np.argmax(d[i:j + 1]))  # argmax returns the earliest tie
        out.append(Region(float(max(start, t_first)), float(min(end, t_last)),
                          float(grid[k]), int(i), int(j)))
    return tuple(out)


def _crossing(t0, t1, d0, d1):
    if d1 == d0:
        return float(t0)
    return float(t0 + (t1 - t0) * (-d0) / (d1 - d0))


def extract_regions(band: ConfidenceBand, lam: float) -> ChangeReport:
    lam = float(lam)
    return ChangeReport(lam, find_regions(band.grid, band.lower, lam, band.t_first, band.t_last))


@dataclass(frozen=True)
class ChangeSummary:
    subset: int
    start: float
    end: float
    change: float
    fraction: float


def change_summary(fit: FitResult, report: ChangeReport) -> list[ChangeSummary]:
    """Absolute model change across each period and its share of ``|b|``."""
    out = []
    scale = abs(float(fit.theta[1]))
    for j, reg in enumerate(report.regions):
        change = abs(float(fit.predict(reg.end)) - float(fit.predict(reg.start)))
        frac = change / scale if scale > 0 else math.nan
        out.append(ChangeSummary(j, reg.start, reg.end, change, frac))
    return out
