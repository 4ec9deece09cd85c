"""scikit-learn style wrappers around the fitting and detection core.

``X`` is a single column of observation times (shape ``(n,)`` or ``(n, 1)``)
and ``y`` the matching responses; replicates are rows with equal times.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bootstrap import BootstrapConfig, lower_band
from .ci import time_point_cis
from .detection import change_summary, default_lambda, extract_regions
from .exceptions import InvalidParameterError
from .fitting import Dataset, FitOptions, fit_candidates
from .models import Family, beta, fourpll

MODEL_CHOICES = ("4pll", "beta", "auto")


def candidate_specs(model: str = "auto", scal: float | None = None) -> list:
    """Model specs to try for a ``--model`` style choice."""
    model = str(model).lower()
    if model == "auto":
        return [fourpll(), beta(scal)]
    fam = Family.parse(model)
    return [fourpll()] if fam is Family.FOURPLL else [beta(scal)]


def check_times(X) -> np.ndarray:
    """Validate a column of times and return it as a 1-d float array."""
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single column of times, got {X.shape[1]} columns")
        X = X[:, 0]
    return X


def check_times_response(X, y) -> Dataset:
    X, y = check_X_y(np.asarray(X, dtype=float).reshape(len(X), -1), y, dtype=float,
                     y_numeric=True)
    if X.shape[1] != 1:
        raise ValueError(f"expected a single column of times, got {X.shape[1]} columns")
    return Dataset.from_long(X[:, 0], y)


class TimeResponseRegressor(RegressorMixin, BaseEstimator):
    """Least-squares 4pLL or beta time-response curve.

    Parameters
    ----------
    model : {"4pll", "beta", "auto"}
        Model family; ``"auto"`` fits both and keeps the smaller AIC.
    scal : float, optional
        Beta scaling constant; defaults to 1.2 times the last time point.
    hill_max, delta_max : float
        Upper bounds on the 4pLL slope and the beta shape parameters.
    tol, max_iter : float, int
        Optimizer settings.

    Attributes
    ----------
    fit_ : FitResult
    coef_ : ndarray of shape (4,)
    sigma_ : float
    aic_ : dict
        AIC per candidate (``None`` for failed candidates).
    """

    def __init__(self, model="auto", scal=None, hill_max=10.0, delta_max=4.0,
                 tol=1e-10, max_iter=500):
        self.model = model
        self.scal = scal
        self.hill_max = hill_max
        self.delta_max = delta_max
        self.tol = tol
        self.max_iter = max_iter

    def _fit_options(self):
        return FitOptions(tol=self.tol, max_iter=self.max_iter,
                          hill_max=self.hill_max, delta_max=self.delta_max)

    def _validate_model(self):
        if str(self.model).lower() not in MODEL_CHOICES:
            raise InvalidParameterError(f"model must be one of {MODEL_CHOICES}, got {self.model!r}")

    def fit(self, X, y):
        self._validate_model()
        data = check_times_response(X, y)
        cands = fit_candidates(data, candidate_specs(self.model, self.scal), self._fit_options())
        self.fit_ = cands.best
        self.aic_ = cands.aics()
        self.coef_ = self.fit_.theta.copy()
        self.sigma_ = self.fit_.sigma
        self.model_ = self.fit_.spec.name
        self.data_ = data
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.predict(check_times(X))

    def derivative(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.derivative(check_times(X))


class ChangeFrameDetector(TimeResponseRegressor):
    """Periods where the time-response curve changes faster than a threshold.

    Fits the curve, builds a lower simultaneous confidence band for ``|f'|``
    with the two-level parametric bootstrap and keeps the times where the
    band exceeds the threshold.

    Parameters
    ----------
    lam : float, optional
        Absolute threshold on ``|f'|``; overrides ``fold``/``fraction``.
    fold, fraction : float
        Threshold ``log2(fold) / (fraction * duration)`` when ``lam`` is None.
    alpha : float
        Band level is ``1 - alpha``.
    n_boot1, n_boot2 : int
        First and second level bootstrap sizes.
    n_boot3 : int
        Outer bootstrap size for time point intervals; 0 skips them.
    grid_step : float
        Spacing of the band grid.
    seed : int
        Master seed.
    n_jobs : int
        Threads used for bootstrap refits.

    Attributes
    ----------
    band_ : ConfidenceBand
    report_ : ChangeReport
    regions_ : list of (start, end) tuples
    lambda_ : float
    summary_ : list of ChangeSummary
    cis_ : list of TimePointCI or None
    """

    def __init__(self, model="auto", scal=None, lam=None, fold=1.5, fraction=1.0,
                 alpha=0.05, n_boot1=500, n_boot2=25, n_boot3=0, grid_step=0.1, seed=0,
                 n_jobs=1, hill_max=10.0, delta_max=4.0, tol=1e-10, max_iter=500):
        super().__init__(model=model, scal=scal, hill_max=hill_max, delta_max=delta_max,
                         tol=tol, max_iter=max_iter)
        self.lam = lam
        self.fold = fold
        self.fraction = fraction
        self.alpha = alpha
        self.n_boot1 = n_boot1
        self.n_boot2 = n_boot2
        self.n_boot3 = n_boot3
        self.grid_step = grid_step
        self.seed = seed
        self.n_jobs = n_jobs

    def bootstrap_config(self) -> BootstrapConfig:
        return BootstrapConfig(b1=self.n_boot1, b2=self.n_boot2, alpha=self.alpha, seed=self.seed,
                               grid_step=self.grid_step, n_jobs=self.n_jobs,
                               fit_options=self._fit_options())

    def fit(self, X, y):
        super().fit(X, y)
        design = self.data_.design
        if self.lam is None:
            self.lambda_ = default_lambda(design.duration, self.fold, self.fraction).value
        else:
            self.lambda_ = float(self.lam)
            if self.lambda_ < 0:
                raise InvalidParameterError("lam must be non-negative")
        cfg = self.bootstrap_config()
        self.band_ = lower_band(self.data_, self.fit_, cfg)
        self.report_ = extract_regions(self.band_, self.lambda_)
        self.regions_ = [(r.start, r.end) for r in self.report_.regions]
        self.summary_ = change_summary(self.fit_, self.report_)
        self.cis_ = None
        if self.n_boot3 and self.report_.reject_h0:
            self.cis_ = time_point_cis(self.data_, self.fit_, self.report_, cfg, b3=self.n_boot3)
        return self

    def predict(self, X):
        """True where a time lies inside a detected change period."""
        check_is_fitted(self, "report_")
        return self.report_.contains(check_times(X))

    def decision_function(self, X):
        """Band minus threshold, linearly interpolated on the band grid."""
        check_is_fitted(self, "band_")
        t = check_times(X)
        return np.interp(t, self.band_.grid, self.band_.lower) - self.lambda_

    def curve(self, X):
        """Fitted response curve (``predict`` returns period membership here)."""
        return TimeResponseRegressor.predict(self, X)

    def score(self, X, y, sample_weight=None):
        from sklearn.metrics import r2_score
        return r2_score(y, self.curve(X), sample_weight=sample_weight)
