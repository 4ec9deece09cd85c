import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from changeframe import ChangeFrameDetector, TimeResponseRegressor
from changeframe.bootstrap import rng_stream, simulate_dataset
from changeframe.exceptions import DataError, InvalidParameterError
from changeframe.fitting import TimeDesign
from changeframe.models import fourpll

S2 = (8.791, -0.946, 17.589, 10.0)


@pytest.fixture(scope="module")
def xy():
    data = simulate_dataset(fourpll(), S2, 0.15, TimeDesign.reference(), rng_stream(7))
    return data.t.reshape(-1, 1), data.y


@pytest.fixture(scope="module")
def detector(xy):
    return ChangeFrameDetector(model="4pll", n_boot1=60, n_boot2=6, seed=3).fit(*xy)


def test_params_round_trip():
    est = ChangeFrameDetector(lam=0.02, n_boot1=80)
    params = est.get_params()
    assert params["lam"] == 0.02 and params["n_boot1"] == 80
    copy = clone(est)
    assert copy.get_params() == params
    copy.set_params(alpha=0.1)
    assert copy.alpha == 0.1 and est.alpha == 0.05


def test_not_fitted():
    with pytest.raises(NotFittedError):
        TimeResponseRegressor().predict([[1.0]])
    with pytest.raises(NotFittedError):
        ChangeFrameDetector().decision_function([[1.0]])


def test_regressor(xy):
    reg = TimeResponseRegressor(model="4pll").fit(*xy)
    assert reg.model_ == "4pll"
    assert reg.coef_.shape == (4,)
    assert reg.predict(xy[0]).shape == (47,)
    assert reg.score(*xy) > 0.8
    assert np.all(np.isfinite(reg.derivative([[5.0], [20.0]])))
    assert set(reg.aic_) == {"4pll"}


def test_input_checks(xy):
    with pytest.raises((DataError, ValueError)):
        TimeResponseRegressor().fit(xy[0][:5], xy[1])
    with pytest.raises((InvalidParameterError, ValueError)):
        TimeResponseRegressor(model="spline").fit(*xy)
    with pytest.raises((DataError, ValueError)):
        TimeResponseRegressor().fit(np.ones((47, 2)), xy[1])


def test_membership_matches_decision_function(detector):
    t = detector.band_.grid
    inside = detector.predict(t.reshape(-1, 1))
    score = detector.decision_function(t.reshape(-1, 1))
    np.testing.assert_array_equal(inside[score > 0], True)
    assert detector.regions_ and inside.any()


def test_detector_attributes(detector, xy):
    assert detector.lambda_ == pytest.approx(np.log2(1.5) / 45)
    assert detector.cis_ is None
    assert len(detector.summary_) == len(detector.regions_)
    np.testing.assert_allclose(detector.curve(xy[0]),
                               TimeResponseRegressor(model="4pll").fit(*xy).predict(xy[0]))


def test_detector_is_deterministic(detector, xy):
    again = clone(detector).fit(*xy)
    np.testing.assert_array_equal(again.band_.lower, detector.band_.lower)


def test_explicit_threshold(xy):
    det = ChangeFrameDetector(model="4pll", lam=100.0, n_boot1=60, n_boot2=6).fit(*xy)
    assert det.regions_ == [] and not det.predict(xy[0]).any()
    with pytest.raises(InvalidParameterError):
        ChangeFrameDetector(model="4pll", lam=-1.0, n_boot1=60, n_boot2=6).fit(*xy)
