"""Time-response model families and their analytic first derivatives.

Two families are built in, both linear in the baseline ``a`` and the change
``b``::

    4pLL:  f(t) = a + b * t**h / (c**h + t**h)
    beta:  f(t) = a + b * B * (t/scal)**d1 * (1 - t/scal)**d2
           B = (d1 + d2)**(d1 + d2) / (d1**d1 * d2**d2)

``scal`` is a fixed constant of the beta family (not estimated); it must
exceed every time point the model is evaluated on.

Parameter vectors are plain length-4 float arrays ordered ``(a, b, c, h)``
or ``(a, b, d1, d2)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import DomainError, InvalidParameterError, SingularityError

#: Shape/slope parameters above this are rejected to keep t**h finite.
MAX_SHAPE = 150.0

#: Default ratio scal / t_m when the beta scaling constant is not given.
SCAL_FACTOR = 1.2


class Family(str, enum.Enum):
    FOURPLL = "4pll"
    BETA = "beta"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"4pll": cls.FOURPLL, "sigemax": cls.FOURPLL, "emax": cls.FOURPLL,
                   "fourpll": cls.FOURPLL, "beta": cls.BETA}
        try:
            return aliases[key]
        except KeyError:
            raise InvalidParameterError(f"unknown model family {value!r}; expected '4pll' or 'beta'") from None

    @property
    def code(self) -> int:
        return 0 if self is Family.FOURPLL else 1

    @property
    def param_names(self) -> tuple[str, ...]:
        if self is Family.FOURPLL:
            return ("a", "b", "c", "h")
        return ("a", "b", "delta1", "delta2")


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus its fixed constants.

    ``scal`` is only meaningful for the beta family; ``None`` means "derive
    from the data" (see :func:`default_scal`) and must be resolved before
    evaluation.
    """

    family: Family
    scal: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if self.family is Family.FOURPLL:
            object.__setattr__(self, "scal", None)
        elif self.scal is not None:
            if not np.isfinite(self.scal) or self.scal <= 0:
                raise InvalidParameterError(f"scal must be positive, got {self.scal}")
            object.__setattr__(self, "scal", float(self.scal))

    @property
    def param_count(self) -> int:
        return 4

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.family.param_names

    @property
    def name(self) -> str:
        return self.family.value

    def resolved(self, times) -> "ModelSpec":
        """Return a copy with ``scal`` filled in from ``times`` if missing."""
        if self.family is Family.BETA and self.scal is None:
            return ModelSpec(self.family, default_scal(times))
        return self

    def describe(self) -> dict:
        return {"family": self.family.value, "scal": self.scal}


def fourpll() -> ModelSpec:
    return ModelSpec(Family.FOURPLL)


def beta(scal: float | None = None) -> ModelSpec:
    return ModelSpec(Family.BETA, scal)


def default_scal(design) -> float:
    """Beta scaling constant used when none is supplied: ``1.2 * t_m``."""
    times = getattr(design, "times", design)
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DomainError("cannot derive scal from an empty design")
    return SCAL_FACTOR * float(np.max(times))


def beta_constant(d1: float, d2: float) -> float:
    """Normalising constant B_delta, which makes the beta curve peak at ``a + b``."""
    s = d1 + d2
    return float(np.exp(s * np.log(s) - d1 * np.log(d1) - d2 * np.log(d2)))


def validate_params(spec: ModelSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (4,):
        raise InvalidParameterError(f"expected 4 parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InvalidParameterError(f"non-finite parameters {theta}")
    names = spec.param_names
    for i in (2, 3):
        if theta[i] <= 0:
            raise InvalidParameterError(f"{names[i]} must be positive, got {theta[i]}")
    shape_idx = (3,) if spec.family is Family.FOURPLL else (2, 3)
    for i in shape_idx:
        if theta[i] > MAX_SHAPE:
            raise InvalidParameterError(f"{names[i]}={theta[i]} exceeds {MAX_SHAPE}")
    if spec.family is Family.BETA and spec.scal is None:
        raise InvalidParameterError("beta model needs a resolved scal")
    return theta


def _check_times(spec: ModelSpec, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)):
        raise DomainError("time points must be finite")
    if np.any(t < 0):
        raise DomainError("time points must be non-negative")
    if spec.family is Family.BETA and np.any(t >= spec.scal):
        raise DomainError(f"beta model is only defined for t < scal={spec.scal}")
    return t


def _logistic_arg(t, c, h):
    with np.errstate(divide="ignore"):
        return h * (np.log(c) - np.log(t))


def _logistic_part(t, c, h):
    # t**h / (c**h + t**h) written as 1 / (1 + exp(h*(log c - log t)))
    return expit(-_logistic_arg(t, c, h))


def _beta_part(t, d1, d2, scal):
    u = t / scal
    with np.errstate(divide="ignore"):
        log_g = (np.log(beta_constant(d1, d2)) + d1 * np.log(u) + d2 * np.log1p(-u))
    return np.exp(log_g)


def eval_model(spec: ModelSpec, theta, t):
    """Evaluate ``f(t, theta)``; scalar in, scalar out."""
    theta = validate_params(spec, theta)
    t = _check_times(spec, t)
    a, b, p, q = theta
    if spec.family is Family.FOURPLL:
        g = _logistic_part(t, p, q)
    else:
        g = _beta_part(t, p, q, spec.scal)
    out = a + b * g
    return float(out) if out.ndim == 0 else out


def is_singular_at_zero(spec: ModelSpec, theta) -> bool:
    """True when ``f'`` is unbounded as t -> 0 (4pLL h < 1, beta delta1 < 1)."""
    shape = theta[3] if spec.family is Family.FOURPLL else theta[2]
    return bool(shape < 1.0)


def eval_derivative(spec: ModelSpec, theta, t):
    """Analytic ``df/dt``.

    Raises :class:`SingularityError` when asked for t = 0 on a curve whose
    derivative is unbounded there.
    """
    theta = validate_params(spec, theta)
    t = _check_times(spec, t)
    a, b, p, q = theta
    if np.any(t == 0) and is_singular_at_zero(spec, theta):
        raise SingularityError("derivative is unbounded at t=0 for these parameters")
    if spec.family is Family.FOURPLL:
        c, h = p, q
        x = _logistic_arg(t, c, h)
        # g * (1 - g) without cancellation in either tail
        with np.errstate(divide="ignore", invalid="ignore"):
            out = b * h * expit(-x) * expit(x) / t
        # limit at t = 0: b/c when h == 1, otherwise 0
        out = np.where(t == 0, b / c if h == 1 else 0.0, out)
    else:
        d1, d2 = p, q
        s = spec.scal
        bd = beta_constant(d1, d2)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (b * bd * t ** (d1 - 1.0) * (1.0 - t / s) ** (d2 - 1.0)
                   * (d1 * s - (d1 + d2) * t) / s ** (d1 + 1.0))
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def eval_abs_derivative(spec: ModelSpec, theta, t):
    return np.abs(eval_derivative(spec, theta, t))


def beta_mode(spec: ModelSpec, theta) -> float:
    """Location of the beta curve's extremum, ``scal * d1 / (d1 + d2)``."""
    d1, d2 = theta[2], theta[3]
    return spec.scal * d1 / (d1 + d2)
