"""Parametric structural duration families.

A structural model assigns to every treatment time ``z`` (``z = inf`` means
never treated) a duration distribution through its hazard ``lambda(z, t)``.
Both families here share one pre-treatment distribution for ``t < z`` and one
post-treatment distribution for ``t >= z``, glued so the cumulative hazard
``Lambda(z, .)`` is continuous and strictly increasing.  The quantile maps

* ``phi0(u)``   -- inverse of ``Lambda(inf, .)`` (never-treated branch),
* ``phi1(z, u)`` -- inverse of ``Lambda(z, .)`` on the treated branch,

satisfy the splice identity ``phi1(z, phi0_inverse(z)) = z``.

Weibull family: parameters ``(theta00, theta10, theta01, theta11)`` are
pre/post scale and pre/post shape, all positive, with

    lambda(z, t) = theta00*theta01*t**(theta01-1)           for t <  z
    lambda(z, t) = theta10*theta11*t**(theta11-1)           for t >= z

Note the post-treatment coefficient is ``theta10*theta11``: it is the only
choice for which the displayed ``phi1`` below is the exact inverse of the
cumulative hazard (differentiating ``theta00*z**theta01 +
theta10*(t**theta11 - z**theta11)`` in ``t`` forces it).

Log-normal family: ``theta00, theta10`` are pre/post log-means (any real),
``theta01, theta11`` pre/post log-standard-deviations (positive); each branch
hazard is the log-normal hazard with those parameters.

All functions broadcast over numpy arrays and accept ``z = inf`` as a
first-class never-treated sentinel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtri, ndtri_exp

__all__ = [
    "ModelFamily",
    "ModelParams",
    "check_params",
    "phi0",
    "phi1",
    "phi1_or_nan",
    "phi",
    "hazard",
    "cumhaz",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LN2 = math.log(2.0)


class ModelFamily(enum.Enum):
    WEIBULL = "weibull"
    LOGNORMAL = "lognormal"

    @classmethod
    def parse(cls, name: str) -> "ModelFamily":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown model family {name!r}; expected 'weibull' or 'lognormal'"
            ) from None


@dataclass(frozen=True)
class ModelParams:
    """Structural parameter vector (theta00, theta10, theta01, theta11)."""

    theta00: float
    theta10: float
    theta01: float
    theta11: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.theta00, self.theta10, self.theta01, self.theta11], dtype=float
        )

    @classmethod
    def from_array(cls, arr) -> "ModelParams":
        a = np.asarray(arr, dtype=float).reshape(-1)
        if a.size != 4:
            raise ValueError(f"expected 4 parameters, got {a.size}")
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def check_params(family: ModelFamily, theta: ModelParams) -> None:
    """Raise ValueError unless theta satisfies the family's constraints."""
    a = theta.as_array()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite parameters: {theta}")
    if family is ModelFamily.WEIBULL:
        if np.any(a <= 0.0):
            raise ValueError(f"Weibull parameters must all be positive: {theta}")
    else:
        if theta.theta01 <= 0.0 or theta.theta11 <= 0.0:
            raise ValueError(
                f"log-normal scale parameters must be positive: {theta}"
            )


def _exp_quantile(u):
    """Phi^{-1}(1 - exp(-u)) evaluated without cancellation.

    For exp(-u) <= 1/2 this is -Phi^{-1}(exp(-u)) through the complementary
    quantile (ndtri_exp works in log space, so u > 700 is fine); otherwise
    the direct argument -expm1(-u) is itself small and accurate.
    """
    u = np.asarray(u, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = ndtri(-np.expm1(-u))
        tail = -ndtri_exp(np.where(u > 0, -u, -np.inf))
    return np.where(u < _LN2, direct, tail)


def _as_float_or_array(x, scalar: bool):
    return float(x) if scalar else x


def _log_sf_normal(x):
    """log of the standard normal survival function, log Phi(-x)."""
    return log_ndtr(-np.asarray(x, dtype=float))


def phi0(family: ModelFamily, theta: ModelParams, u):
    """Never-treated quantile map: the time t with cumhaz(inf, t) = u."""
    check_params(family, theta)
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0.0):
        raise ValueError("u must be nonnegative")
    scalar = np.ndim(u) == 0
    if family is ModelFamily.WEIBULL:
        out = np.power(u_arr / theta.theta00, 1.0 / theta.theta01)
    else:
        with np.errstate(invalid="ignore"):
            out = np.exp(theta.theta00 + theta.theta01 * _exp_quantile(u_arr))
        out = np.where(u_arr == 0.0, 0.0, out)
    return _as_float_or_array(out, scalar)


def _phi1_weibull(theta: ModelParams, z, u):
    base = (u - theta.theta00 * np.power(z, theta.theta01)) / theta.theta10 \
        + np.power(z, theta.theta11)
    with np.errstate(invalid="ignore"):
        out = np.power(base, 1.0 / theta.theta11)
    return np.where(base < 0.0, np.nan, out)


def _phi1_lognormal(theta: ModelParams, z, u):
    # log R_z = log S1(z) - log S0(z); the treated branch is the post
    # distribution's quantile at the shifted exponent v = u - log R_z.
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(z)
        log_r = _log_sf_normal((logz - theta.theta10) / theta.theta11) \
            - _log_sf_normal((logz - theta.theta00) / theta.theta01)
        v = u - log_r
        out = np.exp(theta.theta10 + theta.theta11 * _exp_quantile(v))
        out = np.where(v == 0.0, 0.0, out)
    return np.where(v < 0.0, np.nan, out)


def phi1_or_nan(family: ModelFamily, theta: ModelParams, z, u):
    """Treated-branch quantile map; NaN where the closed form is undefined.

    The closed form inverts the treated cumulative hazard and is defined for
    all u at which the branch value is nonnegative; below that the root /
    normal-quantile argument leaves its domain and NaN is returned instead
    of extrapolating.
    """
    check_params(family, theta)
    z_arr = np.asarray(z, dtype=float)
    u_arr = np.asarray(u, dtype=float)
    if np.any(z_arr < 0.0):
        raise ValueError("z must be nonnegative")
    if family is ModelFamily.WEIBULL:
        return _phi1_weibull(theta, z_arr, u_arr)
    return _phi1_lognormal(theta, z_arr, u_arr)


def phi1(family: ModelFamily, theta: ModelParams, z, u):
    """Treated-branch quantile map; raises where the argument leaves its domain."""
    scalar = np.ndim(z) == 0 and np.ndim(u) == 0
    out = phi1_or_nan(family, theta, z, u)
    if np.any(np.isnan(out)):
        raise ValueError(
            "phi1 undefined: u below the valid treated branch for this (theta, z)"
        )
    return _as_float_or_array(out, scalar)


def phi(family: ModelFamily, theta: ModelParams, z, u):
    """Spliced quantile map: phi0(u) on z > phi0(u), else phi1(z, u)."""
    scalar = np.ndim(z) == 0 and np.ndim(u) == 0
    z_arr = np.asarray(z, dtype=float)
    u_arr = np.asarray(u, dtype=float)
    t0 = np.asarray(phi0(family, theta, u_arr), dtype=float)
    z_b, u_b, t0_b = np.broadcast_arrays(z_arr, u_arr, t0)
    shape = z_b.shape
    z_b = np.atleast_1d(z_b)
    u_b = np.atleast_1d(u_b)
    out = np.atleast_1d(np.array(t0_b, dtype=float, copy=True))
    treated = z_b <= out
    if np.any(treated):
        t1 = phi1_or_nan(family, theta, z_b[treated], u_b[treated])
        # On z <= phi0(u) the treated branch is defined; NaN can only arise
        # from roundoff within one ulp of the splice point, where phi1 = z.
        t1 = np.where(np.isnan(t1), z_b[treated], t1)
        out[treated] = t1
    out = out.reshape(shape)
    return _as_float_or_array(out[()] if out.ndim == 0 else out, scalar)


def hazard(family: ModelFamily, theta: ModelParams, z, t):
    """Structural hazard at time t under treatment time z."""
    check_params(family, theta)
    scalar = np.ndim(z) == 0 and np.ndim(t) == 0
    z_arr = np.asarray(z, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0.0):
        raise ValueError("t must be positive")
    pre = t_arr < z_arr
    if family is ModelFamily.WEIBULL:
        h_pre = theta.theta00 * theta.theta01 * np.power(t_arr, theta.theta01 - 1.0)
        h_post = theta.theta10 * theta.theta11 * np.power(t_arr, theta.theta11 - 1.0)
    else:
        logt = np.log(t_arr)
        x0 = (logt - theta.theta00) / theta.theta01
        x1 = (logt - theta.theta10) / theta.theta11
        h_pre = np.exp(
            -0.5 * x0 * x0 - _LOG_SQRT_2PI
            - np.log(theta.theta01 * t_arr) - _log_sf_normal(x0)
        )
        h_post = np.exp(
            -0.5 * x1 * x1 - _LOG_SQRT_2PI
            - np.log(theta.theta11 * t_arr) - _log_sf_normal(x1)
        )
    out = np.where(pre, h_pre, h_post)
    return _as_float_or_array(out[()] if out.ndim == 0 else out, scalar)


def cumhaz(family: ModelFamily, theta: ModelParams, z, t):
    """Structural cumulative hazard Lambda(z, t), the inverse of phi(z, .)."""
    check_params(family, theta)
    scalar = np.ndim(z) == 0 and np.ndim(t) == 0
    z_arr = np.asarray(z, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("t must be nonnegative")
    pre = t_arr < z_arr
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        if family is ModelFamily.WEIBULL:
            cum_pre = theta.theta00 * np.power(t_arr, theta.theta01)
            cum_post = theta.theta00 * np.power(z_arr, theta.theta01) \
                + theta.theta10 * (np.power(t_arr, theta.theta11)
                                   - np.power(z_arr, theta.theta11))
        else:
            logt = np.log(t_arr)
            logz = np.log(z_arr)
            cum_pre = -_log_sf_normal((logt - theta.theta00) / theta.theta01)
            cum_post = (
                -_log_sf_normal((logz - theta.theta00) / theta.theta01)
                - _log_sf_normal((logt - theta.theta10) / theta.theta11)
                + _log_sf_normal((logz - theta.theta10) / theta.theta11)
            )
        out = np.where(pre, cum_pre, cum_post)
        out = np.where(t_arr == 0.0, 0.0, out)
    return _as_float_or_array(out[()] if out.ndim == 0 else out, scalar)
