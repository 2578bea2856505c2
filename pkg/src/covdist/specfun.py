"""Real dilogarithm and the piecewise Phi2 function."""

from __future__ import annotations

import numpy as np
from scipy.special import bernoulli, factorial

PI2_6 = np.pi**2 / 6.0

# Li2(x) = sum_n B_n u^(n+1) / (n+1)!, u = -log(1 - x); only B_1 and even B_n are nonzero
_BERN = bernoulli(30)
_ORDERS = np.array([0, 1] + list(range(2, 31, 2)))
_COEF = _BERN[_ORDERS] / factorial(_ORDERS + 1)


def _series(x: np.ndarray) -> np.ndarray:
    # |x| <= 1/2 keeps |u| <= log 2, where the terms shrink by (u / 2 pi)^2 per order
    u = -np.log1p(-x)
    u2 = u * u
    out = np.zeros_like(x)
    for c in _COEF[:1:-1]:
        out = out * u2 + c
    return u * (_COEF[0] + u * (_COEF[1] + u * out))


def _li2_le_one_half(x: np.ndarray) -> np.ndarray:
    """Li2 on x in [-1, 1] via the series and the reflection x -> 1 - x."""
    out = np.empty_like(x)
    small = np.abs(x) <= 0.5
    out[small] = _series(x[small])
    big = ~small & (x > 0.5)
    if big.any():
        xb = x[big]
        # Li2(x) + Li2(1-x) = pi^2/6 - log(x) log(1-x)
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(xb < 1.0, np.log(xb) * np.log1p(-xb), 0.0)
        out[big] = PI2_6 - corr - _series(1.0 - xb)
    neg = ~small & (x < -0.5)
    if neg.any():
        xn = x[neg]
        # Landen: Li2(x) = -Li2(x/(x-1)) - log^2(1-x)/2, with x/(x-1) in (1/3, 1/2]
        out[neg] = -_series(xn / (xn - 1.0)) - 0.5 * np.log1p(-xn) ** 2
    return out


def dilog(x):
    """Real dilogarithm Li2(x) = -int_0^x log(1-y)/y dy for x <= 1.

    Parameters
    ----------
    x : float or array_like
        Arguments, all at most 1.

    Returns
    -------
    float or ndarray
        Li2 evaluated elementwise.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa > 1.0) or np.any(np.isnan(xa)):
        raise ValueError("dilog is real only for x <= 1")
    flat = np.atleast_1d(xa).ravel().copy()
    out = np.empty_like(flat)
    inner = flat >= -1.0
    out[inner] = _li2_le_one_half(flat[inner])
    outer = ~inner
    if outer.any():
        xo = flat[outer]
        # inversion: Li2(x) = -pi^2/6 - log^2(-x)/2 - Li2(1/x) for x < -1
        out[outer] = -PI2_6 - 0.5 * np.log(-xo) ** 2 - _li2_le_one_half(1.0 / xo)
    out = out.reshape(xa.shape)
    return float(out) if out.ndim == 0 else out


def phi2(x):
    """Li2(x) below 1, pi^2/3 - log^2(x)/2 - Li2(1/x) from 1 upwards.

    Parameters
    ----------
    x : float or array_like
        Strictly positive arguments.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0.0)):
        raise ValueError("phi2 needs x > 0")
    flat = np.atleast_1d(xa).ravel()
    out = np.empty_like(flat)
    lo = flat < 1.0
    out[lo] = _li2_le_one_half(flat[lo])
    hi = ~lo
    if hi.any():
        xh = flat[hi]
        out[hi] = 2.0 * PI2_6 - 0.5 * np.log(xh) ** 2 - _li2_le_one_half(1.0 / xh)
    out = out.reshape(xa.shape)
    return float(out) if out.ndim == 0 else out
