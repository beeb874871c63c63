"""Regularized incomplete beta function.

Modified Lentz evaluation of the continued fraction with the usual symmetry
switch at x > (a+1)/(a+b+2).  For large shape parameters the prefactor
x^a (1-x)^b / B(a, b) is assembled from Stirling-corrected pieces so that
no large log-gamma values are subtracted from each other.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .errors import ParameterError

_EPS = 1e-16
_FPMIN = 1e-300
_MAXIT = 20000
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@numba.njit(cache=True)
def _stirling_corr(z):
    # lgamma(z) - [(z-0.5) ln z - z + 0.5 ln 2pi], valid for z >= 10
    z2 = 1.0 / (z * z)
    return (1.0 / 12.0 - z2 * (1.0 / 360.0 - z2 * (1.0 / 1260.0 - z2 * (1.0 / 1680.0 - z2 / 1188.0)))) / z


@numba.njit(cache=True)
def _log_prefactor(a, b, x):
    """log of x^a (1-x)^b / B(a, b)."""
    if a >= 10.0 and b >= 10.0:
        s = a + b
        t1 = a * math.log1p((x * b - (1.0 - x) * a) / a)
        t2 = b * math.log1p(((1.0 - x) * a - x * b) / b)
        corr = _stirling_corr(a) + _stirling_corr(b) - _stirling_corr(s)
        return t1 + t2 + 0.5 * (math.log(a) + math.log(b) - math.log(s)) - _LOG_SQRT_2PI - corr
    if a >= 10.0 or b >= 10.0:
        big, small = (a, b) if a >= b else (b, a)
        s = a + b
        # lgamma(s) - lgamma(big) without cancellation
        dlg = ((big - 0.5) * math.log1p(small / big) + small * math.log(s) - small
               + _stirling_corr(s) - _stirling_corr(big))
        return dlg - math.lgamma(small) + a * math.log(x) + b * math.log1p(-x)
    return (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
            + a * math.log(x) + b * math.log1p(-x))


@numba.njit(cache=True)
def _betacf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


@numba.njit(cache=True)
def betainc_scalar(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(_log_prefactor(a, b, x)) * _betacf(a, b, x) / a
    return 1.0 - math.exp(_log_prefactor(b, a, 1.0 - x)) * _betacf(b, a, 1.0 - x) / b


@numba.njit(cache=True, parallel=True)
def _betainc_matrix(a, b, p):
    out = np.empty((a.size, p.size))
    for k in numba.prange(a.size):
        for j in range(p.size):
            out[k, j] = betainc_scalar(a[k], b[k], p[j])
    return out


@numba.njit(cache=True)
def _betainc_vector(a, b, p):
    out = np.empty(p.size)
    for j in range(p.size):
        out[j] = betainc_scalar(a, b, p[j])
    return out


def _check_shape(a, b):
    if not (np.all(np.asarray(a) > 0) and np.all(np.asarray(b) > 0)):
        raise ParameterError("Beta shape parameters must be positive")


def beta_cdf(a: float, b: float, p):
    """Beta(a, b) CDF, I_p(a, b); scalar in, scalar out, arrays broadcast over p."""
    _check_shape(a, b)
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ParameterError("p must lie in [0, 1]")
    out = _betainc_vector(float(a), float(b), np.ascontiguousarray(p_arr.ravel()))
    if p_arr.ndim == 0:
        return float(out[0])
    return out.reshape(p_arr.shape)


def beta_cdf_matrix(a, b, p) -> np.ndarray:
    """Row k holds the Beta(a[k], b[k]) CDF evaluated on the probability vector p."""
    a = np.ascontiguousarray(a, dtype=float).ravel()
    b = np.ascontiguousarray(b, dtype=float).ravel()
    _check_shape(a, b)
    p = np.ascontiguousarray(p, dtype=float).ravel()
    return _betainc_matrix(a, b, p)
