"""Modified Bessel function of the second kind, K_nu(x), for real nu and x > 0.

K is computed at the reduced order ``mu = nu - round(nu)`` (``|mu| <= 1/2``)
together with K_{mu+1}, by Temme's series for ``x < 2`` and Steed's continued
fraction for ``x >= 2``, then carried up to ``nu`` by the forward recurrence.
The recurrence runs on the ratio K_{k+1}/K_k so the result is available in log
form without overflow. Vectorised over ``x``; ``nu`` is a scalar.

:func:`log_bessel_k` uses ``scipy.special.kve`` where it is finite and
positive and the in-house evaluation only where that overflows or underflows
(large order, small argument).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import kve

from .exceptions import DomainError

_EPS = 1e-16
_MAXIT = 10000
_XSPLIT = 2.0

# 1/Gamma(1+z) = 1 + c1 z + c2 z^2 + ...; odd coefficients c1, c3, c5, c7
_RGAMMA_ODD = (0.5772156649015329, -0.0420026350340952, -0.0421977345555443, 0.0072189432466630)


def _temme_gammas(mu: float):
    """gam1, gam2 and 1/Gamma(1 +- mu) for ``|mu| <= 1/2``."""
    gampl = 1.0 / math.gamma(1.0 + mu)
    gammi = 1.0 / math.gamma(1.0 - mu)
    if abs(mu) < 1e-3:
        mu2 = mu * mu
        c1, c3, c5, c7 = _RGAMMA_ODD
        gam1 = -(c1 + mu2 * (c3 + mu2 * (c5 + mu2 * c7)))
    else:
        gam1 = (gammi - gampl) / (2.0 * mu)
    gam2 = (gammi + gampl) / 2.0
    return gam1, gam2, gampl, gammi


def _k_small(mu: float, x: np.ndarray):
    """K_mu(x) and K_{mu+1}(x) by Temme's series, x < 2."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < _EPS, 1.0, np.sinh(e) / e)
    gam1, gam2, gampl, gammi = _temme_gammas(mu)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    ee = np.exp(e)
    p = 0.5 * ee / gampl
    q = 0.5 / (ee * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    active = np.ones(x.shape, dtype=bool)
    mu2 = mu * mu
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu2)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        delta = c * ff
        total = np.where(active, total + delta, total)
        total1 = np.where(active, total1 + c * (p - i * ff), total1)
        active &= np.abs(delta) >= np.abs(total) * _EPS
        if not active.any():
            break
    return np.log(total), total1 * (2.0 / x) / total


def _k_large(mu: float, x: np.ndarray):
    """log K_mu(x) and K_{mu+1}/K_mu by Steed's continued fraction, x >= 2."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25 - mu * mu
    q = np.full_like(x, a1)
    c = a1
    a = -a1
    s = 1.0 + q * delh
    active = np.ones(x.shape, dtype=bool)
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        dels = q * delh
        h = np.where(active, h + delh, h)
        s = np.where(active, s + dels, s)
        active &= np.abs(dels / s) >= _EPS
        if not active.any():
            break
    h = a1 * h
    log_kmu = 0.5 * np.log(math.pi / (2.0 * x)) - x - np.log(s)
    ratio = (mu + x + 0.5 - h) / x
    return log_kmu, ratio


def log_bessel_k(nu: float, x, method: str = "auto") -> np.ndarray:
    """``log K_nu(x)`` for scalar ``nu >= 0`` and array ``x > 0``.

    ``method="series"`` forces the in-house evaluation everywhere.
    """
    if method == "auto":
        nu_c = float(nu)
        xa = np.asarray(x, dtype=float)
        if nu_c >= 0 and np.isfinite(nu_c) and np.all(xa > 0) and np.all(np.isfinite(xa)):
            with np.errstate(over="ignore", under="ignore"):
                scaled = kve(nu_c, xa)
            ok = np.isfinite(scaled) & (scaled > 1e-290) & (scaled < 1e290)
            out = np.empty(xa.shape)
            out[ok] = np.log(scaled[ok]) - xa[ok]
            if not np.all(ok):
                out[~ok] = log_bessel_k(nu_c, xa[~ok], method="series")
            return out
    elif method != "series":
        raise ValueError(f"unknown method {method!r}")
    nu = float(nu)
    x = np.asarray(x, dtype=float)
    if not nu >= 0 or not np.isfinite(nu):
        raise DomainError(f"order must be a finite nonnegative number, got {nu}")
    if np.any(~(x > 0)) or np.any(~np.isfinite(x)):
        raise DomainError("argument must be positive and finite")
    shape = x.shape
    x = x.ravel()
    nl = int(nu + 0.5)
    mu = nu - nl
    logk = np.empty_like(x)
    ratio = np.empty_like(x)
    small = x < _XSPLIT
    if small.any():
        logk[small], ratio[small] = _k_small(mu, x[small])
    if (~small).any():
        logk[~small], ratio[~small] = _k_large(mu, x[~small])
    # ratio holds K_{mu+k+1}/K_{mu+k}
    for k in range(nl):
        logk += np.log(ratio)
        ratio = 2.0 * (mu + k + 1) / x + 1.0 / ratio
    return logk.reshape(shape)


def bessel_k(nu: float, x):
    """Modified Bessel function of the second kind ``K_nu(x)``.

    Symmetric in the order (K_{-nu} = K_nu). Scalars in, scalar out.
    """
    scalar = np.ndim(x) == 0
    out = np.exp(log_bessel_k(abs(float(nu)), x))
    return float(out) if scalar else out
