"""Measurement-error variance from near-diagonal observation pairs.

Within a subject, two observations taken less than ``h0`` apart share almost
the same latent value, so the average of ``Y_j**2 - Y_j * Y_l`` over such
pairs isolates the noise variance. No mean or covariance estimate is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import SnippetDataset, check_grid, estimate_span
from .exceptions import NoEligiblePairs, NoEligibleSubjects

H0_CONSTANT = 0.29
# fallback keeps at least this fraction of all ordered pairs inside the neighbourhood
MIN_PAIR_FRACTION = 0.1


@dataclass(frozen=True)
class PairStats:
    """Pair averages at bandwidth ``h0``.

    ``a0_hat`` averages ``Y_j**2``, ``a1_hat`` averages ``Y_j * Y_l`` and
    ``b_hat`` is the average indicator, each over ordered pairs closer than
    ``h0``, weighted by ``1 / (m_i (m_i - 1))`` and averaged over subjects.
    """

    a0_hat: float
    a1_hat: float
    b_hat: float
    h0: float
    pair_count: int


@dataclass(frozen=True)
class NoiseVariance:
    sigma0_sq: float
    h0_used: float
    fallback_triggered: bool
    stats: Optional[PairStats] = None
    h0_rule: Optional[float] = None
    ridged: bool = False


def _pair_arrays(ds: SnippetDataset):
    pairs = ds.pairs
    if pairs.n_eligible == 0:
        raise NoEligibleSubjects("no subject has at least two observations")
    t, y = ds.times, ds.values
    gap = np.abs(t[pairs.first] - t[pairs.second])
    return pairs, gap, y[pairs.first], y[pairs.second]


def pair_stats(ds: SnippetDataset, h0: float) -> PairStats:
    if not h0 > 0:
        raise ValueError(f"h0 must be positive, got {h0}")
    pairs, gap, yj, yl = _pair_arrays(ds)
    near = gap < h0
    w = pairs.weight * near
    n = pairs.n_eligible
    # per-subject count / (m (m - 1)) rounds to at most 1, so b_hat <= 1 exactly
    _, sid = np.unique(pairs.subject, return_inverse=True)
    frac = np.bincount(sid, weights=near.astype(float)) / np.bincount(sid)
    return PairStats(
        a0_hat=float(np.sum(w * yj * yj) / n),
        a1_hat=float(np.sum(w * yj * yl) / n),
        b_hat=float(np.sum(frac) / n),
        h0=float(h0),
        pair_count=int(np.count_nonzero(near)),
    )


def h0_rule(n: int, m_mean: float, delta_hat: float, varsigma_norm: float, constant: float = H0_CONSTANT) -> float:
    """``constant * delta_hat * varsigma_norm * (n * m_mean**2) ** (-1/5)``."""
    return constant * delta_hat * varsigma_norm * (n * m_mean**2) ** (-0.2)


def _fallback_h0(ds: SnippetDataset, h0: float):
    """Apply the minimum-neighbourhood-size rule; returns ``(h0, triggered)``."""
    pairs = ds.pairs
    if pairs.n_eligible == 0:
        raise NoEligiblePairs("no subject has at least two observations")
    gaps = np.sort(np.abs(ds.times[pairs.first] - ds.times[pairs.second]))
    need = max(1, math.ceil(MIN_PAIR_FRACTION * gaps.size))
    if np.count_nonzero(gaps < h0) >= need:
        return float(h0), False
    # smallest h0 with `need` gaps strictly below it
    return float(np.nextafter(gaps[need - 1], np.inf)), True


def empirical_h0(ds: SnippetDataset, varsigma_norm: float, delta_hat: float, constant: float = H0_CONSTANT) -> float:
    """Rule-of-thumb ``h0`` with the sparse-neighbourhood fallback applied."""
    return _empirical_h0(ds, varsigma_norm, delta_hat, constant)[0]


def _empirical_h0(ds, varsigma_norm, delta_hat, constant=H0_CONSTANT):
    if not varsigma_norm > 0 or not delta_hat > 0:
        raise ValueError("varsigma_norm and delta_hat must be positive")
    rule = h0_rule(ds.n, float(np.mean(ds.m)), delta_hat, varsigma_norm, constant)
    h0, triggered = _fallback_h0(ds, rule)
    return h0, triggered, rule


def estimate_noise_variance(
    ds: SnippetDataset,
    h0: Optional[float] = None,
    varsigma_norm: Optional[float] = None,
    ridge: bool = False,
    constant: float = H0_CONSTANT,
) -> NoiseVariance:
    """Estimate the noise variance ``(A0 - A1) / B``.

    Without ``h0`` the empirical rule is used. It needs the L2 norm of the
    residual second-moment function; pass it as ``varsigma_norm`` or it is
    estimated here with default smoothing settings. ``ridge=True`` adds
    ``h0 / (n m)**2`` to the denominator.
    """
    rule = None
    triggered = False
    if h0 is None:
        if varsigma_norm is None:
            from .variance import varsigma_l2_norm

            varsigma_norm = varsigma_l2_norm(ds)
        h0, triggered, rule = _empirical_h0(ds, varsigma_norm, estimate_span(ds).delta_hat, constant)
    stats = pair_stats(ds, h0)
    if ridge:
        denom = stats.b_hat + h0 / float(np.sum(ds.m)) ** 2
    else:
        denom = stats.b_hat
    if denom == 0:
        raise NoEligiblePairs(f"no within-subject pair is closer than h0={h0}")
    sigma0_sq = max((stats.a0_hat - stats.a1_hat) / denom, 0.0)
    return NoiseVariance(float(sigma0_sq), float(h0), triggered, stats, rule, ridge)


@dataclass(frozen=True)
class LocalNoiseVariance:
    """Noise variance as a function of time; ``nan`` marks undefined points."""

    grid: np.ndarray
    values: np.ndarray
    h0: float
    _ds: SnippetDataset = None

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def __call__(self, t):
        return _local_noise(self._ds, np.atleast_1d(np.asarray(t, dtype=float)), self.h0)


def _local_noise(ds, t, h0):
    pairs, _, yj, yl = _pair_arrays(ds)
    tj = ds.times[pairs.first]
    tl = ds.times[pairs.second]
    out = np.empty(t.shape)
    n = pairs.n_eligible
    for k, tk in enumerate(t):
        w = pairs.weight * ((np.abs(tj - tk) < h0) & (np.abs(tl - tk) < h0))
        b = np.sum(w) / n
        if b == 0:
            out[k] = np.nan
            continue
        a0 = np.sum(w * yj * yj) / n
        a1 = np.sum(w * yj * yl) / n
        out[k] = max((a0 - a1) / b, 0.0)
    return out


def estimate_noise_variance_hetero(ds: SnippetDataset, h0: float, grid) -> LocalNoiseVariance:
    """Pointwise noise variance using pairs with both times within ``h0`` of ``t``."""
    if not h0 > 0:
        raise ValueError(f"h0 must be positive, got {h0}")
    grid = check_grid(grid, ds.domain_lo, ds.domain_hi)
    return LocalNoiseVariance(grid, _local_noise(ds, grid, h0), float(h0), ds)
