"""Ridged local linear smoothing with subject-level cross-validation.

Used for the mean function and, with squared residuals as responses, for the
second-moment function of the residual process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import SnippetDataset, estimate_span
from .exceptions import (
    EmptyCandidateList,
    LengthMismatch,
    NonpositiveBandwidth,
    TooFewSubjects,
)

KERNELS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "epanechnikov": lambda u: np.where(np.abs(u) <= 1, 0.75 * (1 - u * u), 0.0),
    "quartic": lambda u: np.where(np.abs(u) <= 1, 0.9375 * (1 - u * u) ** 2, 0.0),
    "triangular": lambda u: np.where(np.abs(u) <= 1, 1 - np.abs(u), 0.0),
}

WEIGHT_SCHEMES = ("obs", "subj")

# eval rows x observation columns processed at once
_CHUNK_CELLS = 1 << 21


def get_kernel(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return KERNELS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


def subject_weights(m: np.ndarray, scheme: str = "obs") -> np.ndarray:
    """Per-subject weights with ``sum(m * w) == 1``.

    ``"obs"`` weighs every observation equally, ``"subj"`` every subject.
    """
    m = np.asarray(m, dtype=float)
    if scheme == "obs":
        return np.full(m.shape, 1.0 / m.sum())
    if scheme == "subj":
        return 1.0 / (m.size * m)
    raise ValueError(f"unknown weight scheme {scheme!r}; choose from {WEIGHT_SCHEMES}")


def default_ridge(m: np.ndarray) -> float:
    # (n * mean(m))^-2, i.e. one over the squared number of observations
    return 1.0 / float(np.sum(m)) ** 2


def _local_linear(times, responses, obs_w, t_eval, h, kernel, ridge):
    """Evaluate the ridged local linear fit at ``t_eval``.

    ``times`` must be sorted; each block of sorted evaluation points only sees
    the observations that can fall inside its windows.
    """
    t_eval = np.asarray(t_eval, dtype=float).ravel()
    out = np.empty(t_eval.shape)
    order = np.argsort(t_eval, kind="stable")
    te = t_eval[order]
    res = np.empty(te.shape)
    n = times.size
    rows = max(1, min(te.size, _CHUNK_CELLS // max(n, 1)))
    start = 0
    while start < te.size:
        stop = min(start + rows, te.size)
        block = te[start:stop]
        lo = np.searchsorted(times, block[0] - h, side="left")
        hi = np.searchsorted(times, block[-1] + h, side="right")
        u = (times[None, lo:hi] - block[:, None]) / h
        k = kernel(u) * (obs_w[None, lo:hi] / h)
        ku = k * u
        s0 = k.sum(axis=1)
        s1 = ku.sum(axis=1)
        s2 = (ku * u).sum(axis=1)
        r0 = k @ responses[lo:hi]
        r1 = ku @ responses[lo:hi]
        den = s0 * s2 - s1 * s1
        den = den + ridge * (np.abs(den) < ridge)
        with np.errstate(invalid="ignore", divide="ignore"):
            res[start:stop] = (r0 * s2 - r1 * s1) / den
        start = stop
    out[order] = res
    return out


@dataclass(frozen=True)
class SmoothEstimate:
    """A fitted one-dimensional curve; call it to evaluate."""

    bandwidth: float
    ridge_delta: float
    kernel: str
    weight_scheme: str
    selected_by_cv: bool = False
    candidates: Optional[np.ndarray] = None
    cv_errors: Optional[np.ndarray] = None
    _times: np.ndarray = field(default=None, repr=False)
    _responses: np.ndarray = field(default=None, repr=False)
    _obs_w: np.ndarray = field(default=None, repr=False)

    def __call__(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        val = _local_linear(
            self._times, self._responses, self._obs_w, t, self.bandwidth, get_kernel(self.kernel), self.ridge_delta
        )
        return float(val[0]) if scalar else val.reshape(np.shape(t))


def _prepare(ds: SnippetDataset, responses, weights: str):
    responses = np.asarray(responses, dtype=float).ravel()
    if responses.size != ds.n_obs:
        raise LengthMismatch(f"{responses.size} responses for {ds.n_obs} observations")
    obs_w = subject_weights(ds.m, weights)[ds.subject_index]
    order = np.argsort(ds.times, kind="stable")
    return ds.times[order], responses[order], obs_w[order]


def local_linear_fit(
    ds: SnippetDataset,
    responses,
    h: float,
    kernel: str = "epanechnikov",
    weights: str = "obs",
    ridge: Optional[float] = None,
) -> SmoothEstimate:
    """Ridged local linear smoother of ``responses`` against the observation times.

    ``ridge`` defaults to ``(n * mean(m))**-2``. The ridge is added to the
    determinant ``S0*S2 - S1**2`` only where its magnitude falls below it.
    """
    if not h > 0:
        raise NonpositiveBandwidth(f"bandwidth must be positive, got {h}")
    if ridge is None:
        ridge = default_ridge(ds.m)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    get_kernel(kernel)
    times, resp, obs_w = _prepare(ds, responses, weights)
    return SmoothEstimate(float(h), float(ridge), kernel, weights, _times=times, _responses=resp, _obs_w=obs_w)


def subject_folds(n: int, folds: int, seed: int) -> list:
    """Random partition of subject positions into ``folds`` near-equal groups."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def default_bandwidth_grid(ds: SnippetDataset, n_candidates: int = 10) -> np.ndarray:
    """Geometric grid from the 90% nearest-neighbour gap up to the snippet span.

    The lower end is the smallest ``h`` for which at least 90% of observation
    times have another observation (pooled over subjects) within ``h``.
    """
    t = np.sort(ds.times)
    if t.size < 2:
        raise TooFewSubjects("need at least two observations to build a bandwidth grid")
    gaps = np.diff(t)
    nn = np.minimum(np.concatenate([[np.inf], gaps]), np.concatenate([gaps, [np.inf]]))
    k = int(np.ceil(0.9 * nn.size)) - 1
    h_min = float(np.sort(nn)[k])
    if h_min <= 0:
        positive = nn[nn > 0]
        h_min = float(positive.min()) if positive.size else 1e-3 * ds.width
    h_max = estimate_span(ds).delta_hat
    if not h_max > h_min:
        h_max = max(ds.width, 2 * h_min)
    return np.geomspace(h_min, h_max, n_candidates)


def cv_errors(
    ds: SnippetDataset,
    responses,
    candidates: Sequence[float],
    folds: int = 5,
    seed: int = 0,
    kernel: str = "epanechnikov",
    weights: str = "obs",
) -> np.ndarray:
    """Subject-level K-fold prediction error for every candidate bandwidth."""
    responses = np.asarray(responses, dtype=float).ravel()
    if responses.size != ds.n_obs:
        raise LengthMismatch(f"{responses.size} responses for {ds.n_obs} observations")
    if folds < 2:
        raise ValueError("need at least two folds")
    if ds.n < folds:
        raise TooFewSubjects(f"{ds.n} subjects cannot be split into {folds} folds")
    candidates = np.asarray(candidates, dtype=float)
    if np.any(candidates <= 0):
        raise NonpositiveBandwidth("candidate bandwidths must be positive")
    kern = get_kernel(kernel)
    sid = ds.subject_index
    errors = np.zeros(candidates.size)
    for held in subject_folds(ds.n, folds, seed):
        test = np.isin(sid, held)
        train = ~test
        m_train = np.delete(ds.m, held)
        obs_w = subject_weights(m_train, weights)[np.searchsorted(np.setdiff1d(np.arange(ds.n), held), sid[train])]
        order = np.argsort(ds.times[train], kind="stable")
        t_tr, r_tr, w_tr = ds.times[train][order], responses[train][order], obs_w[order]
        ridge = default_ridge(m_train)
        for c, h in enumerate(candidates):
            pred = _local_linear(t_tr, r_tr, w_tr, ds.times[test], h, kern, ridge)
            errors[c] += np.sum((responses[test] - pred) ** 2)
    return errors


def cv_select_bandwidth(
    ds: SnippetDataset,
    responses,
    candidates: Optional[Sequence[float]] = None,
    folds: int = 5,
    seed: int = 0,
    kernel: str = "epanechnikov",
    weights: str = "obs",
) -> float:
    """Candidate with the smallest CV error; ties go to the smaller bandwidth."""
    return _select(ds, responses, candidates, folds, seed, kernel, weights)[0]


def _select(ds, responses, candidates, folds, seed, kernel, weights):
    if candidates is None:
        candidates = default_bandwidth_grid(ds)
    candidates = np.sort(np.asarray(candidates, dtype=float).ravel(), kind="stable")
    if candidates.size == 0:
        raise EmptyCandidateList("no candidate bandwidths")
    errs = cv_errors(ds, responses, candidates, folds, seed, kernel, weights)
    # nan errors (ridge disabled) never win
    best = int(np.argmin(np.where(np.isnan(errs), np.inf, errs)))
    return float(candidates[best]), candidates, errs


def smooth_with_cv(
    ds: SnippetDataset,
    responses,
    bandwidth: Optional[float] = None,
    candidates: Optional[Sequence[float]] = None,
    folds: int = 5,
    seed: int = 0,
    kernel: str = "epanechnikov",
    weights: str = "obs",
    ridge: Optional[float] = None,
) -> SmoothEstimate:
    """Fit at a fixed ``bandwidth`` or at the CV-selected one."""
    if bandwidth is not None:
        return local_linear_fit(ds, responses, bandwidth, kernel, weights, ridge)
    h, cands, errs = _select(ds, responses, candidates, folds, seed, kernel, weights)
    fit = local_linear_fit(ds, responses, h, kernel, weights, ridge)
    return SmoothEstimate(
        fit.bandwidth,
        fit.ridge_delta,
        kernel,
        weights,
        True,
        cands,
        errs,
        fit._times,
        fit._responses,
        fit._obs_w,
    )


def estimate_mean(ds: SnippetDataset, **config) -> SmoothEstimate:
    """Mean function estimate from the raw observations.

    Keyword arguments are those of :func:`smooth_with_cv`.
    """
    return smooth_with_cv(ds, ds.values, **config)
