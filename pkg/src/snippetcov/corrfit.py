"""Least-squares fit of correlation parameters to raw within-subject covariances."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .correlation import CorrelationFamily, CorrelationModel, FourierBasis, make_family
from .data import SnippetDataset
from .exceptions import AllStartsFailed, NoEligibleSubjects
from .smoothing import SmoothEstimate, subject_folds

NM_TOL = 1e-8
NM_ITER_PER_DIM = 500


@dataclass(frozen=True)
class RawCovPairs:
    """Ordered pairs ``(s, t, C)`` with ``C`` the product of mean-centred observations."""

    s: np.ndarray
    t: np.ndarray
    c: np.ndarray
    weight: np.ndarray
    subject: np.ndarray
    n_subjects: int

    def __len__(self):
        return self.s.size

    def select(self, mask) -> "RawCovPairs":
        mask = np.asarray(mask, dtype=bool)
        return RawCovPairs(
            self.s[mask], self.t[mask], self.c[mask], self.weight[mask], self.subject[mask],
            int(np.unique(self.subject[mask]).size),
        )

    def counts_per_subject(self) -> np.ndarray:
        _, counts = np.unique(self.subject, return_counts=True)
        return counts


def build_raw_pairs(ds: SnippetDataset, mu_hat: SmoothEstimate | Callable) -> RawCovPairs:
    pairs = ds.pairs
    if pairs.n_eligible == 0:
        raise NoEligibleSubjects("no subject has at least two observations")
    resid = ds.values - np.asarray(mu_hat(ds.times), dtype=float)
    return RawCovPairs(
        s=ds.times[pairs.first],
        t=ds.times[pairs.second],
        c=resid[pairs.first] * resid[pairs.second],
        weight=pairs.weight,
        subject=pairs.subject,
        n_subjects=pairs.n_eligible,
    )


def _scale(pairs: RawCovPairs, sigma_x) -> np.ndarray:
    if callable(sigma_x):
        return np.asarray(sigma_x(pairs.s), dtype=float) * np.asarray(sigma_x(pairs.t), dtype=float)
    sigma_x = np.asarray(sigma_x, dtype=float)
    if sigma_x.ndim == 0:
        return np.full(len(pairs), float(sigma_x) ** 2)
    return sigma_x


class Objective:
    """The weighted least-squares criterion for one family and one pair set.

    Pairs whose abscissae make a Fourier-basis correlation undefined are
    dropped once, independently of ``theta``. For stationary families the
    correlation is evaluated once per distinct lag.
    """

    def __init__(self, pairs: RawCovPairs, sigma_x, family: CorrelationFamily, weighted: bool = True):
        self.family = family
        scale = _scale(pairs, sigma_x)
        keep = np.ones(len(pairs), dtype=bool)
        if isinstance(family, FourierBasis):
            keep = ~(family.vanishing(pairs.s) | family.vanishing(pairs.t))
        self.excluded = int(np.count_nonzero(~keep))
        self.n_pairs = int(np.count_nonzero(keep))
        self.scale = scale[keep]
        self.c = pairs.c[keep]
        self.weight = pairs.weight[keep] if weighted else np.ones(self.n_pairs)
        if family.stationary:
            self.lags, self.inverse = np.unique(np.abs(pairs.s[keep] - pairs.t[keep]), return_inverse=True)
        else:
            self.s, self.t = pairs.s[keep], pairs.t[keep]
            if isinstance(family, FourierBasis):
                self._ps, self._pt = family.basis(self.s), family.basis(self.t)
                self._same = self.s == self.t

    def correlation(self, theta) -> np.ndarray:
        if self.family.stationary:
            rho = np.asarray(self.family.lag(theta, self.lags), dtype=float)
            return rho[self.inverse]
        if isinstance(self.family, FourierBasis):
            return self.family._from_basis(np.asarray(theta, dtype=float), self._ps, self._pt, self._same)
        return np.asarray(self.family.correlation(theta, self.s, self.t), dtype=float)

    def residuals(self, theta) -> np.ndarray:
        return self.scale * self.correlation(theta) - self.c

    def __call__(self, theta) -> float:
        r = self.residuals(theta)
        return float(np.sum(self.weight * r * r))

    def gradient(self, theta) -> np.ndarray:
        """Analytic gradient, for families that provide ``lag_gradient``."""
        if not hasattr(self.family, "lag_gradient"):
            raise NotImplementedError(f"no analytic gradient for {self.family.name}")
        r = self.residuals(theta)
        dr = np.asarray(self.family.lag_gradient(theta, self.lags))[:, self.inverse]
        return 2.0 * (dr * (self.weight * r * self.scale)).sum(axis=1)


def objective(theta, pairs: RawCovPairs, sigma_x, family) -> float:
    """Criterion value at ``theta`` (``sigma_x`` a function of t, or per-pair scales)."""
    family = make_family(family)
    theta = family.check(theta)
    return Objective(pairs, sigma_x, family)(theta)


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    objective_value: float
    n_starts: int
    converged: bool
    excluded_pair_count: int
    family: CorrelationFamily
    start_values: np.ndarray = field(default=None, repr=False)
    n_pairs: int = 0

    @property
    def model(self) -> CorrelationModel:
        return CorrelationModel(self.family, self.theta_hat)

    @property
    def improves_on_starts(self) -> bool:
        return bool(np.all(self.objective_value <= self.start_values))


def _nelder_mead(fun, z0, dim, callback=None):
    return minimize(
        fun,
        z0,
        method="Nelder-Mead",
        callback=callback,
        options={"xatol": NM_TOL, "fatol": NM_TOL, "maxiter": NM_ITER_PER_DIM * dim, "maxfev": 2 * NM_ITER_PER_DIM * dim},
    )


def fit_theta(
    pairs: RawCovPairs,
    sigma_x,
    family,
    delta_hat: Optional[float] = None,
    start: Optional[Sequence[float]] = None,
    weighted: bool = True,
    trace: Optional[list] = None,
) -> FitResult:
    """Multi-start Nelder-Mead in the family's unconstrained coordinates.

    Starting values come from ``family.start_points(delta_hat)`` plus the
    optional user ``start``. ``trace``, if given, receives one list per run
    with the best objective value after every iteration.
    """
    family = make_family(family)
    if len(pairs) == 0:
        raise NoEligibleSubjects("no raw covariance pairs to fit")
    obj = Objective(pairs, sigma_x, family, weighted)
    if delta_hat is None:
        delta_hat = float(np.max(np.abs(pairs.s - pairs.t))) or 1.0
    starts = [family.check(p) for p in family.start_points(delta_hat)]
    if start is not None:
        starts.append(family.check(start))
    start_values = np.array([obj(p) for p in starts])

    dim = family.n_free
    if dim == 0:
        best = int(np.argmin(start_values))
        return FitResult(starts[best], float(start_values[best]), len(starts), True, obj.excluded, family, start_values, obj.n_pairs)

    def fun(z):
        val = obj(family.from_unconstrained(z))
        return val if np.isfinite(val) else np.inf

    best_val, best_theta, best_ok = np.inf, None, False
    for p in starts:
        history = []
        cb = None
        if trace is not None:
            cb = lambda xk: history.append(fun(xk))  # noqa: E731
        try:
            res = _nelder_mead(fun, family.to_unconstrained(p), dim, cb)
        except (FloatingPointError, ValueError):
            continue
        if trace is not None:
            trace.append(history)
        theta = family.from_unconstrained(res.x)
        val = obj(theta)
        # strict < keeps the earliest start on ties
        if np.isfinite(val) and val < best_val:
            best_val, best_theta, best_ok = val, theta, bool(res.success)
    if best_theta is None:
        raise AllStartsFailed(f"{family.name}: no start produced a finite objective")
    # the optimiser never returns worse than a start it was given, but the
    # reparametrisation round trip can; fall back to the best start then
    i0 = int(np.argmin(start_values))
    if start_values[i0] < best_val:
        best_val, best_theta = float(start_values[i0]), starts[i0]
    return FitResult(
        family.check(best_theta), float(best_val), len(starts), best_ok, obj.excluded, family, start_values, obj.n_pairs
    )


def _fourier_family(d, ds):
    return FourierBasis(d, (ds.domain_lo, ds.domain_hi))


def dn_scores(
    ds: SnippetDataset,
    mu_hat,
    sigma_x,
    candidates: Sequence[int],
    method: str = "cv5",
    seed: int = 0,
    folds: int = 5,
) -> np.ndarray:
    """Selection criterion for each Fourier dimension in ``candidates``."""
    pairs = build_raw_pairs(ds, mu_hat)
    scale = _scale(pairs, sigma_x)
    method = method.lower()
    scores = np.zeros(len(candidates))
    if method == "aic":
        for k, d in enumerate(candidates):
            fit = fit_theta(pairs, scale, _fourier_family(d, ds))
            n = fit.n_pairs
            scores[k] = n * np.log(fit.objective_value / n) + 2.0 * (d - 1)
        return scores
    if method != "cv5":
        raise ValueError(f"unknown selection method {method!r}")
    for held in subject_folds(ds.n, folds, seed):
        test = np.isin(pairs.subject, held)
        train_pairs = pairs.select(~test)
        test_pairs = pairs.select(test)
        if len(train_pairs) == 0 or len(test_pairs) == 0:
            continue
        for k, d in enumerate(candidates):
            fam = _fourier_family(d, ds)
            fit = fit_theta(train_pairs, scale[~test], fam)
            held_obj = Objective(test_pairs, scale[test], fam, weighted=False)
            scores[k] += held_obj(fit.theta_hat)
    return scores


def select_dn(
    ds: SnippetDataset,
    mu_hat,
    sigma_x,
    candidates: Sequence[int],
    method: str = "cv5",
    seed: int = 0,
) -> int:
    """Fourier dimension with the best score; ties go to the smaller dimension."""
    candidates = sorted(int(d) for d in candidates)
    if not candidates:
        raise ValueError("no candidate dimensions")
    if len(candidates) == 1:
        return candidates[0]
    scores = dn_scores(ds, mu_hat, sigma_x, candidates, method, seed)
    return candidates[_argmin_first(scores)]


def _argmin_first(scores) -> int:
    scores = np.where(np.isnan(scores), np.inf, scores)
    return int(np.flatnonzero(scores == scores.min())[0])
