"""scikit-learn style estimators wrapping the functional pipeline.

Inputs are ragged: ``t`` and ``y`` are sequences with one 1-D array per
subject. A :class:`~snippetcov.data.SnippetDataset` may be passed as ``t``
instead, with ``y`` omitted.
"""

from __future__ import annotations

from dataclasses import fields
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .correlation import corr_eval
from .covariance import PipelineConfig, emit_grid, fit_pipeline, fpca
from .data import SnippetDataset, validate_dataset
from .exceptions import LengthMismatch
from .noise import H0_CONSTANT, estimate_noise_variance
from .smoothing import estimate_mean


def check_snippets(t, y=None, domain=None, ids=None) -> SnippetDataset:
    """Validate ragged per-subject inputs and build a dataset."""
    if isinstance(t, SnippetDataset):
        if y is not None:
            raise ValueError("pass either a SnippetDataset or (t, y), not both")
        return validate_dataset(t)
    if y is None:
        raise ValueError("y is required when t is not a SnippetDataset")
    if len(t) != len(y):
        raise LengthMismatch(f"{len(t)} time arrays for {len(y)} value arrays")
    ts = [check_array(np.atleast_1d(ti), ensure_2d=False, dtype=float) for ti in t]
    ys = [check_array(np.atleast_1d(yi), ensure_2d=False, dtype=float) for yi in y]
    return SnippetDataset.from_arrays(ts, ys, ids=ids, domain=domain)


def _points(t) -> np.ndarray:
    return check_array(np.atleast_1d(np.asarray(t, dtype=float)), ensure_2d=False, dtype=float)


class MeanEstimator(BaseEstimator):
    """Ridged local-linear mean with cross-validated bandwidth.

    Parameters
    ----------
    bandwidth : float, optional
        Fixed bandwidth; selected by subject-level CV when omitted.
    kernel : {"epanechnikov", "quartic", "triangular"}
    weights : {"obs", "subj"}
    folds : int
        Number of CV folds.
    random_state : int
        Seed of the fold assignment.

    Attributes
    ----------
    estimate_ : SmoothEstimate
    bandwidth_ : float
    """

    def __init__(self, bandwidth=None, kernel="epanechnikov", weights="obs", folds=5, random_state=0):
        self.bandwidth = bandwidth
        self.kernel = kernel
        self.weights = weights
        self.folds = folds
        self.random_state = random_state

    def fit(self, t, y=None, domain=None):
        ds = check_snippets(t, y, domain)
        self.estimate_ = estimate_mean(
            ds, bandwidth=self.bandwidth, kernel=self.kernel, weights=self.weights, folds=self.folds, seed=self.random_state
        )
        self.bandwidth_ = self.estimate_.bandwidth
        self.domain_ = (ds.domain_lo, ds.domain_hi)
        return self

    def predict(self, t):
        check_is_fitted(self, "estimate_")
        return self.estimate_(_points(t))


class NoiseVarianceEstimator(BaseEstimator):
    """Noise variance from near-diagonal within-subject pairs.

    Parameters
    ----------
    h0 : float, optional
        Pair-distance threshold; the empirical rule is used when omitted.
    ridge : bool
        Add a small ridge to the denominator.
    constant : float
        Multiplier of the empirical rule.

    Attributes
    ----------
    sigma0_sq_, h0_ : float
    result_ : NoiseVariance
    """

    def __init__(self, h0=None, ridge=False, constant=H0_CONSTANT):
        self.h0 = h0
        self.ridge = ridge
        self.constant = constant

    def fit(self, t, y=None, domain=None):
        ds = check_snippets(t, y, domain)
        self.result_ = estimate_noise_variance(ds, h0=self.h0, ridge=self.ridge, constant=self.constant)
        self.sigma0_sq_ = self.result_.sigma0_sq
        self.h0_ = self.result_.h0_used
        return self


class SnippetCovariance(BaseEstimator):
    """Covariance function of a process observed as functional snippets.

    The covariance is modelled as ``sigma_x(s) rho(s, t) sigma_x(t)``: the
    variance function is estimated nonparametrically and the correlation by a
    parametric family fitted by least squares, which extrapolates it away from
    the diagonal band covered by the data.

    Parameters
    ----------
    correlation : str
        ``"matern"``, ``"powerexp"``, ``"rationalquad"``, ``"fourier"`` (basis
        size selected over ``dn_candidates``) or ``"fourier:<d>"``.
    dn_candidates : tuple of int
    dn_method : {"cv5", "aic"}
    kernel, weights, folds : see :class:`MeanEstimator`
    bandwidth_mean, bandwidth_var : float, optional
        Fixed smoothing bandwidths.
    h0 : float, optional
        Noise-variance pair threshold.
    grid_size : int
        Size of the default evaluation grid.
    random_state : int

    Attributes
    ----------
    model_ : CovarianceModel
    sigma0_sq_ : float
    theta_ : ndarray
    """

    def __init__(
        self,
        correlation="matern",
        dn_candidates=(1, 2, 3, 4, 5),
        dn_method="cv5",
        kernel="epanechnikov",
        weights="obs",
        folds=5,
        bandwidth_mean=None,
        bandwidth_var=None,
        h0=None,
        grid_size=51,
        random_state=0,
    ):
        self.correlation = correlation
        self.dn_candidates = dn_candidates
        self.dn_method = dn_method
        self.kernel = kernel
        self.weights = weights
        self.folds = folds
        self.bandwidth_mean = bandwidth_mean
        self.bandwidth_var = bandwidth_var
        self.h0 = h0
        self.grid_size = grid_size
        self.random_state = random_state

    def _config(self) -> PipelineConfig:
        names = {f.name for f in fields(PipelineConfig)}
        params = {k: v for k, v in self.get_params().items() if k in names}
        params["seed"] = self.random_state
        params["dn_candidates"] = tuple(self.dn_candidates)
        return PipelineConfig(**params)

    def fit(self, t, y=None, domain=None):
        ds = check_snippets(t, y, domain)
        self.model_ = fit_pipeline(ds, self._config())
        self.sigma0_sq_ = self.model_.noise.sigma0_sq
        self.theta_ = np.asarray(self.model_.correlation.theta)
        self.domain_ = (ds.domain_lo, ds.domain_hi)
        return self

    def predict(self, grid=None) -> np.ndarray:
        """Covariance matrix on ``grid`` (default: equally spaced over the domain)."""
        check_is_fitted(self, "model_")
        return emit_grid(self.model_, None if grid is None else _points(grid)).cov

    def covariance(self, s, t):
        check_is_fitted(self, "model_")
        return self.model_(s, t)

    def correlation_fn(self, s, t):
        check_is_fitted(self, "model_")
        return corr_eval(self.model_.correlation, s, t)

    def mean(self, t):
        check_is_fitted(self, "model_")
        return self.model_.mean(_points(t))

    def variance(self, t):
        check_is_fitted(self, "model_")
        return self.model_.variance.sigma_x_sq(_points(t))

    def principal_components(self, grid=None, n_components: Optional[int] = None):
        check_is_fitted(self, "model_")
        return fpca(self.model_, None if grid is None else _points(grid), n_components)
