"""End-to-end covariance estimation and grid output.

Stage order: mean, residual second moment, ``h0``, noise variance, latent
variance, correlation parameters. The covariance estimate is
``sigma_x(s) * rho(s, t) * sigma_x(t)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import noise as noise_mod
from .correlation import CorrelationModel, FourierBasis, corr_eval, make_family
from .corrfit import FitResult, build_raw_pairs, dn_scores, fit_theta
from .data import SnippetDataset, check_grid, estimate_span, eval_grid, trapezoid
from .exceptions import StageError
from .noise import NoiseVariance
from .smoothing import SmoothEstimate, estimate_mean
from .variance import VarianceEstimate, assemble_variance, estimate_varsigma_sq

DEFAULT_DN_CANDIDATES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class PipelineConfig:
    """Tuning options for :func:`fit_pipeline`.

    ``correlation`` is a family name (``"matern"``, ``"powerexp"``,
    ``"rationalquad"``), ``"fourier"`` to select the basis size over
    ``dn_candidates`` by ``dn_method``, or ``"fourier:<d>"`` for a fixed size.
    """

    kernel: str = "epanechnikov"
    weights: str = "obs"
    folds: int = 5
    seed: int = 0
    n_bandwidths: int = 10
    bandwidth_mean: Optional[float] = None
    bandwidth_var: Optional[float] = None
    h0: Optional[float] = None
    h0_constant: float = noise_mod.H0_CONSTANT
    ridge_noise: bool = False
    correlation: str = "matern"
    dn_candidates: tuple = DEFAULT_DN_CANDIDATES
    dn_method: str = "cv5"
    theta_start: Optional[tuple] = None
    grid_size: int = 51
    floor: Optional[float] = None

    def __post_init__(self):
        if self.dn_candidates is not None:
            object.__setattr__(self, "dn_candidates", tuple(int(d) for d in self.dn_candidates))
        if self.theta_start is not None:
            object.__setattr__(self, "theta_start", tuple(float(x) for x in self.theta_start))

    def smoothing_kwargs(self, bandwidth):
        return dict(bandwidth=bandwidth, folds=self.folds, seed=self.seed, kernel=self.kernel, weights=self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dn_candidates"] = list(self.dn_candidates)
        d["theta_start"] = list(self.theta_start) if self.theta_start is not None else None
        return d


def _config(config, overrides) -> PipelineConfig:
    if config is None:
        config = PipelineConfig()
    elif isinstance(config, dict):
        config = PipelineConfig(**config)
    if overrides:
        config = replace(config, **overrides)
    return config


@dataclass(frozen=True)
class Marginals:
    """Everything except the correlation: mean, noise variance and latent variance."""

    mean: SmoothEstimate
    varsigma_sq: SmoothEstimate
    noise: NoiseVariance
    variance: VarianceEstimate
    delta_hat: float


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _bandwidth_grid(ds, config):
    from .smoothing import default_bandwidth_grid

    return default_bandwidth_grid(ds, config.n_bandwidths)


def fit_marginals(ds: SnippetDataset, config: PipelineConfig | dict | None = None, **overrides) -> Marginals:
    config = _config(config, overrides)
    grid = eval_grid(ds.domain_lo, ds.domain_hi, config.grid_size)
    candidates = None if config.bandwidth_mean is not None and config.bandwidth_var is not None else _stage(
        "mean", _bandwidth_grid, ds, config
    )
    mu = _stage("mean", estimate_mean, ds, candidates=candidates, **config.smoothing_kwargs(config.bandwidth_mean))
    vs = _stage(
        "varsigma", estimate_varsigma_sq, ds, mu, candidates=candidates, **config.smoothing_kwargs(config.bandwidth_var)
    )
    vs_norm = float(np.sqrt(trapezoid(np.maximum(vs(grid), 0.0), grid)))
    span = estimate_span(ds).delta_hat
    nv = _stage(
        "noise",
        noise_mod.estimate_noise_variance,
        ds,
        h0=config.h0,
        varsigma_norm=vs_norm,
        ridge=config.ridge_noise,
        constant=config.h0_constant,
    )
    var = _stage("variance", assemble_variance, vs, nv, grid, config.floor)
    return Marginals(mu, vs, nv, var, span)


@dataclass(frozen=True)
class CovarianceModel:
    mean: SmoothEstimate
    noise: NoiseVariance
    variance: VarianceEstimate
    correlation: CorrelationModel
    fit: FitResult
    delta_hat: float
    domain: tuple
    config: PipelineConfig = field(default_factory=PipelineConfig)
    dn: Optional[int] = None
    dn_scores: Optional[np.ndarray] = None
    varsigma_sq: Optional[SmoothEstimate] = None

    def __call__(self, s, t):
        return cov_eval(self, s, t)

    def sigma_x(self, t):
        return self.variance.sigma_x(t)

    def summary(self) -> dict:
        nv = self.noise
        return {
            "domain": list(self.domain),
            "delta_hat": self.delta_hat,
            "mean": {
                "bandwidth": self.mean.bandwidth,
                "ridge": self.mean.ridge_delta,
                "selected_by_cv": self.mean.selected_by_cv,
            },
            "varsigma_sq": {
                "bandwidth": self.variance.varsigma_sq.bandwidth,
                "ridge": self.variance.varsigma_sq.ridge_delta,
                "selected_by_cv": self.variance.varsigma_sq.selected_by_cv,
                "l2_norm": self.variance.l2_norm_varsigma,
            },
            "noise": {
                "sigma0_sq": nv.sigma0_sq,
                "h0": nv.h0_used,
                "h0_rule": nv.h0_rule,
                "fallback_triggered": nv.fallback_triggered,
                "ridged": nv.ridged,
                "pair_count": nv.stats.pair_count if nv.stats else None,
            },
            "variance": {"floor": self.variance.floor},
            "correlation": self.correlation.to_dict(),
            "fit": {
                "objective_value": self.fit.objective_value,
                "converged": self.fit.converged,
                "n_starts": self.fit.n_starts,
                "excluded_pair_count": self.fit.excluded_pair_count,
                "n_pairs": self.fit.n_pairs,
                "start_values": [float(v) for v in self.fit.start_values],
            },
            "dn": self.dn,
            "dn_scores": None if self.dn_scores is None else [float(v) for v in self.dn_scores],
            "config": self.config.to_dict(),
        }


def fit_correlation(ds: SnippetDataset, marg: Marginals, config: PipelineConfig | dict | None = None, **overrides):
    """Fit the correlation part given the marginal estimates; returns ``(FitResult, dn, scores)``."""
    config = _config(config, overrides)
    domain = (ds.domain_lo, ds.domain_hi)
    sigma_x = marg.variance.sigma_x
    pairs = build_raw_pairs(ds, marg.mean)
    dn = scores = None
    name = config.correlation
    if isinstance(name, str) and name.lower() == "fourier":
        cands = sorted(config.dn_candidates)
        if len(cands) == 1:
            dn = cands[0]
        else:
            scores = dn_scores(ds, marg.mean, pairs_scale(pairs, sigma_x), cands, config.dn_method, config.seed, config.folds)
            dn = cands[int(np.flatnonzero(scores == np.nanmin(scores))[0])]
        family = FourierBasis(dn, domain)
    else:
        family = make_family(name, domain)
        if isinstance(family, FourierBasis):
            dn = family.dim
    fit = fit_theta(pairs, sigma_x, family, marg.delta_hat, config.theta_start)
    return fit, dn, scores


def pairs_scale(pairs, sigma_x):
    return sigma_x(pairs.s) * sigma_x(pairs.t)


def fit_pipeline(ds: SnippetDataset, config: PipelineConfig | dict | None = None, marginals: Optional[Marginals] = None, **overrides) -> CovarianceModel:
    """Run every estimation stage on a validated dataset.

    Pass ``marginals`` from an earlier run to reuse its mean and variance
    estimates (e.g. when comparing correlation families). Failures are
    re-raised as :class:`StageError` naming the stage.
    """
    config = _config(config, overrides)
    marg = marginals if marginals is not None else fit_marginals(ds, config)
    fit, dn, scores = _stage("correlation", fit_correlation, ds, marg, config)
    return CovarianceModel(
        mean=marg.mean,
        noise=marg.noise,
        variance=marg.variance,
        correlation=fit.model,
        fit=fit,
        delta_hat=marg.delta_hat,
        domain=(ds.domain_lo, ds.domain_hi),
        config=config,
        dn=dn,
        dn_scores=scores,
        varsigma_sq=marg.varsigma_sq,
    )


def cov_eval(model: CovarianceModel, s, t, return_undefined: bool = False):
    """``sigma_x(s) rho(s, t) sigma_x(t)``; undefined correlations contribute 0."""
    s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    # canonical ordering makes the product exactly symmetric
    lo, hi = np.minimum(s_arr, t_arr), np.maximum(s_arr, t_arr)
    rho = np.asarray(corr_eval(model.correlation, lo, hi), dtype=float)
    undefined = np.isnan(rho)
    rho = np.where(undefined, 0.0, rho)
    val = model.sigma_x(lo) * rho * model.sigma_x(hi)
    if np.ndim(val) == 0:
        val = float(val)
    return (val, undefined) if return_undefined else val


@dataclass(frozen=True)
class GridOutput:
    grid: np.ndarray
    cov: np.ndarray
    mean: np.ndarray
    sigma_x_sq: np.ndarray
    n_undefined: int


def emit_grid(model: CovarianceModel, grid=None, psd_projection: bool = False) -> GridOutput:
    """Covariance matrix and mean / variance vectors on ``grid``.

    The matrix is exactly symmetric with the latent variance on its diagonal.
    ``psd_projection`` clips negative eigenvalues (off by default).
    """
    lo, hi = model.domain
    grid = eval_grid(lo, hi, model.config.grid_size) if grid is None else check_grid(grid, lo, hi)
    ss, tt = np.meshgrid(grid, grid, indexing="ij")
    cov, undefined = cov_eval(model, ss, tt, return_undefined=True)
    upper = np.triu(cov)
    cov = upper + np.triu(cov, 1).T
    var = model.variance.sigma_x_sq(grid)
    np.fill_diagonal(cov, var)
    if psd_projection:
        vals, vecs = np.linalg.eigh(cov)
        cov = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        cov = (cov + cov.T) / 2
    n_undef = int(np.count_nonzero(np.triu(undefined, 1))) * 2
    return GridOutput(grid, cov, model.mean(grid), var, n_undef)


def fpca(model: CovarianceModel, grid=None, n_components: Optional[int] = None):
    """Eigenvalues and L2-normalised eigenfunctions of the covariance on ``grid``.

    Uses trapezoid quadrature weights; returns ``(eigenvalues, eigenfunctions)``
    with eigenfunctions as columns, largest eigenvalue first.
    """
    out = emit_grid(model, grid)
    g = out.grid
    w = np.zeros(g.size)
    dx = np.diff(g)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    sw = np.sqrt(w)
    vals, vecs = np.linalg.eigh(sw[:, None] * out.cov * sw[None, :])
    idx = np.argsort(vals)[::-1]
    vals, vecs = vals[idx], vecs[:, idx] / sw[:, None]
    if n_components is not None:
        vals, vecs = vals[:n_components], vecs[:, :n_components]
    return vals, vecs
