"""Mean, noise variance and covariance estimation for functional snippets."""

from importlib.metadata import PackageNotFoundError, version

from .correlation import (
    ConvexMix,
    CorrelationModel,
    FourierBasis,
    Matern,
    PowerExponential,
    RationalQuadratic,
    corr_eval,
    make_family,
)
from .corrfit import FitResult, build_raw_pairs, fit_theta, objective, select_dn
from .covariance import CovarianceModel, PipelineConfig, cov_eval, emit_grid, fit_pipeline, fpca
from .data import SnippetDataset, Subject, estimate_span, eval_grid, validate_dataset
from .estimators import MeanEstimator, NoiseVarianceEstimator, SnippetCovariance
from .noise import estimate_noise_variance, estimate_noise_variance_hetero
from .simulate import SimConfig, sample_dataset, true_cov, true_variance
from .smoothing import estimate_mean, local_linear_fit
from .special import bessel_k
from .variance import assemble_variance, estimate_varsigma_sq

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    "ConvexMix",
    "CorrelationModel",
    "CovarianceModel",
    "FitResult",
    "FourierBasis",
    "Matern",
    "MeanEstimator",
    "NoiseVarianceEstimator",
    "PipelineConfig",
    "PowerExponential",
    "RationalQuadratic",
    "SimConfig",
    "SnippetCovariance",
    "SnippetDataset",
    "Subject",
    "assemble_variance",
    "bessel_k",
    "build_raw_pairs",
    "corr_eval",
    "cov_eval",
    "emit_grid",
    "estimate_mean",
    "estimate_noise_variance",
    "estimate_noise_variance_hetero",
    "estimate_span",
    "estimate_varsigma_sq",
    "eval_grid",
    "fit_pipeline",
    "fit_theta",
    "fpca",
    "local_linear_fit",
    "make_family",
    "objective",
    "sample_dataset",
    "select_dn",
    "true_cov",
    "true_variance",
    "validate_dataset",
]
