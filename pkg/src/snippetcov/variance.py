"""Variance function of the latent process."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import SnippetDataset, check_grid, eval_grid, trapezoid
from .noise import NoiseVariance
from .smoothing import SmoothEstimate, estimate_mean, smooth_with_cv

RELATIVE_FLOOR = 1e-6


def squared_residuals(ds: SnippetDataset, mu_hat: SmoothEstimate) -> np.ndarray:
    return (ds.values - mu_hat(ds.times)) ** 2


def estimate_varsigma_sq(ds: SnippetDataset, mu_hat: SmoothEstimate, **config) -> SmoothEstimate:
    """Smooth the squared mean residuals; estimates latent variance plus noise variance.

    The bandwidth is chosen by its own CV run unless ``bandwidth`` is given;
    other keyword arguments are those of :func:`smoothing.smooth_with_cv`.
    """
    return smooth_with_cv(ds, squared_residuals(ds, mu_hat), **config)


def l2_norm(fn_values, grid) -> float:
    """L2 norm of the square root of the positive part of ``fn_values``."""
    return float(np.sqrt(trapezoid(np.maximum(fn_values, 0.0), grid)))


def varsigma_l2_norm(ds: SnippetDataset, grid=None, **config) -> float:
    """Mean fit, residual second-moment fit, then its L2 norm on ``grid``."""
    if grid is None:
        grid = eval_grid(ds.domain_lo, ds.domain_hi)
    mu = estimate_mean(ds, **config)
    vs = estimate_varsigma_sq(ds, mu, **config)
    return l2_norm(vs(grid), grid)


@dataclass(frozen=True)
class VarianceEstimate:
    varsigma_sq: SmoothEstimate
    sigma0_sq: float
    floor: float
    l2_norm_varsigma: float
    grid: np.ndarray

    def sigma_x_sq(self, t) -> np.ndarray:
        return np.maximum(self.varsigma_sq(t) - self.sigma0_sq, self.floor)

    def sigma_x(self, t) -> np.ndarray:
        return np.sqrt(self.sigma_x_sq(t))


def positivity_floor(varsigma_on_grid) -> float:
    top = float(np.max(varsigma_on_grid))
    return RELATIVE_FLOOR * top if top > 0 else 0.0


def assemble_variance(
    varsigma: SmoothEstimate,
    noise: NoiseVariance | float,
    grid,
    floor: Optional[float] = None,
) -> VarianceEstimate:
    """Subtract the noise variance and clamp at a small relative floor.

    ``floor`` defaults to ``1e-6 * max(varsigma_sq on grid)`` (0 when that
    maximum is not positive).
    """
    grid = np.asarray(grid, dtype=float)
    sigma0_sq = noise.sigma0_sq if isinstance(noise, NoiseVariance) else float(noise)
    values = varsigma(grid)
    if floor is None:
        floor = positivity_floor(values)
    return VarianceEstimate(varsigma, float(sigma0_sq), float(floor), l2_norm(values, grid), grid)


def check_domain_grid(ds: SnippetDataset, grid) -> np.ndarray:
    if grid is None:
        return eval_grid(ds.domain_lo, ds.domain_hi)
    return check_grid(grid, ds.domain_lo, ds.domain_hi)
