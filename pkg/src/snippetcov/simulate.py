"""Synthetic snippet data with known mean, variance and covariance.

Each subject draws from its own random substream keyed by its index, so a
dataset of ``n`` subjects is the prefix of one with more subjects under the
same seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Union

import numpy as np

from .data import SnippetDataset, Subject, eval_grid, trapezoid
from .exceptions import FactorizationFailure

SNR_GRID_SIZE = 201
DEFAULT_M = {"sparse": 4, "dense": 26}
CHOL_JITTER = 1e-12


def _phi(k, t):
    return math.sqrt(2.0) * np.sin(2.0 * k * np.pi * np.asarray(t, dtype=float))


def _var_I(t):
    t = np.asarray(t, dtype=float)
    return np.sqrt(t) * np.exp(-((t - 0.1) ** 2) / 10.0) + 1.0


def _cov_I(s, t):
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    return np.sqrt(_var_I(s) * _var_I(t)) * np.exp(-np.abs(s - t))


_K_II = np.arange(1, 51)


def _cov_II(s, t):
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    out = np.zeros(s.shape)
    for k in _K_II:
        out += 2.0 * k**-2.0 * _phi(k, s) * _phi(k, t)
    return out


_J_III = np.arange(1, 6)
_W_III = np.exp(-np.abs(_J_III[:, None] - _J_III[None, :])) / 5.0


def _cov_III(s, t):
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    ps = np.stack([_phi(j, s) for j in _J_III])
    pt = np.stack([_phi(k, t) for k in _J_III])
    return np.einsum("j...,jk,k...->...", ps, _W_III, pt)


COVARIANCES: dict = {"I": _cov_I, "II": _cov_II, "III": _cov_III}

MEANS: dict = {
    "mu1": lambda t: 2.0 * np.asarray(t, dtype=float) ** 2 * np.cos(2.0 * np.pi * np.asarray(t, dtype=float)),
    "mu2": lambda t: np.exp(np.asarray(t, dtype=float)) / 2.0,
    "zero": lambda t: np.zeros(np.shape(t)),
}

DEFAULT_MEAN = "mu1"


def get_covariance(setting) -> Callable:
    if callable(setting):
        return setting
    try:
        return COVARIANCES[str(setting).upper()]
    except KeyError:
        raise ValueError(f"unknown covariance setting {setting!r}; expected one of {sorted(COVARIANCES)}") from None


def get_mean(mean) -> Callable:
    if callable(mean):
        return mean
    try:
        return MEANS[str(mean).lower()]
    except KeyError:
        raise ValueError(f"unknown mean {mean!r}; expected one of {sorted(MEANS)}") from None


def true_cov(setting, s, t) -> np.ndarray:
    return get_covariance(setting)(s, t)


def true_variance(setting, t) -> np.ndarray:
    return get_covariance(setting)(t, t)


def true_mean(mean, t) -> np.ndarray:
    return get_mean(mean)(t)


@dataclass(frozen=True)
class SimConfig:
    """Simulation design.

    Give exactly one of ``sigma0_sq`` and ``snr``; with ``snr`` the noise
    variance is the integrated latent variance over the domain divided by
    ``snr``. ``design`` is ``"sparse"`` (``m_i`` uniform on
    ``{2, ..., 2m-2}``, uniform times in the window) or ``"dense"`` (``m``
    equally spaced times covering the window). ``m`` defaults to 4 for the
    sparse design and 26 for the dense one.
    """

    setting: Union[str, Callable] = "I"
    n: int = 50
    m: Optional[int] = None
    design: str = "sparse"
    delta: float = 0.25
    mean: Optional[Union[str, Callable]] = None
    sigma0_sq: Optional[float] = None
    snr: Optional[float] = 2.0
    seed: int = 0
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.sigma0_sq is not None and self.snr is not None:
            object.__setattr__(self, "snr", None)
        if self.sigma0_sq is None and self.snr is None:
            raise ValueError("one of sigma0_sq and snr is required")
        if self.snr is not None and not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.sigma0_sq is not None and not self.sigma0_sq >= 0:
            raise ValueError("sigma0_sq must be nonnegative")
        if self.design not in ("sparse", "dense"):
            raise ValueError(f"design must be 'sparse' or 'dense', got {self.design!r}")
        if self.m is None:
            object.__setattr__(self, "m", DEFAULT_M[self.design])
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.m < 2:
            raise ValueError("m must be at least 2")
        lo, hi = self.domain
        if not 0 < self.delta <= hi - lo:
            raise ValueError("delta must lie in (0, domain width]")

    @property
    def mean_name(self):
        return DEFAULT_MEAN if self.mean is None else self.mean

    def noise_variance(self) -> float:
        if self.sigma0_sq is not None:
            return float(self.sigma0_sq)
        grid = np.linspace(*self.domain, SNR_GRID_SIZE)
        return float(trapezoid(true_variance(self.setting, grid), grid) / self.snr)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("setting", "mean"):
            if callable(d[key]):
                d[key] = getattr(d[key], "__name__", "custom")
        d["domain"] = list(self.domain)
        return d

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class Truth:
    setting: Union[str, Callable]
    mean_fn: Callable
    sigma0_sq: float
    domain: tuple

    def mean(self, t):
        return self.mean_fn(t)

    def variance(self, t):
        return true_variance(self.setting, t)

    def cov(self, s, t):
        return true_cov(self.setting, s, t)

    def on_grid(self, size: int = 51):
        g = eval_grid(*self.domain, size)
        ss, tt = np.meshgrid(g, g, indexing="ij")
        return g, self.mean(g), self.variance(g), self.cov(ss, tt)


def _cholesky(c: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        pass
    jitter = CHOL_JITTER * max(float(np.trace(c)), 0.0) / c.shape[0]
    try:
        return np.linalg.cholesky(c + jitter * np.eye(c.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure(f"covariance matrix of size {c.shape[0]} is not positive semidefinite") from exc


def subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _draw_times(cfg: SimConfig, rng) -> np.ndarray:
    lo, hi = cfg.domain
    half = cfg.delta / 2
    centre = rng.uniform(lo + half, hi - half)
    a, b = centre - half, centre + half
    if cfg.design == "dense":
        return np.linspace(a, b, cfg.m)
    m_i = int(rng.integers(2, 2 * cfg.m - 1))
    return np.sort(rng.uniform(a, b, m_i))


def sample_dataset(cfg: SimConfig) -> tuple[SnippetDataset, Truth]:
    """Draw one dataset; returns it with the generating truth."""
    cov = get_covariance(cfg.setting)
    mean = get_mean(cfg.mean_name)
    sigma0 = math.sqrt(cfg.noise_variance())
    subjects = []
    for i in range(cfg.n):
        rng = subject_rng(cfg.seed, i)
        t = _draw_times(cfg, rng)
        c = cov(t[:, None], t[None, :])
        z = rng.standard_normal(t.size)
        x = mean(t) + _cholesky(c) @ z
        y = x + sigma0 * rng.standard_normal(t.size)
        subjects.append(Subject(str(i), t, y))
    ds = SnippetDataset(cfg.domain[0], cfg.domain[1], tuple(subjects))
    return ds, Truth(cfg.setting, mean, sigma0**2, tuple(cfg.domain))


def write_dataset_csv(ds: SnippetDataset, path) -> None:
    """Write ``subject_id,t,y`` rows, full float precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,t,y\n")
        for s in ds.subjects:
            for t, y in zip(s.times, s.values):
                fh.write(f"{s.id},{float(t)!r},{float(y)!r}\n")
