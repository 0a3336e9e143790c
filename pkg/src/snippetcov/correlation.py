"""Parametric correlation families.

Each family maps a parameter vector ``theta`` to a correlation function and
knows its admissible parameter set, a bijection onto an unconstrained space
used by the optimiser, and a default set of starting values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln, logit

from .exceptions import InvalidParameters
from .special import log_bessel_k

# lags whose scaled Matern argument is below this are treated as zero lag
MATERN_ZERO_LAG = 1e-10
# psi(t)**2 below this marks a point where every basis function vanishes
FOURIER_ZERO = 1e-20
_LOG_BOUND = 30.0
_MATERN_MAX_ORDER = 100.0


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = False
    hi_closed: bool = False

    def contains(self, x: float) -> bool:
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return bool(above and below)


@dataclass(frozen=True)
class ParamDomain:
    """Constraint set: a box of intervals, a probability simplex, or a product of both."""

    kind: str  # "box", "simplex" or "product"
    intervals: tuple = ()
    simplex_dim: int = 0
    parts: tuple = ()

    @property
    def size(self) -> int:
        if self.kind == "box":
            return len(self.intervals)
        if self.kind == "simplex":
            return self.simplex_dim
        return sum(p.size for p in self.parts)

    def contains(self, theta, atol: float = 1e-12) -> bool:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.size or not np.all(np.isfinite(theta)):
            return False
        if self.kind == "box":
            return all(iv.contains(x) for iv, x in zip(self.intervals, theta))
        if self.kind == "simplex":
            return bool(np.all(theta >= 0) and abs(theta.sum() - 1.0) <= atol * max(1, theta.size))
        pos = 0
        for p in self.parts:
            if not p.contains(theta[pos:pos + p.size], atol):
                return False
            pos += p.size
        return True


_POSITIVE = Interval(0.0, math.inf)


def _to_log(x):
    return np.log(x)


def _from_log(z, hi=_LOG_BOUND):
    return np.exp(np.clip(z, -_LOG_BOUND, hi))


def _simplex_from(z):
    """Softmax with the first coordinate pinned at zero: R^(d-1) -> open simplex."""
    full = np.concatenate([[0.0], np.clip(z, -_LOG_BOUND, _LOG_BOUND)])
    full -= full.max()
    e = np.exp(full)
    return e / e.sum()


def _simplex_to(theta):
    theta = np.maximum(np.asarray(theta, dtype=float), 1e-300)
    return np.log(theta[1:]) - np.log(theta[0])


class CorrelationFamily:
    """Base class; subclasses define the correlation formula and parameter handling."""

    name = "base"
    stationary = True

    @property
    def n_params(self) -> int:
        return self.domain().size

    def domain(self) -> ParamDomain:
        raise NotImplementedError

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if not self.domain().contains(theta):
            raise InvalidParameters(f"{self.name}: theta={theta.tolist()} outside {self.domain()}")
        return theta

    # stationary families implement lag(theta, d) on d >= 0
    def lag(self, theta, d):
        raise NotImplementedError

    def correlation(self, theta, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return self.lag(theta, np.abs(s - t))

    @property
    def n_free(self) -> int:
        return self.n_params

    def to_unconstrained(self, theta) -> np.ndarray:
        raise NotImplementedError

    def from_unconstrained(self, z) -> np.ndarray:
        raise NotImplementedError

    def start_points(self, delta_hat: float) -> list:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"family": self.name}

    def __eq__(self, other):
        return type(self) is type(other) and self.describe() == other.describe()

    def __hash__(self):
        return hash(repr(self.describe()))

    def __repr__(self):
        return f"{type(self).__name__}()"


class _TwoParam(CorrelationFamily):
    """Shape parameter first, range parameter second."""

    shape_starts = (0.5, 1.5)

    def start_points(self, delta_hat):
        ranges = [f * delta_hat for f in (0.1, 0.5, 1.0, 2.0)]
        return [np.array([a, r]) for r in ranges for a in self.shape_starts]


class PowerExponential(_TwoParam):
    """``exp(-(|s-t| / theta2) ** theta1)`` with ``0 < theta1 <= 2``."""

    name = "powerexp"

    def domain(self):
        return ParamDomain("box", (Interval(0.0, 2.0, hi_closed=True), _POSITIVE))

    def lag(self, theta, d):
        a, r = theta
        return np.exp(-((np.asarray(d) / r) ** a))

    def lag_gradient(self, theta, d):
        a, r = theta
        d = np.asarray(d, dtype=float)
        u = d / r
        ua = u**a
        rho = np.exp(-ua)
        with np.errstate(divide="ignore", invalid="ignore"):
            dlog = np.where(d > 0, ua * np.log(np.where(d > 0, u, 1.0)), 0.0)
        return np.stack([-rho * dlog, rho * a * ua / r])

    def to_unconstrained(self, theta):
        return np.array([logit(min(theta[0] / 2.0, 1 - 1e-16)), _to_log(theta[1])])

    def from_unconstrained(self, z):
        return np.array([2.0 * expit(z[0]), _from_log(z[1])])


class RationalQuadratic(_TwoParam):
    """``(1 + |s-t|**2 / theta2**2) ** (-theta1)``."""

    name = "rationalquad"
    shape_starts = (0.5, 2.0)

    def domain(self):
        return ParamDomain("box", (_POSITIVE, _POSITIVE))

    def lag(self, theta, d):
        a, r = theta
        return (1.0 + (np.asarray(d) / r) ** 2) ** (-a)

    def lag_gradient(self, theta, d):
        a, r = theta
        d = np.asarray(d, dtype=float)
        base = 1.0 + (d / r) ** 2
        rho = base ** (-a)
        return np.stack([-rho * np.log(base), rho * a * (2.0 * d * d / r**3) / base])

    def to_unconstrained(self, theta):
        return _to_log(np.asarray(theta, dtype=float))

    def from_unconstrained(self, z):
        return _from_log(np.asarray(z))


class Matern(_TwoParam):
    """Matern correlation with smoothness ``theta1`` and range ``theta2``."""

    name = "matern"

    def domain(self):
        return ParamDomain("box", (_POSITIVE, _POSITIVE))

    def lag(self, theta, d):
        nu, r = float(theta[0]), float(theta[1])
        d = np.asarray(d, dtype=float)
        z = math.sqrt(2.0 * nu) * d / r
        out = np.ones(z.shape)
        far = z >= MATERN_ZERO_LAG
        if np.any(far):
            zf = z[far]
            log_rho = nu * np.log(zf) + log_bessel_k(nu, zf) - gammaln(nu) - (nu - 1.0) * math.log(2.0)
            out[far] = np.minimum(np.exp(log_rho), 1.0)
        return out if out.ndim else float(out)

    def to_unconstrained(self, theta):
        return _to_log(np.asarray(theta, dtype=float))

    def from_unconstrained(self, z):
        return np.array([_from_log(z[0], math.log(_MATERN_MAX_ORDER)), _from_log(z[1])])


class FourierBasis(CorrelationFamily):
    """Normalised sum of sine-basis products with simplex weights.

    ``kappa(s, t) = sum_j theta_j phi_j(s) phi_j(t) / (psi(s) psi(t))`` with
    ``phi_j(t) = sqrt(2) sin(2 j pi u)``, ``u`` the position of ``t`` in the
    domain, and ``psi(t)**2 = sum_j theta_j phi_j(t)**2``. Off-diagonal values
    at points where ``psi`` vanishes are ``nan``.
    """

    name = "fourier"
    stationary = False

    def __init__(self, dim: int, domain: Sequence[float] = (0.0, 1.0)):
        if int(dim) < 1:
            raise InvalidParameters("FourierBasis needs dim >= 1")
        self.dim = int(dim)
        self.lo, self.hi = float(domain[0]), float(domain[1])

    def domain(self):
        return ParamDomain("simplex", simplex_dim=self.dim)

    def basis(self, t) -> np.ndarray:
        """Basis values with shape ``t.shape + (dim,)``."""
        u = (np.asarray(t, dtype=float) - self.lo) / (self.hi - self.lo)
        j = np.arange(1, self.dim + 1)
        return math.sqrt(2.0) * np.sin(2.0 * math.pi * u[..., None] * j)

    def vanishing(self, t) -> np.ndarray:
        """Points where every basis function is zero."""
        return np.sum(self.basis(t) ** 2, axis=-1) < FOURIER_ZERO

    def correlation(self, theta, s, t):
        theta = np.asarray(theta, dtype=float)
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        ps, pt = self.basis(s), self.basis(t)
        return self._from_basis(theta, ps, pt, s == t)

    def _from_basis(self, theta, ps, pt, same):
        num = (ps * pt) @ theta
        psi2_s = (ps * ps) @ theta
        psi2_t = (pt * pt) @ theta
        ok = (psi2_s >= FOURIER_ZERO) & (psi2_t >= FOURIER_ZERO)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(ok, num / np.sqrt(psi2_s * psi2_t), np.nan)
        out = np.clip(out, -1.0, 1.0)
        return np.where(same, 1.0, out)

    @property
    def n_free(self):
        return self.dim - 1

    def to_unconstrained(self, theta):
        return _simplex_to(theta)

    def from_unconstrained(self, z):
        return _simplex_from(np.asarray(z, dtype=float))

    def start_points(self, delta_hat):
        if self.dim == 1:
            return [np.ones(1)]
        heavy = np.full(self.dim, 0.1 / (self.dim - 1))
        heavy[0] = 0.9
        return [np.full(self.dim, 1.0 / self.dim), heavy]

    def describe(self):
        return {"family": self.name, "dim": self.dim, "domain": [self.lo, self.hi]}

    def __repr__(self):
        return f"FourierBasis(dim={self.dim}, domain=({self.lo}, {self.hi}))"


class ConvexMix(CorrelationFamily):
    """Convex combination of component families.

    ``theta`` is the weight vector followed by each component's parameters.
    """

    name = "mix"

    def __init__(self, components: Sequence[CorrelationFamily]):
        if len(components) < 1:
            raise InvalidParameters("ConvexMix needs at least one component")
        self.components = tuple(components)
        self.stationary = all(c.stationary for c in self.components)

    def domain(self):
        return ParamDomain(
            "product", parts=(ParamDomain("simplex", simplex_dim=len(self.components)),) + tuple(
                c.domain() for c in self.components
            )
        )

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = len(self.components)
        out = [theta[:k]]
        pos = k
        for c in self.components:
            out.append(theta[pos:pos + c.n_params])
            pos += c.n_params
        return out[0], out[1:]

    def lag(self, theta, d):
        w, parts = self.split(theta)
        return sum(wk * c.lag(p, d) for wk, c, p in zip(w, self.components, parts))

    def correlation(self, theta, s, t):
        w, parts = self.split(theta)
        return sum(wk * c.correlation(p, s, t) for wk, c, p in zip(w, self.components, parts))

    @property
    def n_free(self):
        return len(self.components) - 1 + sum(c.n_free for c in self.components)

    def to_unconstrained(self, theta):
        w, parts = self.split(theta)
        return np.concatenate([_simplex_to(w)] + [c.to_unconstrained(p) for c, p in zip(self.components, parts)])

    def from_unconstrained(self, z):
        z = np.asarray(z, dtype=float)
        k = len(self.components)
        out = [_simplex_from(z[:k - 1])]
        pos = k - 1
        for c in self.components:
            out.append(np.asarray(c.from_unconstrained(z[pos:pos + c.n_free]), dtype=float))
            pos += c.n_free
        return np.concatenate(out)

    def start_points(self, delta_hat):
        w = np.full(len(self.components), 1.0 / len(self.components))
        lists = [c.start_points(delta_hat) for c in self.components]
        count = max(len(lst) for lst in lists)
        return [np.concatenate([w] + [lst[i % len(lst)] for lst in lists]) for i in range(count)]

    def describe(self):
        return {"family": self.name, "components": [c.describe() for c in self.components]}

    def __repr__(self):
        return f"ConvexMix({list(self.components)!r})"


FAMILIES = {
    "powerexp": PowerExponential,
    "rationalquad": RationalQuadratic,
    "matern": Matern,
}


def make_family(spec, domain=(0.0, 1.0)) -> CorrelationFamily:
    """Family from a name (``"matern"``, ``"powerexp"``, ``"rationalquad"``,
    ``"fourier:<dim>"``) or a ``describe()`` dict."""
    if isinstance(spec, CorrelationFamily):
        return spec
    if isinstance(spec, dict):
        name = spec["family"]
        if name == "fourier":
            return FourierBasis(spec["dim"], spec.get("domain", domain))
        if name == "mix":
            return ConvexMix([make_family(c, domain) for c in spec["components"]])
        return FAMILIES[name]()
    name = str(spec).lower()
    if name.startswith("fourier"):
        _, _, dim = name.partition(":")
        return FourierBasis(int(dim or 1), domain)
    try:
        return FAMILIES[name]()
    except KeyError:
        raise ValueError(f"unknown correlation family {spec!r}") from None


def param_domain(family, dim: int | None = None) -> ParamDomain:
    """Constraint descriptor for a family (``dim`` sets the Fourier basis size)."""
    if isinstance(family, str) and family.lower() == "fourier":
        return FourierBasis(dim or 1).domain()
    return make_family(family).domain()


@dataclass(frozen=True)
class CorrelationModel:
    """A family together with a parameter vector; call it as ``model(s, t)``."""

    family: CorrelationFamily
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", self.family.check(self.theta))

    @property
    def dim(self) -> int:
        return self.theta.size

    def __call__(self, s, t):
        return corr_eval(self, s, t)

    def to_dict(self) -> dict:
        return {**self.family.describe(), "theta": [float(x) for x in self.theta]}

    @classmethod
    def from_dict(cls, d: dict) -> "CorrelationModel":
        spec = {k: v for k, v in d.items() if k != "theta"}
        return cls(make_family(spec), np.asarray(d["theta"], dtype=float))


def corr_eval(model: CorrelationModel, s, t):
    """Correlation at ``(s, t)``; exactly 1 on the diagonal, ``nan`` where undefined."""
    scalar = np.ndim(s) == 0 and np.ndim(t) == 0
    s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    lo, hi = np.minimum(s_arr, t_arr), np.maximum(s_arr, t_arr)
    out = np.asarray(model.family.correlation(model.theta, lo, hi), dtype=float)
    out = np.where(lo == hi, 1.0, out)
    return float(out) if scalar else out
