"""Quantile-level primitives: ALD constants, check loss, error quantile functions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from hsbqr.errors import DimensionError, DomainError


def _check_level(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {p}")
    return p


@dataclass(frozen=True)
class QuantileSpec:
    """Quantile level with the constants of the normal-exponential ALD mixture.

    ``theta`` is the location weight on the latent exponential and ``tau2``
    the variance weight, so that ``eps = theta*z + tau*sqrt(sigma*z)*u``.
    """

    p: float
    theta: float
    tau2: float


def quantile_constants(p: float) -> QuantileSpec:
    p = _check_level(p)
    q = p * (1.0 - p)
    return QuantileSpec(p=p, theta=(1.0 - 2.0 * p) / q, tau2=2.0 / q)


@dataclass(frozen=True)
class QuantileGrid:
    levels: tuple[float, ...] = field(
        default_factory=lambda: tuple(round(0.05 * i, 10) for i in range(1, 20))
    )

    def __post_init__(self):
        lv = tuple(float(x) for x in self.levels)
        if len(lv) == 0:
            raise DomainError("quantile grid is empty")
        for x in lv:
            _check_level(x)
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise DomainError("quantile grid must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def equidistant(cls, n: int) -> "QuantileGrid":
        """``n`` levels ``i/(n+1)``; ``n=19`` gives 0.05, ..., 0.95."""
        if n < 1:
            raise DomainError("grid size must be positive")
        return cls(tuple(round(i / (n + 1), 10) for i in range(1, n + 1)))

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels)

    def index(self, p: float, tol: float = 1e-9) -> int:
        for i, x in enumerate(self.levels):
            if abs(x - p) <= tol:
                return i
        raise KeyError(p)


def check_loss(u, p: float):
    """Check loss ``[(1-p) I(u<=0) + p I(u>0)] |u|``, elementwise."""
    u = np.asarray(u, dtype=float)
    out = np.where(u > 0, p * u, (p - 1.0) * u)
    return out if out.ndim else float(out)


# --- error distributions used by the simulation designs -------------------


def _bisect(f: Callable[[float], float], target: float, lo: float, hi: float, tol: float) -> float:
    while f(lo) > target:
        lo *= 2.0
    while f(hi) < target:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def t3_cdf(x):
    """Closed-form CDF of Student's t with 3 degrees of freedom."""
    x = np.asarray(x, dtype=float)
    s = x / math.sqrt(3.0)
    out = 0.5 + (s / (1.0 + s * s) + np.arctan(s)) / math.pi
    return out if out.ndim else float(out)


def t3_ppf(p: float, tol: float = 1e-12) -> float:
    p = _check_level(p)
    if p == 0.5:
        return 0.0
    return _bisect(t3_cdf, p, -1.0, 1.0, tol)


def normal_ppf(p: float) -> float:
    return float(ndtri(_check_level(p)))


def uniform02_ppf(p: float) -> float:
    return 2.0 * _check_level(p)


@dataclass(frozen=True)
class ErrorDistribution:
    name: str
    ppf: Callable[[float], float]
    cdf: Callable

    def __call__(self, p: float) -> float:
        return self.ppf(p)


ERROR_DISTRIBUTIONS = {
    "normal": ErrorDistribution("normal", normal_ppf, lambda x: ndtr(x)),
    "t3": ErrorDistribution("t3", t3_ppf, t3_cdf),
    "uniform02": ErrorDistribution("uniform02", uniform02_ppf, lambda x: np.clip(np.asarray(x) / 2.0, 0.0, 1.0)),
}


def true_quantile_coefficients(beta, vartheta, inv_cdf, p: float) -> np.ndarray:
    """Quantile-specific coefficients ``beta + vartheta * F^{-1}(p)``.

    ``inv_cdf`` is either a callable or a key of ``ERROR_DISTRIBUTIONS``.
    """
    beta = np.asarray(beta, dtype=float)
    vartheta = np.asarray(vartheta, dtype=float)
    if beta.shape != vartheta.shape:
        raise DimensionError(f"beta has shape {beta.shape}, vartheta {vartheta.shape}")
    if not np.all((vartheta == 0) | (vartheta == 1)):
        raise DomainError("vartheta entries must be 0 or 1")
    if vartheta.size and vartheta[0] != 1:
        raise DomainError("the intercept must be a location shifter (vartheta[0] == 1)")
    if isinstance(inv_cdf, str):
        inv_cdf = ERROR_DISTRIBUTIONS[inv_cdf].ppf
    return beta + vartheta * inv_cdf(_check_level(p))
