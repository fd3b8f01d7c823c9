"""From quantile forecasts to densities, and the scores used to evaluate them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from hsbqr.errors import DimensionError, DomainError
from hsbqr.quantile import QuantileGrid, check_loss

KS_COEFFICIENTS = {0.01: 1.63, 0.05: 1.36, 0.10: 1.22}
DM_LEVELS = (0.10, 0.05, 0.01)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class QuantileForecastSet:
    grid: QuantileGrid
    values: np.ndarray  # (n_origins, n_levels)
    horizon: int
    origins: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    realizations: np.ndarray | None = None
    flagged: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != len(self.grid):
            raise DimensionError(f"{self.values.shape[1]} value columns for a grid of {len(self.grid)} levels")
        if self.realizations is not None:
            self.realizations = np.asarray(self.realizations, dtype=float)
            if self.realizations.shape != (self.values.shape[0],):
                raise DimensionError("one realization per origin is required")

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, p: float) -> np.ndarray:
        return self.values[:, self.grid.index(p)]


def sort_quantiles(values) -> tuple[np.ndarray, int]:
    """Ascending rearrangement and the number of adjacent crossings it repaired."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError("quantile values must be finite")
    crossings = int(np.sum(np.diff(v) < 0))
    return np.sort(v), crossings


def silverman_bandwidth(points: np.ndarray) -> float:
    n = points.size
    sd = points.std(ddof=1)
    iqr = np.subtract(*np.percentile(points, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = 0.9 * spread * n ** (-0.2)
    return max(h, 1e-6 * (points.max() - points.min()))


@dataclass(frozen=True)
class ForecastDensity:
    """Equal-weight Gaussian mixture centred on the sorted quantile forecasts."""

    points: np.ndarray
    bandwidth: float

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        u = (x[..., None] - self.points) / self.bandwidth
        out = np.exp(-0.5 * u * u).mean(axis=-1) / (self.bandwidth * _SQRT_2PI)
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = ndtr((x[..., None] - self.points) / self.bandwidth).mean(axis=-1)
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        centres = rng.choice(self.points, size=size)
        return centres + self.bandwidth * rng.standard_normal(size)

    def support(self, n: int = 512, pad: float = 4.0) -> np.ndarray:
        lo = self.points.min() - pad * self.bandwidth
        hi = self.points.max() + pad * self.bandwidth
        return np.linspace(lo, hi, n)

    def grid(self, n: int = 512) -> np.ndarray:
        """(n, 3) array of x, pdf, cdf for plotting."""
        x = self.support(n)
        return np.column_stack([x, self.pdf(x), self.cdf(x)])


def smooth_to_density(values, bandwidth: float | None = None) -> ForecastDensity:
    pts, _ = sort_quantiles(values)
    if np.unique(pts).size < 2:
        raise DomainError("at least two distinct quantile values are needed for a density")
    h = silverman_bandwidth(pts) if bandwidth is None else float(bandwidth)
    return ForecastDensity(pts, h)


def pit(density: ForecastDensity, realization: float) -> float:
    return float(density.cdf(realization))


@dataclass(frozen=True)
class KsResult:
    statistic: float
    n: int
    critical: dict

    def rejects(self, alpha: float) -> bool:
        return self.statistic > self.critical[alpha]

    def stars(self) -> str:
        return "*" * sum(self.rejects(a) for a in KS_COEFFICIENTS)


def ks_critical_values(n: int) -> dict:
    return {a: c / math.sqrt(n) for a, c in KS_COEFFICIENTS.items()}


def ks_uniformity(pits) -> KsResult:
    """One-sample KS distance of PIT values from the uniform CDF."""
    g = np.sort(np.asarray(pits, dtype=float).ravel())
    n = g.size
    if n == 0:
        raise DomainError("KS test needs at least one PIT value")
    if np.any((g < 0) | (g > 1)):
        raise DomainError("PIT values must lie in [0, 1]")
    i = np.arange(1, n + 1)
    stat = float(np.max(np.maximum(np.abs(i / n - g), np.abs(g - (i - 1) / n))))
    return KsResult(stat, n, ks_critical_values(n))


def ks_quantile_grid(forecasts: np.ndarray, realizations: np.ndarray, levels: Sequence[float]) -> KsResult:
    """Grid version: largest gap between each level and the share of realizations below it.

    This is a KS-type distance on as many points as there are levels, so the
    critical values use n = len(levels).
    """
    forecasts = np.atleast_2d(forecasts)
    hits = (np.asarray(realizations)[:, None] <= forecasts).mean(axis=0)
    stat = float(np.max(np.abs(hits - np.asarray(levels))))
    return KsResult(stat, len(levels), ks_critical_values(len(levels)))


def avg_log_score(densities: Sequence[ForecastDensity], realizations) -> float:
    realizations = np.asarray(realizations, dtype=float)
    if len(densities) != realizations.size:
        raise DimensionError("one density per realization is required")
    vals = np.array([d.pdf(y) for d, y in zip(densities, realizations)])
    return float(np.mean(np.log(np.maximum(vals, 1e-300))))


# --- quantile backtest ------------------------------------------------------


def _total_loss(resid: np.ndarray, p: float) -> np.ndarray:
    return np.sum(np.where(resid > 0, p * resid, (p - 1.0) * resid), axis=-1)


def _intercept_only(y: np.ndarray, p: float) -> tuple[float, float]:
    """Best horizontal line through a data point and its loss (exact)."""
    losses = _total_loss(y[None, :] - y[:, None], p)
    i = int(np.argmin(losses))
    return float(y[i]), float(losses[i])


def exact_bivariate_qr(v, y, p: float, tol: float = 1e-12) -> tuple[float, float]:
    """Exact minimizer of sum check_loss(y - b0 - b1 v, p).

    Some optimal line interpolates two observations, so enumerating every
    line through a pair of points (plus horizontal lines through each point)
    finds the optimum. Ties go to the lower loss, then the smaller |slope|.
    """
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    if v.shape != y.shape or v.ndim != 1:
        raise DimensionError("v and y must be one-dimensional and of equal length")
    if v.size < 2:
        raise DomainError("at least two observations are needed")
    if np.ptp(v) == 0:
        return _intercept_only(y, p)[0], 0.0
    i, j = np.triu_indices(v.size, k=1)
    keep = v[i] != v[j]
    i, j = i[keep], j[keep]
    slopes = np.concatenate([np.zeros(y.size), (y[j] - y[i]) / (v[j] - v[i])])
    intercepts = np.concatenate([y, y[i] - slopes[y.size :] * v[i]])
    losses = np.empty(slopes.size)
    chunk = max(1, 2_000_000 // v.size)
    for s in range(0, slopes.size, chunk):
        b0, b1 = intercepts[s : s + chunk, None], slopes[s : s + chunk, None]
        losses[s : s + chunk] = _total_loss(y[None, :] - b0 - b1 * v[None, :], p)
    tied = np.flatnonzero(losses <= losses.min() + tol)
    k = tied[np.argmin(np.abs(slopes[tied]))]
    return float(intercepts[k]), float(slopes[k])


def pseudo_r2(v, y, p: float) -> float:
    """1 - RASW/TASW for the backtest regression of y on fitted quantiles v."""
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    b0, b1 = exact_bivariate_qr(v, y, p)
    rasw = float(np.sum(check_loss(y - b0 - b1 * v, p)))
    _, tasw = _intercept_only(y, p)
    if tasw <= 0:
        return 0.0
    if rasw <= 1e-12 * tasw:  # round-off from an interpolating fit
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - rasw / tasw)))


# --- forecast comparison ----------------------------------------------------


@dataclass(frozen=True)
class DmResult:
    statistic: float
    pvalue: float
    flags: dict

    def stars(self) -> str:
        return "*" * sum(self.flags.values())


def dm_test(loss_a, loss_b, h: int = 1) -> DmResult:
    """Diebold-Mariano test on the loss differential ``loss_a - loss_b``.

    Rectangular-kernel long-run variance with h-1 autocovariance lags and the
    Harvey-Leybourne-Newbold small-sample factor; two-sided normal p-value.
    A positive statistic means ``loss_a`` is larger on average.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("loss series must be one-dimensional and of equal length")
    n = a.size
    if h < 1 or n <= h:
        raise DomainError(f"need 1 <= h < n, got h={h}, n={n}")
    d = a - b
    dbar = d.mean()
    dc = d - dbar
    gamma = [np.dot(dc[k:], dc[: n - k]) / n for k in range(h)]
    lrv = gamma[0] + 2.0 * sum(gamma[1:])
    if lrv <= 0:
        lrv = gamma[0]
    if lrv <= 0:
        stat = 0.0 if dbar == 0 else math.copysign(math.inf, dbar)
    else:
        stat = dbar / math.sqrt(lrv / n)
        stat *= math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
    pvalue = float(2.0 * (1.0 - ndtr(abs(stat)))) if math.isfinite(stat) else 0.0
    return DmResult(float(stat), pvalue, {lvl: pvalue < lvl for lvl in DM_LEVELS})
