"""Seeded random variates for the Gibbs sampler.

All samplers take a ``numpy.random.Generator`` and accept array-valued
parameters, broadcasting them against ``size`` the way numpy does.
Exponential-family distributions are parameterized by RATE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaincinv

from hsbqr.errors import DomainError


@dataclass(frozen=True)
class RngHandle:
    """A (seed, stream) pair; distinct streams are statistically independent."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngHandle":
        return RngHandle(self.seed, stream)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return RngHandle(seed, stream).generator()


def _positive(name, x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} must be strictly positive")
    return x


def _out(x):
    return x if np.ndim(x) else float(x)


def draw_standard_normal(rng: np.random.Generator, size=None):
    return rng.standard_normal(size)


def draw_exponential(rng: np.random.Generator, rate, size=None):
    rate = _positive("rate", rate)
    return _out(rng.standard_exponential(size if size is not None else rate.shape) / rate)


def draw_inverse_gamma(rng: np.random.Generator, shape, rate, size=None):
    """Variate with density proportional to ``x^(-shape-1) exp(-rate/x)``."""
    shape = _positive("shape", shape)
    rate = _positive("rate", rate)
    return _out(rate / rng.standard_gamma(shape, size))


def draw_inverse_gaussian(rng: np.random.Generator, mean, shape, size=None):
    """Inverse Gaussian with location ``mean`` and shape (rate) ``shape``.

    Michael, Schucany & Haas (1976): take the smaller root of the quadratic
    implied by a chi-square(1) draw, then pick it or its reflection
    ``mean**2 / x`` with probability ``mean / (mean + x)``.
    """
    mean = _positive("location", mean)
    shape = _positive("shape", shape)
    if size is None:
        size = np.broadcast(mean, shape).shape
    nu = rng.standard_normal(size)
    r = mean * nu * nu / (2.0 * shape)
    # mean * (1 + r - sqrt(r^2 + 2r)), rewritten to avoid cancellation for large r
    x = mean / (1.0 + r + np.sqrt(r * (r + 2.0)))
    u = rng.random(size)
    out = np.where(u * (mean + x) <= mean, x, mean * mean / x)
    return _out(out)


def draw_truncated_exponential(rng: np.random.Generator, rate, upper, size=None):
    """Exponential(rate) restricted to ``(0, upper)`` by inverse-CDF sampling.

    ``rate == 0`` is accepted and gives the uniform limit.
    """
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0) or np.any(~np.isfinite(rate)):
        raise DomainError("rate must be nonnegative and finite")
    upper = _positive("upper bound", upper)
    if size is None:
        size = np.broadcast(rate, upper).shape
    v = rng.random(size)
    ru = rate * upper
    with np.errstate(divide="ignore", invalid="ignore"):
        # -log(1 - v (1 - exp(-r u))) / r
        x = -np.log1p(v * np.expm1(-ru)) / rate
    x = np.where(ru < 1e-12, v * upper, x)
    return _out(np.minimum(x, np.nextafter(upper, 0)))


def draw_truncated_gamma(rng: np.random.Generator, shape, rate, upper, size=None):
    """Gamma(shape, rate) restricted to ``(0, upper)`` by inverse-CDF sampling.

    When the mass below ``upper`` underflows, the density on the interval is
    proportional to ``x^(shape-1)`` and is sampled as such.
    """
    shape = _positive("shape", shape)
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise DomainError("rate must be nonnegative")
    upper = _positive("upper bound", upper)
    if size is None:
        size = np.broadcast(shape, rate, upper).shape
    v = rng.random(size)
    mass = gammainc(shape, rate * upper)
    tiny = mass < 1e-280
    safe_rate = np.where(tiny, 1.0, rate)
    x = gammaincinv(shape, v * np.where(tiny, 1.0, mass)) / safe_rate
    x = np.where(tiny, upper * v ** (1.0 / shape), x)
    return _out(np.minimum(x, np.nextafter(upper, 0)))
