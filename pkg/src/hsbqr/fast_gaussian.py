"""Draws from N(mu, Sigma) with Sigma = (Phi'Phi + D^-1)^-1 and mu = Sigma Phi' alpha.

``D`` is the prior covariance diagonal. Two backends produce the same
distribution:

* ``sample_fast`` works in the T x T space, cost O(T^2 K). Preferable when
  K exceeds T.
* ``sample_cholesky`` factorizes the K x K precision, cost O(K^3).

Every function accepts leading batch dimensions: ``Phi`` of shape
``(..., T, K)``, ``D`` of shape ``(..., K)`` and ``alpha`` of shape
``(..., T)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from hsbqr.errors import DimensionError, DomainError, NumericalError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class StructuredGaussian:
    Phi: np.ndarray
    D: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        Phi = np.asarray(self.Phi, dtype=float)
        D = np.asarray(self.D, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        if Phi.ndim < 2:
            raise DimensionError("Phi must be at least two-dimensional")
        if Phi.shape[-2] != alpha.shape[-1]:
            raise DimensionError(f"Phi has {Phi.shape[-2]} rows but alpha has length {alpha.shape[-1]}")
        if Phi.shape[-1] != D.shape[-1]:
            raise DimensionError(f"Phi has {Phi.shape[-1]} columns but D has length {D.shape[-1]}")
        if np.any(~(D > 0)):
            raise DomainError("prior covariance diagonal D must be strictly positive")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_obs(self) -> int:
        return self.Phi.shape[-2]

    @property
    def n_coef(self) -> int:
        return self.Phi.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return np.broadcast_shapes(self.Phi.shape[:-2], self.D.shape[:-1], self.alpha.shape[:-1])


def _cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    diag = np.diagonal(M, axis1=-2, axis2=-1)
    scale = np.mean(diag, axis=-1)[..., None, None]
    eye = np.eye(M.shape[-1])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(M + jitter * scale * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(M)
    raise NumericalError(
        f"SPD factorization failed after jitter up to {JITTER_MAX:g} x mean diagonal; "
        f"condition number {np.max(cond):.3e}, min diagonal {np.min(diag):.3e}"
    )


def _cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L') x = b for vector right-hand sides, batched."""
    if L.ndim == 2:
        return scipy.linalg.cho_solve((L, True), b, check_finite=False)
    y = np.linalg.solve(L, b[..., None])
    return np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]


def _solve_upper_t(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L' x = b."""
    if L.ndim == 2:
        return scipy.linalg.solve_triangular(L, b, lower=True, trans="T", check_finite=False)
    return np.linalg.solve(np.swapaxes(L, -1, -2), b[..., None])[..., 0]


def fast_from_noise(sg: StructuredGaussian, u_std: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Data-augmentation draw given standard normal noise ``u_std`` (K) and ``delta`` (T)."""
    if sg.batch_shape and sg.n_obs >= _LOOP_MIN_K:
        return _loop_batch(fast_from_noise, sg, u_std, delta)
    Phi, D, alpha = sg.Phi, sg.D, sg.alpha
    u = np.sqrt(D) * u_std
    xi = np.einsum("...tk,...k->...t", Phi, u) + delta
    PhiD = Phi * D[..., None, :]
    M = PhiD @ np.swapaxes(Phi, -1, -2)
    M = M + np.eye(M.shape[-1])
    w = _cho_solve(_cholesky(M), alpha - xi)
    return u + np.einsum("...tk,...t->...k", PhiD, w)


# above this size a Python loop over 2-D LAPACK/syrk calls beats batched LU
_LOOP_MIN_K = 64


def _loop_batch(fn, sg: StructuredGaussian, *noise):
    shape = sg.batch_shape
    Phi = np.broadcast_to(sg.Phi, shape + sg.Phi.shape[-2:]).reshape((-1,) + sg.Phi.shape[-2:])
    D = np.broadcast_to(sg.D, shape + sg.D.shape[-1:]).reshape(-1, sg.n_coef)
    alpha = np.broadcast_to(sg.alpha, shape + sg.alpha.shape[-1:]).reshape(-1, sg.n_obs)
    flat = [np.broadcast_to(e, shape + e.shape[-1:]).reshape(-1, e.shape[-1]) for e in noise]
    out = np.stack([fn(StructuredGaussian(Phi[b], D[b], alpha[b]), *(e[b] for e in flat)) for b in range(Phi.shape[0])])
    return out.reshape(shape + (sg.n_coef,))


def cholesky_from_noise(sg: StructuredGaussian, eps: np.ndarray) -> np.ndarray:
    """Precision-factor draw ``mu + L'^{-1} eps`` given standard normal ``eps`` (K)."""
    if sg.batch_shape and sg.n_coef >= _LOOP_MIN_K:
        return _loop_batch(cholesky_from_noise, sg, eps)
    Phi, D, alpha = sg.Phi, sg.D, sg.alpha
    PhiT = np.swapaxes(Phi, -1, -2)
    A = PhiT @ Phi + (1.0 / D)[..., :, None] * np.eye(D.shape[-1])
    L = _cholesky(A)
    mu = _cho_solve(L, np.einsum("...tk,...t->...k", Phi, alpha))
    return mu + _solve_upper_t(L, eps)


def sample_fast(rng: np.random.Generator, sg: StructuredGaussian) -> np.ndarray:
    shape = sg.batch_shape
    u_std = rng.standard_normal(shape + (sg.n_coef,))
    delta = rng.standard_normal(shape + (sg.n_obs,))
    return fast_from_noise(sg, u_std, delta)


def sample_cholesky(rng: np.random.Generator, sg: StructuredGaussian) -> np.ndarray:
    eps = rng.standard_normal(sg.batch_shape + (sg.n_coef,))
    return cholesky_from_noise(sg, eps)


def sample(rng: np.random.Generator, sg: StructuredGaussian, backend: str = "auto") -> np.ndarray:
    if backend == "auto":
        backend = "fast" if sg.n_coef > sg.n_obs else "cholesky"
    if backend == "fast":
        return sample_fast(rng, sg)
    if backend == "cholesky":
        return sample_cholesky(rng, sg)
    raise ValueError(f"unknown backend {backend!r}")
