"""Gibbs sampler for Bayesian quantile regression under horseshoe or lasso shrinkage.

Working likelihood: ``y_t | z_t ~ N(x_t'beta + theta z_t, sigma tau2 z_t)`` with
``z_t ~ Exp(mean sigma)``. The sweep draws z, then sigma, then beta, then the
prior scales.

Every update works on arrays with arbitrary leading batch dimensions, so a
stack of independent chains (quantile levels, forecast origins) advances in
one vectorized sweep. ``run_chain`` is the single-chain entry point and
``run_chains`` the batched one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from hsbqr import fast_gaussian
from hsbqr.errors import ChainDivergenceError, DimensionError, DomainError
from hsbqr.quantile import QuantileSpec, quantile_constants
from hsbqr.rand import (
    draw_inverse_gamma,
    draw_inverse_gaussian,
    draw_truncated_exponential,
    draw_truncated_gamma,
)

log = logging.getLogger(__name__)

PRIORS = ("horseshoe", "lasso")
BACKENDS = ("fast", "cholesky", "auto")


@dataclass(frozen=True)
class SamplerConfig:
    prior: str = "horseshoe"
    a_prior: float = 0.1
    b_prior: float = 0.1
    n_iter: int = 5000
    n_burn: int = 1000
    thin: int = 1
    beta_backend: str = "auto"
    residual_floor: float = 1e-10
    # intercept = column 0; when exempt it gets a fixed N(0, intercept_prior_var) prior
    shrink_intercept: bool = True
    intercept_prior_var: float = 100.0
    # Gamma(shape, rate) hyperprior on the lasso mixing rate u^2
    lasso_shape: float = 1.0
    lasso_rate: float = 1.0
    scale_floor: float = 1e-12
    scale_ceiling: float = 1e12

    def __post_init__(self):
        if self.prior not in PRIORS:
            raise DomainError(f"prior must be one of {PRIORS}, got {self.prior!r}")
        if self.beta_backend not in BACKENDS:
            raise DomainError(f"beta_backend must be one of {BACKENDS}, got {self.beta_backend!r}")
        for name in ("a_prior", "b_prior", "residual_floor", "intercept_prior_var", "lasso_shape", "lasso_rate"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.n_iter < 1 or self.thin < 1 or not 0 <= self.n_burn < self.n_iter:
            raise DomainError("need n_iter >= 1, thin >= 1 and 0 <= n_burn < n_iter")

    @property
    def n_keep(self) -> int:
        return (self.n_iter - self.n_burn) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainState:
    """One Gibbs state; arrays may carry leading batch dimensions.

    ``sigma`` is the ALD scale (the quantity drawn from the inverse-gamma
    conditional), not its square.
    """

    beta: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    lambda2: np.ndarray
    nu2: np.ndarray
    lasso_u2: np.ndarray

    @classmethod
    def initial(cls, n_obs: int, n_coef: int, batch_shape: tuple = ()) -> "ChainState":
        return cls(
            beta=np.zeros(batch_shape + (n_coef,)),
            sigma=np.ones(batch_shape),
            z=np.ones(batch_shape + (n_obs,)),
            lambda2=np.ones(batch_shape + (n_coef,)),
            nu2=np.ones(batch_shape),
            lasso_u2=np.ones(batch_shape),
        )

    def is_valid(self) -> bool:
        finite = all(np.all(np.isfinite(getattr(self, f))) for f in ("beta", "sigma", "z", "lambda2", "nu2"))
        positive = all(np.all(getattr(self, f) > 0) for f in ("sigma", "z", "lambda2", "nu2"))
        return finite and positive


@dataclass
class PosteriorDraws:
    quantile: QuantileSpec
    betas: np.ndarray
    sigmas: np.ndarray
    config: SamplerConfig = field(default_factory=SamplerConfig)

    @property
    def n_keep(self) -> int:
        return self.betas.shape[0]

    @property
    def beta_mean(self) -> np.ndarray:
        return self.betas.mean(axis=0)

    def credible_interval(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        lo = (1.0 - level) / 2.0
        return (np.quantile(self.betas, lo, axis=0), np.quantile(self.betas, 1.0 - lo, axis=0))

    def mc_standard_error(self) -> np.ndarray:
        """Batch-means standard error of the posterior mean, per coefficient."""
        n = self.n_keep
        n_batches = max(2, int(np.sqrt(n)))
        size = n // n_batches
        means = self.betas[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
        return means.std(axis=0, ddof=1) / np.sqrt(n_batches)

    def summary(self, level: float = 0.95, names: Sequence[str] | None = None) -> dict:
        lo, hi = self.credible_interval(level)
        k = self.betas.shape[1]
        return {
            "quantile": self.quantile.p,
            "n_keep": self.n_keep,
            "interval_level": level,
            "terms": list(names) if names is not None else [f"x{j}" for j in range(k)],
            "mean": self.beta_mean.tolist(),
            "lower": lo.tolist(),
            "upper": hi.tolist(),
            "sigma_mean": float(self.sigmas.mean()),
            "config": self.config.to_dict(),
        }


def dump_summaries(draws: Sequence[PosteriorDraws], path, level: float = 0.95, names=None) -> None:
    """Write posterior summaries as JSON, one record per quantile level."""
    records = [d.summary(level, names) for d in draws]
    with open(path, "w") as fh:
        json.dump({"fits": records}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_summaries(path) -> list[dict]:
    with open(path) as fh:
        return json.load(fh)["fits"]


# --- conditional updates --------------------------------------------------


def _constants(qspec) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(qspec, QuantileSpec):
        return np.asarray(qspec.theta), np.asarray(qspec.tau2)
    specs = [q if isinstance(q, QuantileSpec) else quantile_constants(q) for q in qspec]
    return np.array([q.theta for q in specs]), np.array([q.tau2 for q in specs])


def _fitted(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return np.matmul(X, beta[..., None])[..., 0]


def update_latent_z(rng, state: ChainState, X, y, qspec, config: SamplerConfig) -> np.ndarray:
    """z_t = 1/v_t with v_t ~ InverseGaussian(c_t, d_t)."""
    theta, tau2 = _constants(qspec)
    resid = np.maximum(np.abs(y - _fitted(X, state.beta)), config.residual_floor)
    k = theta**2 + 2.0 * tau2
    c = np.sqrt(k)[..., None] / resid
    d = np.broadcast_to((k / (state.sigma * tau2))[..., None], c.shape)
    with np.errstate(divide="ignore"):
        return 1.0 / draw_inverse_gaussian(rng, c, d)


def sigma_posterior(state: ChainState, X, y, qspec, config: SamplerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Shape and rate of the inverse-gamma conditional of sigma."""
    theta, tau2 = _constants(qspec)
    n_obs = np.shape(y)[-1]
    z = state.z
    r = y - _fitted(X, state.beta) - theta[..., None] * z
    rate = config.b_prior + np.sum(r * r / (2.0 * z * tau2[..., None]), axis=-1) + np.sum(z, axis=-1)
    shape = np.broadcast_to(config.a_prior + 1.5 * n_obs, np.shape(rate))
    return shape, rate


def update_sigma(rng, state: ChainState, X, y, qspec, config: SamplerConfig):
    shape, rate = sigma_posterior(state, X, y, qspec, config)
    return draw_inverse_gamma(rng, shape, rate)


def prior_variances(state: ChainState, config: SamplerConfig) -> np.ndarray:
    D = state.nu2[..., None] * state.lambda2
    if not config.shrink_intercept:
        D = D.copy()
        D[..., 0] = config.intercept_prior_var
    return D


def beta_conditional(state: ChainState, X, y, qspec, config: SamplerConfig) -> fast_gaussian.StructuredGaussian:
    theta, tau2 = _constants(qspec)
    sqrt_u = 1.0 / np.sqrt(tau2[..., None] * state.z * state.sigma[..., None])
    Phi = sqrt_u[..., None] * X
    alpha = sqrt_u * (y - theta[..., None] * state.z)
    return fast_gaussian.StructuredGaussian(Phi, prior_variances(state, config), alpha)


def update_beta(rng, state: ChainState, X, y, qspec, config: SamplerConfig) -> np.ndarray:
    sg = beta_conditional(state, X, y, qspec, config)
    return fast_gaussian.sample(rng, sg, config.beta_backend)


def _shrunk(arr: np.ndarray, config: SamplerConfig) -> np.ndarray:
    return arr if config.shrink_intercept else arr[..., 1:]


def update_local_scales(rng, beta, lambda2, nu2, config: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Slice step for eta_j = 1/lambda2_j, kernel exp(-mu_j^2 eta / 2)/(1+eta), mu_j = beta_j/nu.

    The auxiliary u_j ~ U(0, 1/(1+eta_j)) bounds eta_j above by (1-u_j)/u_j,
    below which an exponential with rate mu_j^2/2 is drawn.
    """
    eta = 1.0 / lambda2
    u = rng.random(eta.shape) / (1.0 + eta)
    mu2 = beta * beta / np.asarray(nu2)[..., None]
    eta = draw_truncated_exponential(rng, mu2 / 2.0, (1.0 - u) / u)
    return np.clip(1.0 / np.maximum(eta, 1.0 / config.scale_ceiling), config.scale_floor, config.scale_ceiling)


def update_global_scale(rng, beta, lambda2, nu2, config: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Slice step for eta = 1/nu2, kernel eta^((m-1)/2) exp(-S eta / 2)/(1+eta).

    S = sum_j beta_j^2/lambda2_j over the m shrunk coefficients, so below the
    slice bound eta is a truncated Gamma((m+1)/2, rate S/2).
    """
    m = beta.shape[-1]
    eta = 1.0 / np.asarray(nu2)
    u = rng.random(np.shape(eta)) / (1.0 + eta)
    S = np.sum(beta * beta / lambda2, axis=-1)
    eta = draw_truncated_gamma(rng, np.full(np.shape(S), (m + 1) / 2.0), S / 2.0, (1.0 - u) / u)
    nu2 = np.clip(1.0 / np.maximum(eta, 1.0 / config.scale_ceiling), config.scale_floor, config.scale_ceiling)
    return np.asarray(nu2, dtype=float)


def update_horseshoe_scales(rng, state: ChainState, config: SamplerConfig = SamplerConfig()):
    """Local scales, then the global scale given the fresh local ones."""
    beta = _shrunk(state.beta, config)
    lam2 = update_local_scales(rng, beta, _shrunk(state.lambda2, config), state.nu2, config)
    nu2 = update_global_scale(rng, beta, lam2, state.nu2, config)
    if not config.shrink_intercept:
        lam2 = np.concatenate([state.lambda2[..., :1], lam2], axis=-1)
    return lam2, nu2


def update_lasso_scales(rng, state: ChainState, config: SamplerConfig = SamplerConfig()):
    """Bayesian-lasso mixing updates with the global scale held at one.

    1/lambda2_j ~ InverseGaussian(sqrt(u2)/|beta_j|, u2), then
    u2 ~ Gamma(shape + m, rate + sum(lambda2)/2).
    """
    lo, hi = config.scale_floor, config.scale_ceiling
    beta = np.maximum(np.abs(_shrunk(state.beta, config)), config.residual_floor)
    u2 = state.lasso_u2
    v = draw_inverse_gaussian(rng, np.sqrt(u2)[..., None] / beta, np.broadcast_to(u2[..., None], beta.shape))
    lam2 = np.clip(1.0 / v, lo, hi)
    m = beta.shape[-1]
    rate = config.lasso_rate + lam2.sum(axis=-1) / 2.0
    u2 = rng.standard_gamma(np.full(np.shape(rate), config.lasso_shape + m)) / rate
    if not config.shrink_intercept:
        lam2 = np.concatenate([state.lambda2[..., :1], lam2], axis=-1)
    return lam2, np.asarray(u2, dtype=float)


def shrinkage_factor(nu2, lambda2_j, s_j, T, sigma2):
    """kappa_j = 1 / (1 + T sigma^-2 nu^2 s_j^2 lambda_j^2); 1 means total shrinkage."""
    return 1.0 / (1.0 + T / sigma2 * nu2 * s_j**2 * lambda2_j)


# --- chains ---------------------------------------------------------------


def _check(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ChainDivergenceError(name)


def gibbs_sweep(rng, state: ChainState, X, y, qspec, config: SamplerConfig) -> ChainState:
    state.z = update_latent_z(rng, state, X, y, qspec, config)
    _check("z", state.z)
    state.sigma = np.asarray(update_sigma(rng, state, X, y, qspec, config), dtype=float)
    _check("sigma", state.sigma)
    state.beta = update_beta(rng, state, X, y, qspec, config)
    _check("beta", state.beta)
    if config.prior == "horseshoe":
        state.lambda2, state.nu2 = update_horseshoe_scales(rng, state, config)
        _check("horseshoe scales", state.lambda2, state.nu2)
    else:
        state.lambda2, state.lasso_u2 = update_lasso_scales(rng, state, config)
        _check("lasso scales", state.lambda2, state.lasso_u2)
    return state


def _validate_inputs(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim < 2 or y.ndim < 1:
        raise DimensionError("X must be (..., T, K) and y (..., T)")
    if X.shape[-2] != y.shape[-1]:
        raise DimensionError(f"X has {X.shape[-2]} rows but y has length {y.shape[-1]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must contain only finite values")
    return X, y


def run_chains(rng, X, y, levels, config: SamplerConfig = SamplerConfig(), init: ChainState | None = None) -> list[PosteriorDraws]:
    """Run one chain per entry of ``levels`` in a single batched sweep.

    ``X`` is (T, K) shared by all chains or (B, T, K); ``y`` is (T,) or (B, T).
    """
    X, y = _validate_inputs(X, y)
    specs = [q if isinstance(q, QuantileSpec) else quantile_constants(q) for q in levels]
    n_chain = len(specs)
    if X.ndim == 3 and X.shape[0] != n_chain or y.ndim == 2 and y.shape[0] != n_chain:
        raise DimensionError("batched X / y must have one slice per quantile level")
    n_obs, n_coef = X.shape[-2:]
    state = init if init is not None else ChainState.initial(n_obs, n_coef, (n_chain,))
    betas = np.empty((config.n_keep, n_chain, n_coef))
    sigmas = np.empty((config.n_keep, n_chain))
    keep = 0
    for it in range(config.n_iter):
        gibbs_sweep(rng, state, X, y, specs, config)
        if it >= config.n_burn and (it - config.n_burn + 1) % config.thin == 0 and keep < config.n_keep:
            betas[keep] = state.beta
            sigmas[keep] = state.sigma
            keep += 1
    return [PosteriorDraws(specs[b], betas[:, b].copy(), sigmas[:, b].copy(), config) for b in range(n_chain)]


def run_chain(rng, X, y, p, config: SamplerConfig = SamplerConfig()) -> PosteriorDraws:
    """Single Gibbs chain at quantile level ``p``; the posterior mean is the point estimate."""
    X, y = _validate_inputs(X, y)
    if X.ndim != 2 or y.ndim != 1:
        raise DimensionError("run_chain expects X of shape (T, K) and y of shape (T,)")
    return run_chains(rng, X, y, [p], config)[0]


def split_rhat(*chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction for one or more (n_draws, ...) chains."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        n = c.shape[0] // 2
        halves += [c[:n], c[n : 2 * n]]
    halves = np.stack(halves)
    n = halves.shape[1]
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = n * halves.mean(axis=1).var(axis=0, ddof=1)
    var_hat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_hat / W)


# --- fitting on raw data -----------------------------------------------------


@dataclass
class QuantileFit:
    """Posterior draws from standardized data with coefficients mapped back."""

    draws: list[PosteriorDraws]
    center: np.ndarray
    scale: np.ndarray
    names: list[str]

    @property
    def levels(self) -> list[float]:
        return [d.quantile.p for d in self.draws]

    def coefficients(self) -> np.ndarray:
        """(n_levels, 1 + R) posterior means on the original scale, intercept first."""
        return np.stack([self._to_original(d.betas).mean(axis=0) for d in self.draws])

    def intervals(self, level: float = 0.95):
        lo_q = (1.0 - level) / 2.0
        out = []
        for d in self.draws:
            b = self._to_original(d.betas)
            out.append((np.quantile(b, lo_q, axis=0), np.quantile(b, 1 - lo_q, axis=0)))
        return out

    def _to_original(self, betas: np.ndarray) -> np.ndarray:
        slopes = betas[:, 1:] / self.scale
        intercept = betas[:, :1] - slopes @ self.center[:, None]
        return np.concatenate([intercept, slopes], axis=1)

    def predict_standardized(self, x_new: np.ndarray) -> np.ndarray:
        """Posterior-mean quantile forecasts, (n_levels,) for a single regressor row."""
        xs = np.concatenate([[1.0], (np.asarray(x_new, dtype=float) - self.center) / self.scale])
        return np.array([d.beta_mean @ xs for d in self.draws])


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (X - center) / scale, center, scale


def fit_quantiles(rng, X, y, levels, config: SamplerConfig = SamplerConfig(), names=None) -> QuantileFit:
    """Standardize regressors, prepend an intercept, and fit every level."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Xs, center, scale = standardize(X)
    Z = np.column_stack([np.ones(len(Xs)), Xs])
    draws = run_chains(rng, Z, y, levels, config)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    return QuantileFit(draws, center, scale, ["intercept"] + names)


def with_iterations(config: SamplerConfig, n_iter: int, n_burn: int | None = None) -> SamplerConfig:
    return replace(config, n_iter=n_iter, n_burn=n_burn if n_burn is not None else n_iter // 5)
