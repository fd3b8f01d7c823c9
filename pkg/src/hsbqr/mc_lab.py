"""Monte Carlo designs with known quantile coefficient profiles, and their scoring."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from hsbqr.errors import DimensionError, DomainError
from hsbqr.quantile import ERROR_DISTRIBUTIONS, true_quantile_coefficients
from hsbqr.rand import RngHandle
from hsbqr.sampler import SamplerConfig, run_chains

log = logging.getLogger(__name__)

SPARSITY = ("sparse", "dense", "block")
ERROR_MODELS = ("y1", "y2", "y3", "y4")
HOLDOUT_STREAM = 2**32 - 1


def generate_design(rng: np.random.Generator, T: int, K: int, rho: float = 0.5) -> np.ndarray:
    """T x K rows i.i.d. N(0, S) with S_ij = rho^|i-j|.

    S is the AR(1) correlation matrix, whose Cholesky factor is bidiagonal in
    inverse form, so columns are built recursively in O(TK).
    """
    if T < 1 or K < 1:
        raise DomainError("T and K must be positive")
    e = rng.standard_normal((T, K))
    X = np.empty((T, K))
    X[:, 0] = e[:, 0]
    innov = math.sqrt(1.0 - rho * rho)
    for j in range(1, K):
        X[:, j] = rho * X[:, j - 1] + innov * e[:, j]
    return X


def make_beta(sparsity: str, T1: int = 200) -> tuple[np.ndarray, int]:
    """Coefficient pattern, intercept first."""
    if sparsity == "sparse":
        beta = np.concatenate([[1.0, 1.0, 1 / 2, 1 / 3, 1 / 4, 1 / 5], np.zeros(2 * T1)])
    elif sparsity == "dense":
        beta = np.concatenate([[1.0], np.full(T1, 0.85)])
    elif sparsity == "block":
        beta = np.concatenate([[1.0], np.full(T1, 0.85), np.zeros(T1), np.full(T1, 0.85)])
    else:
        raise DomainError(f"sparsity must be one of {SPARSITY}, got {sparsity!r}")
    return beta, beta.size


@dataclass(frozen=True)
class DgpConfig:
    sparsity: str = "sparse"
    error_model: str = "y1"
    T_total: int = 200
    holdout: int = 100
    n_replications: int = 20
    seed: int = 0
    T1: int = 200
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.sparsity not in SPARSITY:
            raise DomainError(f"sparsity must be one of {SPARSITY}")
        if self.error_model not in ERROR_MODELS:
            raise DomainError(f"error_model must be one of {ERROR_MODELS}")
        if self.T_total <= self.holdout:
            raise DomainError("T_total must exceed the holdout size")
        if self.n_replications < 1:
            raise DomainError("n_replications must be at least 1")

    @property
    def n_train(self) -> int:
        return self.T_total - self.holdout


@dataclass
class DgpInstance:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    beta_base: np.ndarray
    vartheta: np.ndarray
    error_model: str

    def true_beta_of_p(self, p: float) -> np.ndarray:
        if self.error_model == "y2":
            return true_quantile_coefficients(self.beta_base, self.vartheta, "t3", p)
        if self.error_model == "y4":
            # normal location shift on the intercept, uniform(0, 2) scale shift on x_1
            out = true_quantile_coefficients(self.beta_base, _unit(self.beta_base.size, 0), "normal", p)
            out[1] += ERROR_DISTRIBUTIONS["uniform02"].ppf(p)
            return out
        return true_quantile_coefficients(self.beta_base, self.vartheta, "normal", p)


def _unit(k: int, j: int) -> np.ndarray:
    e = np.zeros(k)
    e[j] = 1.0
    return e


def _errors(rng: np.random.Generator, model: str, x1: np.ndarray) -> np.ndarray:
    n = x1.size
    if model == "y1":
        return rng.standard_normal(n)
    if model == "y2":
        return rng.standard_normal(n) / np.sqrt(rng.chisquare(3, n) / 3.0)
    if model == "y3":
        return (1.0 + x1) * rng.standard_normal(n)
    return rng.standard_normal(n) + x1 * rng.uniform(0.0, 2.0, n)


def _draw_block(rng: np.random.Generator, n: int, beta: np.ndarray, model: str, noise_scale: float):
    X = np.column_stack([np.ones(n), generate_design(rng, n, beta.size - 1)])
    y = X @ beta + noise_scale * _errors(rng, model, X[:, 1])
    return X, y


def simulate_dgp(cfg: DgpConfig, replication: int = 0) -> DgpInstance:
    """One replication. The holdout block depends only on the seed, so it is shared."""
    beta, K = make_beta(cfg.sparsity, cfg.T1)
    vartheta = _unit(K, 0)
    if cfg.error_model in ("y3", "y4"):
        vartheta[1] = 1.0
    base = RngHandle(cfg.seed)
    X_test, y_test = _draw_block(base.child(HOLDOUT_STREAM).generator(), cfg.holdout, beta, cfg.error_model, cfg.noise_scale)
    X_train, y_train = _draw_block(base.child(replication).generator(), cfg.n_train, beta, cfg.error_model, cfg.noise_scale)
    return DgpInstance(X_train, y_train, X_test, y_test, beta, vartheta, cfg.error_model)


def _stack(estimates, truths):
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.asarray(truths, dtype=float)
    if tru.ndim == 1 and tru.shape[0] == est.shape[1]:
        tru = np.broadcast_to(tru, est.shape)
    if est.shape != tru.shape:
        raise DimensionError(f"estimates {est.shape} vs truths {tru.shape}")
    return est, tru


def rmcb(estimates, truths, per_coefficient: bool = True) -> float:
    """Root mean coefficient bias over replications.

    ``estimates`` is (n_reps, K); ``truths`` is (K,) or (n_reps, K). With
    ``per_coefficient`` the squared norm is also averaged over the K
    coefficients.
    """
    est, tru = _stack(estimates, truths)
    sq = np.sum((est - tru) ** 2, axis=1)
    denom = est.shape[1] if per_coefficient else 1
    return float(np.sqrt(np.mean(sq) / denom))


def rmsfe(estimates, truths, X_test, per_observation: bool = True) -> float:
    """Root mean squared forecast error of ``X_test @ beta_hat`` against ``X_test @ beta(p)``."""
    est, tru = _stack(estimates, truths)
    X_test = np.asarray(X_test, dtype=float)
    err = (est - tru) @ X_test.T
    sq = np.sum(err**2, axis=1)
    denom = X_test.shape[0] if per_observation else 1
    return float(np.sqrt(np.mean(sq) / denom))


@dataclass
class McScore:
    levels: list[float]
    rmcb: dict[str, list[float]] = field(default_factory=dict)
    rmsfe: dict[str, list[float]] = field(default_factory=dict)
    n_ok: dict[str, int] = field(default_factory=dict)
    estimates: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def _fit_replication(args) -> tuple[int, dict[str, np.ndarray | str]]:
    cfg, rep, levels, estimators = args
    inst = simulate_dgp(cfg, rep)
    out: dict[str, np.ndarray | str] = {}
    for j, (name, scfg) in enumerate(estimators.items()):
        rng = RngHandle(cfg.seed, 1_000_003 * (j + 1) + rep).generator()
        try:
            draws = run_chains(rng, inst.X_train, inst.y_train, levels, scfg)
            out[name] = np.stack([d.beta_mean for d in draws])
        except Exception as exc:  # a failed chain drops this replication only
            log.warning("replication %d, estimator %s failed: %s", rep, name, exc)
            out[name] = f"{type(exc).__name__}: {exc}"
    return rep, out


def run_mc_study(
    cfg: DgpConfig,
    estimators: Mapping[str, SamplerConfig],
    levels: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
    threads: int = 1,
    progress: Callable[[int], None] | None = None,
) -> McScore:
    """Fit every estimator at every level on each replication and score it."""
    levels = list(levels)
    jobs = [(cfg, rep, levels, dict(estimators)) for rep in range(cfg.n_replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_fit_replication, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_fit_replication(job))
            if progress:
                progress(job[1])
    results.sort(key=lambda r: r[0])

    holdout = simulate_dgp(cfg, 0)
    truths = np.stack([holdout.true_beta_of_p(p) for p in levels])
    score = McScore(levels)
    for name in estimators:
        ok = [out[name] for _, out in results if not isinstance(out[name], str)]
        score.n_ok[name] = len(ok)
        if not ok:
            score.rmcb[name] = [math.nan] * len(levels)
            score.rmsfe[name] = [math.nan] * len(levels)
            continue
        est = np.stack(ok)  # (reps, levels, K)
        score.estimates[name] = est
        score.rmcb[name] = [rmcb(est[:, i], truths[i]) for i in range(len(levels))]
        score.rmsfe[name] = [rmsfe(est[:, i], truths[i], holdout.X_test) for i in range(len(levels))]
    return score


def write_tables(score: McScore, cfg: DgpConfig, path_prefix: str) -> list[str]:
    """CSV tables: one row per estimator x design, one column per level."""
    paths = []
    for metric in ("rmcb", "rmsfe"):
        path = f"{path_prefix}_{metric}.csv"
        table = getattr(score, metric)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["estimator", "design", "error", "train"] + [f"{p:g}" for p in score.levels] + ["n_ok"])
            for name, vals in table.items():
                w.writerow(
                    [name, cfg.sparsity, cfg.error_model, cfg.n_train]
                    + [f"{v:.6f}" for v in vals]
                    + [score.n_ok[name]]
                )
        paths.append(path)
    return paths


def manifest(cfg: DgpConfig, estimators: Mapping[str, SamplerConfig], levels) -> str:
    return json.dumps(
        {"dgp": asdict(cfg), "estimators": {k: v.to_dict() for k, v in estimators.items()}, "levels": list(levels)},
        indent=2,
        sort_keys=True,
    )
