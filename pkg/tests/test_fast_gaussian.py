import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hsbqr.errors import DimensionError, DomainError, NumericalError
from hsbqr.fast_gaussian import (
    StructuredGaussian,
    _cholesky,
    cholesky_from_noise,
    fast_from_noise,
    sample,
    sample_cholesky,
    sample_fast,
)
from hsbqr.rand import make_rng


def _instance(seed, T, K):
    r = np.random.default_rng(seed)
    return StructuredGaussian(r.normal(size=(T, K)), r.uniform(0.1, 3.0, K), r.normal(size=T))


def _dense_moments(sg):
    Sigma = np.linalg.inv(sg.Phi.T @ sg.Phi + np.diag(1 / sg.D))
    return Sigma @ sg.Phi.T @ sg.alpha, Sigma


def _affine_fast(sg):
    """Recover the affine map (u_std, delta) -> draw column by column."""
    K, T = sg.n_coef, sg.n_obs
    c = fast_from_noise(sg, np.zeros(K), np.zeros(T))
    A = np.column_stack([fast_from_noise(sg, e, np.zeros(T)) - c for e in np.eye(K)])
    B = np.column_stack([fast_from_noise(sg, np.zeros(K), e) - c for e in np.eye(T)])
    return c, A @ A.T + B @ B.T


def _affine_chol(sg):
    K = sg.n_coef
    c = cholesky_from_noise(sg, np.zeros(K))
    A = np.column_stack([cholesky_from_noise(sg, e) - c for e in np.eye(K)])
    return c, A @ A.T


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10), st.integers(1, 10))
def test_woodbury_identity(seed, T, K):
    sg = _instance(seed, T, K)
    D = np.diag(sg.D)
    lhs = np.linalg.inv(sg.Phi.T @ sg.Phi + np.linalg.inv(D))
    rhs = D - D @ sg.Phi.T @ np.linalg.inv(sg.Phi @ D @ sg.Phi.T + np.eye(T)) @ sg.Phi @ D
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(lhs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 12))
def test_fast_map_has_exact_moments(seed, T, K):
    sg = _instance(seed, T, K)
    mu, Sigma = _dense_moments(sg)
    c, S = _affine_fast(sg)
    assert_allclose(c, mu, rtol=1e-7, atol=1e-9)
    assert_allclose(S, Sigma, rtol=1e-7, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 12))
def test_cholesky_map_has_exact_moments(seed, T, K):
    sg = _instance(seed, T, K)
    mu, Sigma = _dense_moments(sg)
    c, S = _affine_chol(sg)
    assert_allclose(c, mu, rtol=1e-7, atol=1e-9)
    assert_allclose(S, Sigma, rtol=1e-7, atol=1e-9)


def test_zero_design_returns_prior(rng):
    sg = StructuredGaussian(np.zeros((1, 1)), np.array([2.5]), np.array([1.7]))
    for draw in (sample_fast, sample_cholesky):
        x = np.array([draw(rng, sg)[0] for _ in range(20_000)])
        assert abs(x.mean()) < 4 * np.sqrt(2.5 / x.size)
        assert abs(x.var() / 2.5 - 1) < 0.05


def test_identity_design_closed_form():
    alpha = np.array([1.0, -2.0, 0.5])
    sg = StructuredGaussian(np.eye(3), np.ones(3), alpha)
    for c, S in (_affine_fast(sg), _affine_chol(sg)):
        assert_allclose(c, alpha / 2)
        assert_allclose(S, np.eye(3) / 2, atol=1e-12)


def test_tiny_prior_variance_shrinks_to_zero(rng):
    r = np.random.default_rng(1)
    sg = StructuredGaussian(r.normal(size=(5, 8)), np.full(8, 1e-12), r.normal(size=5))
    assert np.max(np.abs(sample_fast(rng, sg))) < 1e-4
    assert np.max(np.abs(sample_cholesky(rng, sg))) < 1e-4


def test_batched_matches_per_slice():
    r = np.random.default_rng(5)
    Phi = r.normal(size=(4, 6, 9))
    D = r.uniform(0.5, 2, size=(4, 9))
    alpha = r.normal(size=(4, 6))
    u, d, e = r.normal(size=(4, 9)), r.normal(size=(4, 6)), r.normal(size=(4, 9))
    batch = StructuredGaussian(Phi, D, alpha)
    fast = fast_from_noise(batch, u, d)
    chol = cholesky_from_noise(batch, e)
    for b in range(4):
        one = StructuredGaussian(Phi[b], D[b], alpha[b])
        assert_allclose(fast[b], fast_from_noise(one, u[b], d[b]), rtol=1e-10)
        assert_allclose(chol[b], cholesky_from_noise(one, e[b]), rtol=1e-10)


def test_large_batch_loop_path():
    r = np.random.default_rng(6)
    Phi = r.normal(size=(3, 70, 80))
    D = r.uniform(0.5, 2, size=(3, 80))
    alpha = r.normal(size=(3, 70))
    u, d = r.normal(size=(3, 80)), r.normal(size=(3, 70))
    batch = fast_from_noise(StructuredGaussian(Phi, D, alpha), u, d)
    for b in range(3):
        assert_allclose(batch[b], fast_from_noise(StructuredGaussian(Phi[b], D[b], alpha[b]), u[b], d[b]), rtol=1e-9)


def test_shared_design_broadcasts():
    r = np.random.default_rng(7)
    Phi = r.normal(size=(5, 4))
    D = r.uniform(0.5, 2, size=(3, 4))
    alpha = r.normal(size=(3, 5))
    sg = StructuredGaussian(Phi, D, alpha)
    assert sg.batch_shape == (3,)
    out = cholesky_from_noise(sg, np.zeros((3, 4)))
    for b in range(3):
        mu, _ = _dense_moments(StructuredGaussian(Phi, D[b], alpha[b]))
        assert_allclose(out[b], mu, rtol=1e-9)


def test_auto_backend_is_deterministic():
    sg = _instance(0, 4, 9)
    a = sample(make_rng(1), sg, "auto")
    b = sample_fast(make_rng(1), sg)
    assert_allclose(a, b)
    with pytest.raises(ValueError):
        sample(make_rng(1), sg, "qr")


def test_validation():
    with pytest.raises(DimensionError):
        StructuredGaussian(np.ones((3, 2)), np.ones(2), np.ones(4))
    with pytest.raises(DimensionError):
        StructuredGaussian(np.ones((3, 2)), np.ones(3), np.ones(3))
    with pytest.raises(DomainError):
        StructuredGaussian(np.ones((3, 2)), np.array([1.0, 0.0]), np.ones(3))
    with pytest.raises(DomainError):
        StructuredGaussian(np.ones((3, 2)), np.array([1.0, np.nan]), np.ones(3))


def test_jitter_rescues_semidefinite():
    v = np.array([1.0, 2.0, 3.0])
    M = np.outer(v, v)  # rank one
    L = _cholesky(M)
    assert_allclose(L @ L.T, M, atol=1e-4)


def test_indefinite_raises_with_diagnostics():
    with pytest.raises(NumericalError, match="condition number"):
        _cholesky(np.diag([1.0, -1.0]))
