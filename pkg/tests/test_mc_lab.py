import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hsbqr.errors import DimensionError, DomainError
from hsbqr.mc_lab import (
    DgpConfig,
    generate_design,
    make_beta,
    manifest,
    rmcb,
    rmsfe,
    run_mc_study,
    simulate_dgp,
    write_tables,
)
from hsbqr.quantile import normal_ppf, t3_ppf
from hsbqr.rand import make_rng
from hsbqr.sampler import SamplerConfig


def test_design_correlation():
    X = generate_design(make_rng(0), 100_000, 5)
    assert_allclose(X.var(axis=0), 1.0, atol=0.02)
    C = np.corrcoef(X, rowvar=False)
    assert_allclose(np.diag(C, 1), 0.5, atol=0.015)
    assert_allclose(np.diag(C, 3), 0.125, atol=0.015)


def test_patterns():
    b, K = make_beta("sparse")
    assert K == 406 and np.count_nonzero(b) == 6
    assert_allclose(b[:6], [1, 1, 1 / 2, 1 / 3, 1 / 4, 1 / 5])
    b, K = make_beta("dense")
    assert K == 201 and np.count_nonzero(b) == 201
    b, K = make_beta("block")
    assert K == 601
    assert np.all(b[201:401] == 0) and np.all(b[1:201] == 0.85) and np.all(b[401:] == 0.85)
    with pytest.raises(DomainError):
        make_beta("blocky")


def test_config_validation():
    with pytest.raises(DomainError):
        DgpConfig(n_replications=0)
    with pytest.raises(DomainError):
        DgpConfig(T_total=100, holdout=100)
    with pytest.raises(DomainError):
        DgpConfig(error_model="y9")
    assert DgpConfig(T_total=1000).n_train == 900


def test_holdout_shared_and_train_varies():
    cfg = DgpConfig(T_total=60, holdout=20, T1=5, seed=3)
    a, b = simulate_dgp(cfg, 0), simulate_dgp(cfg, 1)
    assert a.X_test.tobytes() == b.X_test.tobytes()
    assert a.y_test.tobytes() == b.y_test.tobytes()
    assert not np.array_equal(a.X_train, b.X_train)
    assert_array_equal(a.X_train[:, 0], 1.0)
    assert a.X_train.shape == (40, 16)


@pytest.mark.parametrize("model", ["y1", "y2", "y3", "y4"])
def test_true_profiles(model):
    inst = simulate_dgp(DgpConfig(error_model=model, T_total=30, holdout=10, T1=3), 0)
    p = 0.8
    b = inst.true_beta_of_p(p)
    base = inst.beta_base
    if model == "y1":
        assert_allclose(b, base + np.eye(base.size)[0] * normal_ppf(p))
    elif model == "y2":
        assert b[0] == pytest.approx(1 + t3_ppf(p))
        assert_allclose(b[1:], base[1:])
    elif model == "y3":
        assert b[0] == pytest.approx(1 + normal_ppf(p)) and b[1] == pytest.approx(1 + normal_ppf(p))
    else:
        assert b[0] == pytest.approx(1 + normal_ppf(p)) and b[1] == pytest.approx(1 + 2 * p)
    assert_allclose(inst.true_beta_of_p(0.5)[2:], base[2:])


def test_y1_empirical_quantile_profile():
    cfg = DgpConfig(T_total=200_100, holdout=100, T1=1, seed=1)
    inst = simulate_dgp(cfg, 0)
    resid = inst.y_train - inst.X_train[:, 1:] @ inst.beta_base[1:]
    for p in (0.1, 0.5, 0.9):
        assert np.quantile(resid, p) == pytest.approx(inst.true_beta_of_p(p)[0], abs=0.02)


def test_rmcb_examples():
    truth = np.array([1.0, 2.0])
    assert rmcb(np.tile(truth, (3, 1)), truth) == 0.0
    assert rmcb(np.array([[1.3]]), np.array([1.0])) == pytest.approx(0.3)
    two = np.array([[1.0 + 0.6, 2.0 + 0.8], [1.0, 2.0]])
    assert rmcb(two, truth, per_coefficient=False) == pytest.approx(np.sqrt(0.5))
    assert rmcb(two, truth) == pytest.approx(np.sqrt(0.25))
    with pytest.raises(DimensionError):
        rmcb(np.ones((2, 3)), np.ones(2))


def test_rmsfe():
    X = np.array([[1.0, 0.0], [1.0, 2.0]])
    est = np.array([[1.0, 1.0]])
    assert rmsfe(est, np.array([1.0, 0.5]), X, per_observation=False) == pytest.approx(1.0)
    assert rmsfe(est, np.array([1.0, 0.5]), X) == pytest.approx(np.sqrt(0.5))


def test_zero_noise_recovery():
    cfg = DgpConfig(T_total=80, holdout=20, T1=2, n_replications=2, noise_scale=0.0)
    score = run_mc_study(cfg, {"hs": SamplerConfig(n_iter=800, n_burn=200)}, [0.5])
    # noiseless data: the median profile equals beta up to the Phi^-1(0.5) = 0 shift
    assert score.rmcb["hs"][0] < 0.05


def test_study_outputs(tmp_path):
    cfg = DgpConfig(T_total=40, holdout=10, T1=3, n_replications=2)
    est = {"hs": SamplerConfig(n_iter=100, n_burn=20), "lasso": SamplerConfig(prior="lasso", n_iter=100, n_burn=20)}
    score = run_mc_study(cfg, est, [0.1, 0.5])
    assert score.n_ok == {"hs": 2, "lasso": 2}
    again = run_mc_study(cfg, est, [0.1, 0.5])
    assert score.rmcb == again.rmcb
    paths = write_tables(score, cfg, str(tmp_path / "t"))
    lines = open(paths[0]).read().splitlines()
    assert lines[0] == "estimator,design,error,train,0.1,0.5,n_ok"
    assert lines[1].startswith("hs,sparse,y1,30,")
    doc = json.loads(manifest(cfg, est, [0.1, 0.5]))
    assert doc["dgp"]["seed"] == 0 and doc["estimators"]["lasso"]["prior"] == "lasso"


def test_failed_estimator_is_reported():
    cfg = DgpConfig(T_total=30, holdout=10, T1=2, n_replications=1)
    bad = SamplerConfig(n_iter=20, n_burn=5, scale_floor=np.nan)
    score = run_mc_study(cfg, {"bad": bad}, [0.5])
    assert score.n_ok["bad"] == 0 and np.isnan(score.rmcb["bad"][0])
