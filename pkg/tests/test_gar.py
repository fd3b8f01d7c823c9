import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from hsbqr.density import QuantileForecastSet
from hsbqr.errors import DomainError, IngestionError
from hsbqr.gar import (
    RollingPlan,
    apply_transform_code,
    evaluate_run,
    growth_transform,
    load_panel,
    rolling_forecast,
    synthetic_panel,
)
from hsbqr.quantile import QuantileGrid
from hsbqr.rand import make_rng
from hsbqr.sampler import SamplerConfig

FAST = SamplerConfig(n_iter=150, n_burn=50)


def test_growth_modes():
    assert_allclose(growth_transform(np.full(5, 3.0))[1:], 0.0)
    x = 100 * np.exp(0.005 * np.arange(6))
    assert_allclose(growth_transform(x)[1:], 2.0)
    lv = np.array([100.0, 101.0])
    assert growth_transform(lv, "log")[1] == pytest.approx(400 * np.log(1.01))
    assert growth_transform(lv, "simple")[1] == pytest.approx(4.0)
    assert growth_transform(lv, "compound")[1] == pytest.approx(4.0604, abs=1e-4)
    assert np.isnan(growth_transform(lv)[0])
    with pytest.raises(DomainError):
        growth_transform([1.0, 0.0])
    with pytest.raises(DomainError):
        growth_transform(lv, "weird")


def test_transform_codes():
    x = pd.Series([1.0, 2.0, 4.0, 8.0])
    assert_allclose(apply_transform_code(x, 2).iloc[1:], [1, 2, 4])
    assert_allclose(apply_transform_code(x, 5).iloc[1:], np.log(2))
    assert_allclose(apply_transform_code(x, 6).iloc[2:], 0.0, atol=1e-12)
    with pytest.raises(DomainError):
        apply_transform_code(pd.Series([1.0, -1.0]), 4)
    with pytest.raises(DomainError):
        apply_transform_code(x, 9)


def _write(tmp_path, text, name="panel.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_toy_panel(tmp_path):
    p = _write(tmp_path, "date,gdp,a,b\n2000Q1,1,2,3\n2000Q2,2,3,4\n2000Q3,3,5,1\n")
    panel = load_panel(p)
    assert panel.target_name == "gdp" and list(panel.regressors.columns) == ["a", "b"]
    assert str(panel.dates[0]) == "2000Q1" and len(panel) == 3


def test_load_drops_incomplete_column(tmp_path):
    p = _write(tmp_path, "date,gdp,a,b\n2000-01-01,1,2,3\n2000-04-01,2,,4\n2000-07-01,3,5,1\n")
    panel = load_panel(p)
    assert list(panel.regressors.columns) == ["b"]
    assert any("dropped a" in e for e in panel.transform_log)


def test_load_malformed_date_names_row(tmp_path):
    p = _write(tmp_path, "date,gdp,a\n2000Q1,1,2\nbanana,2,3\n")
    with pytest.raises(IngestionError, match="row 3"):
        load_panel(p)


def test_load_transform_row_and_target_growth(tmp_path):
    rows = ["sasdate,gdp,ip,rate", "transform,5,5,2"]
    for i in range(6):
        rows.append(f"{2000 + i // 4}Q{i % 4 + 1},{100 * 1.01 ** i},{50 + i},{i * i}")
    panel = load_panel(_write(tmp_path, "\n".join(rows) + "\n"), target="gdp", target_transform="log")
    assert len(panel) == 5
    assert_allclose(panel.target, 400 * np.log(1.01))
    assert_allclose(panel.regressors["rate"].to_numpy(), [1, 3, 5, 7, 9])


def test_load_errors(tmp_path):
    with pytest.raises(IngestionError):
        load_panel(_write(tmp_path, "date,gdp\n2000Q1,1\n"), target="nope")
    with pytest.raises(IngestionError):
        load_panel(_write(tmp_path, "onlyone\n1\n", "b.csv"))


def test_plan_counts():
    plan = RollingPlan(50, 1)
    assert plan.n_origins(199) == 149
    assert RollingPlan(50, 4).n_origins(199) == 146
    spans = list(RollingPlan(5, 2).windows(10))
    assert spans[0] == (0, 4) and all(l - f == 4 for f, l in spans)
    assert all(f == 0 for f, _ in RollingPlan(5, 1, expanding=True).windows(10))
    with pytest.raises(DomainError):
        RollingPlan(3, 2)


def test_rolling_forecast_shape_and_targets():
    panel, _ = synthetic_panel(make_rng(0), n_obs=30, n_regressors=3)
    grid = QuantileGrid.equidistant(5)
    fs = rolling_forecast(panel, RollingPlan(20, 2), grid, FAST, seed=1)
    assert fs.values.shape == (9, 5)
    assert fs.origins[0] == str(panel.dates[19]) and fs.targets[0] == str(panel.dates[21])
    assert_allclose(fs.realizations, panel.target[21:30])
    again = rolling_forecast(panel, RollingPlan(20, 2), grid, FAST, seed=1)
    assert fs.values.tobytes() == again.values.tobytes()


def test_no_look_ahead():
    panel, _ = synthetic_panel(make_rng(1), n_obs=30, n_regressors=3)
    plan = RollingPlan(20, 1)
    grid = QuantileGrid.equidistant(3)
    base = rolling_forecast(panel, plan, grid, FAST, seed=2)
    future = panel.regressors.copy()
    future.iloc[20:] = 99.0
    target = panel.target.copy()
    target[20:] = -99.0
    moved = type(panel)(panel.dates, target, future, panel.target_name)
    shifted = rolling_forecast(moved, plan, grid, FAST, seed=2)
    assert_allclose(shifted.values[0], base.values[0], rtol=1e-10)
    assert not np.allclose(shifted.values[5], base.values[5])


def test_synthetic_panel_validation():
    with pytest.raises(DomainError):
        synthetic_panel(make_rng(0), n_regressors=2, n_signals=3)


def test_too_short_panel():
    panel, _ = synthetic_panel(make_rng(0), n_obs=10, n_regressors=2, n_signals=1)
    with pytest.raises(DomainError):
        rolling_forecast(panel, RollingPlan(10, 1), QuantileGrid.equidistant(3), FAST)


def test_failed_origin_is_flagged():
    panel, _ = synthetic_panel(make_rng(0), n_obs=26, n_regressors=2, n_signals=2)
    bad = SamplerConfig(n_iter=20, n_burn=5, scale_floor=np.nan)
    fs = rolling_forecast(panel, RollingPlan(20, 1), QuantileGrid.equidistant(3), bad)
    assert fs.flagged == list(range(6))
    assert np.all(np.isnan(fs.values))


def _perfect_set(n=40):
    grid = QuantileGrid()
    rng = np.random.default_rng(0)
    loc = rng.normal(size=n)
    y = loc + rng.normal(size=n)
    from scipy.special import ndtri

    vals = loc[:, None] + ndtri(grid.as_array())[None, :]
    return QuantileForecastSet(grid, vals, 1, realizations=y), y


def test_evaluate_run_report():
    fs, y = _perfect_set()
    rep = evaluate_run(fs)
    assert rep.n_origins == 40 and set(rep.pseudo_r2) == {0.05, 0.25, 0.5, 0.75, 0.95}
    assert rep.crossings == 0 and not rep.ks_stars
    worse = QuantileForecastSet(fs.grid, fs.values + 1.5, 1, realizations=y)
    rep2 = evaluate_run(fs, competitors={"shifted": worse})
    row = rep2.row()
    assert "dm_shifted" in row and "dm_shifted_sig" in row and row["dm_shifted"] > 0


def test_evaluate_perfect_forecasts():
    grid = QuantileGrid()
    y = np.linspace(-2, 2, 30)
    # every forecast quantile sits on the realization, up to a tiny spread
    vals = y[:, None] + np.linspace(-1e-3, 1e-3, 19)[None, :]
    fs = QuantileForecastSet(grid, vals, 1, realizations=y)
    rep = evaluate_run(fs)
    assert all(v == 1.0 for v in rep.pseudo_r2.values())


def test_evaluate_requires_rows():
    fs = QuantileForecastSet(QuantileGrid((0.25, 0.75)), np.full((2, 2), np.nan), 1, realizations=np.zeros(2))
    with pytest.raises(DomainError):
        evaluate_run(fs)
