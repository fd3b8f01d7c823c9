"""Quarterly panel ingestion and rolling-origin direct quantile forecasts."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from hsbqr.density import (
    QuantileForecastSet,
    avg_log_score,
    dm_test,
    ks_quantile_grid,
    ks_uniformity,
    pit,
    pseudo_r2,
    smooth_to_density,
)
from hsbqr.errors import DomainError, IngestionError
from hsbqr.quantile import QuantileGrid
from hsbqr.rand import RngHandle
from hsbqr.sampler import SamplerConfig, run_chains, standardize

log = logging.getLogger(__name__)

BACKTEST_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class MacroPanel:
    dates: pd.PeriodIndex
    target: np.ndarray
    regressors: pd.DataFrame
    target_name: str = "target"
    transform_log: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.dates)
        if len(self.target) != n or len(self.regressors) != n:
            raise IngestionError("dates, target and regressors must have equal length")

    def __len__(self) -> int:
        return len(self.dates)


def _parse_date(text: str) -> pd.Period:
    s = str(text).strip()
    try:
        if "Q" in s.upper():
            return pd.Period(s.upper().replace("-", ""), freq="Q")
        return pd.Period(pd.Timestamp(s), freq="Q")
    except (ValueError, TypeError) as exc:
        raise ValueError(s) from exc


_ROWS_LOST = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


def apply_transform_code(x: pd.Series, code: int) -> pd.Series:
    """Stationarity transforms in the FRED-MD/QD numbering."""
    if code in (4, 5, 6) and (x.dropna() <= 0).any():
        raise DomainError(f"log transform of a nonpositive series {x.name!r}")
    if code == 1:
        return x
    if code == 2:
        return x.diff()
    if code == 3:
        return x.diff().diff()
    if code == 4:
        return np.log(x)
    if code == 5:
        return np.log(x).diff()
    if code == 6:
        return np.log(x).diff().diff()
    if code == 7:
        return (x / x.shift(1) - 1.0).diff()
    raise DomainError(f"unknown transform code {code}")


def growth_transform(series, mode: str = "log") -> np.ndarray:
    """Annualized quarter-on-quarter growth in percent; the first value is NaN.

    ``log``: 400 * dlog(x); ``simple``: 400 * (x_t/x_{t-1} - 1);
    ``compound``: 100 * ((x_t/x_{t-1})^4 - 1).
    """
    x = np.asarray(series, dtype=float)
    if np.any(x <= 0):
        raise DomainError("growth transform needs strictly positive levels")
    ratio = x[1:] / x[:-1]
    if mode == "log":
        g = 400.0 * np.log(ratio)
    elif mode == "simple":
        g = 400.0 * (ratio - 1.0)
    elif mode == "compound":
        g = 100.0 * (ratio**4 - 1.0)
    else:
        raise DomainError(f"unknown growth mode {mode!r}")
    return np.concatenate([[np.nan], g])


def load_panel(
    path,
    target: str | None = None,
    start: str | None = None,
    target_transform: str = "none",
    apply_codes: bool = True,
) -> MacroPanel:
    """Read a delimited panel: first column dates, header row of names.

    Optional metadata rows whose first cell is ``transform`` (FRED-QD codes)
    or ``factors`` are recognized. Rows before ``start`` are dropped, and
    then any column that still has missing values.
    """
    try:
        raw = pd.read_csv(path, sep=None, engine="python", dtype=str)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    if raw.shape[1] < 2:
        raise IngestionError("panel needs a date column and at least one variable")
    first = raw.columns[0]
    marker = raw[first].astype(str).str.strip().str.lower()
    codes = None
    if apply_codes and (marker == "transform").any():
        codes = raw.loc[marker == "transform"].iloc[0, 1:]
    raw = raw.loc[~marker.isin(["transform", "factors"])].reset_index(drop=True)
    raw = raw.dropna(how="all")

    dates = []
    for row, value in enumerate(raw[first], start=2):
        try:
            dates.append(_parse_date(value))
        except ValueError:
            raise IngestionError(f"malformed date {value!r} in data row {row}") from None
    data = raw.drop(columns=[first]).apply(pd.to_numeric, errors="coerce")
    data.index = pd.PeriodIndex(dates, freq="Q")

    target = target or data.columns[0]
    if target not in data.columns:
        raise IngestionError(f"target column {target!r} not found")

    log_entries = []
    n_lost = 0
    if codes is not None:
        for col in data.columns:
            if col == target:
                continue
            c = pd.to_numeric(codes.get(col), errors="coerce")
            if pd.notna(c) and int(c) != 1:
                data[col] = apply_transform_code(data[col], int(c))
                n_lost = max(n_lost, _ROWS_LOST[int(c)])
                log_entries.append(f"{col}: code {int(c)}")
    else:
        log_entries.append("no transform row; regressors used as-is")
        log.info("no transform row in %s; regressors used as-is", path)
    if target_transform != "none":
        data[target] = growth_transform(data[target].to_numpy(), target_transform)
        n_lost = max(n_lost, 1)
        log_entries.append(f"{target}: growth ({target_transform})")
    data = data.iloc[n_lost:]
    if start is not None:
        data = data.loc[data.index >= pd.Period(start, freq="Q")]
    if data[target].isna().any():
        raise IngestionError(f"target column {target!r} has missing values after trimming")
    bad = [c for c in data.columns if c != target and data[c].isna().any()]
    for c in bad:
        log.warning("dropping column %s: missing values after trimming", c)
        log_entries.append(f"dropped {c}: missing values")
    data = data.drop(columns=bad)
    if len(data.columns) < 2:
        raise IngestionError("no regressors remain after dropping incomplete columns")
    return MacroPanel(
        dates=data.index,
        target=data[target].to_numpy(dtype=float),
        regressors=data.drop(columns=[target]),
        target_name=target,
        transform_log=log_entries,
    )


def synthetic_panel(
    rng: np.random.Generator,
    n_obs: int = 120,
    n_regressors: int = 10,
    n_signals: int = 3,
    start: str = "1970Q1",
    noise: str = "normal",
) -> tuple[MacroPanel, np.ndarray]:
    """Panel where ``target[t+1] = 2 + x_t' beta + eps`` with sparse beta.

    Returns the panel and the coefficient vector (intercept first), so the
    true conditional quantiles of a one-step forecast are known.
    """
    if not 0 <= n_signals <= n_regressors:
        raise DomainError("need 0 <= n_signals <= n_regressors")
    X = rng.standard_normal((n_obs, n_regressors))
    beta = np.zeros(n_regressors + 1)
    beta[0] = 2.0
    beta[1 : n_signals + 1] = np.linspace(1.0, 0.5, n_signals)
    eps = rng.standard_normal(n_obs) if noise == "normal" else rng.standard_t(5, n_obs)
    y = np.empty(n_obs)
    y[0] = beta[0] + eps[0]
    y[1:] = beta[0] + X[:-1] @ beta[1:] + eps[1:]
    dates = pd.period_range(start, periods=n_obs, freq="Q")
    regs = pd.DataFrame(X, index=dates, columns=[f"x{j + 1}" for j in range(n_regressors)])
    return MacroPanel(dates, y, regs, "growth", ["synthetic"]), beta


@dataclass(frozen=True)
class RollingPlan:
    window: int = 50
    horizon: int = 1
    expanding: bool = False

    def __post_init__(self):
        if self.window < 3 or self.horizon < 1 or self.window <= self.horizon + 1:
            raise DomainError("need window > horizon + 1 and horizon >= 1")

    def n_origins(self, n_obs: int) -> int:
        return max(0, n_obs - self.window - self.horizon + 1)

    def windows(self, n_obs: int):
        """Yield (first, last) observation indices of each window, inclusive."""
        for s in range(self.n_origins(n_obs)):
            first = 0 if self.expanding else s
            yield first, s + self.window - 1


def _origin_design(panel: MacroPanel, plan: RollingPlan, first: int, last: int):
    """Training pairs (x_t, y_{t+h}) inside the window and the standardized origin row."""
    X = panel.regressors.to_numpy(dtype=float)
    h = plan.horizon
    t = np.arange(first, last - h + 1)
    Xs, center, scale = standardize(X[t])
    Z = np.column_stack([np.ones(t.size), Xs])
    z_origin = np.concatenate([[1.0], (X[last] - center) / scale])
    return Z, panel.target[t + h], z_origin


def _forecast_chunk(args):
    panel, plan, levels, config, seed, chunk_id, spans = args
    rng = RngHandle(seed, chunk_id).generator()
    designs = [_origin_design(panel, plan, f, l) for f, l in spans]
    n_lv = len(levels)
    try:
        if len({d[0].shape for d in designs}) == 1:
            X = np.repeat(np.stack([d[0] for d in designs]), n_lv, axis=0)
            y = np.repeat(np.stack([d[1] for d in designs]), n_lv, axis=0)
            draws = run_chains(rng, X, y, list(levels) * len(designs), config)
            means = np.stack([d.beta_mean for d in draws]).reshape(len(designs), n_lv, -1)
        else:
            means = np.stack([np.stack([d.beta_mean for d in run_chains(rng, Z, yy, levels, config)]) for Z, yy, _ in designs])
        return np.einsum("olk,ok->ol", means, np.stack([d[2] for d in designs])), []
    except Exception as exc:
        if len(spans) == 1:
            log.warning("origin %s failed: %s", spans[0], exc)
            return np.full((1, n_lv), np.nan), [0]
        # retry one origin at a time so a single bad window does not sink the chunk
        out, bad = [], []
        for i, span in enumerate(spans):
            vals, flags = _forecast_chunk((panel, plan, levels, config, seed, chunk_id * 10_000 + i + 1, [span]))
            out.append(vals)
            bad += [i] if flags else []
        return np.concatenate(out), bad


def rolling_forecast(
    panel: MacroPanel,
    plan: RollingPlan,
    grid: QuantileGrid = QuantileGrid(),
    config: SamplerConfig = SamplerConfig(),
    seed: int = 0,
    threads: int = 1,
    max_batch_elements: int = 4_000_000,
) -> QuantileForecastSet:
    """Direct h-step quantile forecasts ``x_origin' beta_mean(p)`` at every origin.

    Standardization uses the training rows of each window only. Origins are
    fitted in chunks whose chains run as one batch.
    """
    n = len(panel)
    spans = list(plan.windows(n))
    if not spans:
        raise DomainError(f"panel of {n} observations too short for window {plan.window}, h={plan.horizon}")
    levels = list(grid.levels)
    n_rows = plan.window - plan.horizon
    k = panel.regressors.shape[1] + 1
    per_origin = len(levels) * n_rows * k
    chunk = max(1, min(len(spans), max_batch_elements // per_origin))
    if plan.expanding:
        chunk = 1
    jobs = [
        (panel, plan, levels, config, seed, i, spans[s : s + chunk])
        for i, s in enumerate(range(0, len(spans), chunk))
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_forecast_chunk, jobs))
    else:
        results = [_forecast_chunk(j) for j in jobs]
    values = np.concatenate([r[0] for r in results])
    flagged = []
    for (job, (_, bad)) in zip(jobs, results):
        base = spans.index(job[6][0])
        flagged += [base + b for b in bad]
    lasts = [l for _, l in spans]
    return QuantileForecastSet(
        grid=grid,
        values=values,
        horizon=plan.horizon,
        origins=[str(panel.dates[l]) for l in lasts],
        targets=[str(panel.dates[l + plan.horizon]) for l in lasts],
        realizations=panel.target[np.array(lasts) + plan.horizon],
        flagged=flagged,
    )


@dataclass
class EvaluationReport:
    horizon: int
    n_origins: int
    ks: float
    ks_stars: str
    ks_grid: float
    ks_grid_stars: str
    pseudo_r2: dict
    log_score: float
    median_rmsfe: float
    crossings: int
    pits: np.ndarray = field(repr=False)
    dm: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {
            "horizon": self.horizon,
            "n_origins": self.n_origins,
            "ks": round(self.ks, 6),
            "ks_sig": self.ks_stars,
            "ks_grid": round(self.ks_grid, 6),
            "ks_grid_sig": self.ks_grid_stars,
        }
        out.update({f"r2_{p:g}": round(v, 6) for p, v in self.pseudo_r2.items()})
        out.update({"log_score": round(self.log_score, 6), "median_rmsfe": round(self.median_rmsfe, 6), "crossings": self.crossings})
        for name, res in self.dm.items():
            out[f"dm_{name}"] = round(res.statistic, 6)
            out[f"dm_{name}_sig"] = res.stars()
        return out


def evaluate_run(
    forecasts: QuantileForecastSet,
    realizations=None,
    competitors: dict[str, QuantileForecastSet] | None = None,
) -> EvaluationReport:
    """KS on PITs, pseudo-R2 at five levels, log score, median RMSFE and DM flags."""
    y = np.asarray(forecasts.realizations if realizations is None else realizations, dtype=float)
    ok = np.all(np.isfinite(forecasts.values), axis=1) & np.isfinite(y)
    vals, y = forecasts.values[ok], y[ok]
    if y.size == 0:
        raise DomainError("no complete forecast rows to evaluate")
    dens, crossings = [], 0
    for row in vals:
        crossings += int(np.sum(np.diff(row) < 0))
        dens.append(smooth_to_density(row))
    pits = np.array([pit(d, v) for d, v in zip(dens, y)])
    ks = ks_uniformity(pits)
    levels = forecasts.grid.levels
    ksg = ks_quantile_grid(vals, y, levels)
    r2 = {}
    for p in BACKTEST_LEVELS:
        try:
            col = vals[:, forecasts.grid.index(p)]
        except KeyError:
            continue
        r2[p] = pseudo_r2(col, y, p)
    med = np.array([np.median(np.sort(row)) for row in vals])
    rmsfe = float(math.sqrt(np.mean((y - med) ** 2)))
    dm = {}
    for name, other in (competitors or {}).items():
        ov = other.values[ok]
        other_med = np.array([np.median(np.sort(row)) for row in ov])
        dm[name] = dm_test((y - other_med) ** 2, (y - med) ** 2, forecasts.horizon)
    return EvaluationReport(
        horizon=forecasts.horizon,
        n_origins=int(y.size),
        ks=ks.statistic,
        ks_stars=ks.stars(),
        ks_grid=ksg.statistic,
        ks_grid_stars=ksg.stars(),
        pseudo_r2=r2,
        log_score=avg_log_score(dens, y),
        median_rmsfe=rmsfe,
        crossings=crossings,
        pits=pits,
        dm=dm,
    )
