"""Command-line entry point: ``hsbqr {mc,fit,forecast,eval}``.

Every command writes CSV outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 run failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from hsbqr import __version__
from hsbqr.density import QuantileForecastSet, smooth_to_density
from hsbqr.errors import ChainDivergenceError, DimensionError, DomainError, IngestionError, NumericalError
from hsbqr.gar import RollingPlan, evaluate_run, load_panel, rolling_forecast, synthetic_panel
from hsbqr.mc_lab import ERROR_MODELS, SPARSITY, DgpConfig, run_mc_study, write_tables
from hsbqr.quantile import QuantileGrid
from hsbqr.rand import make_rng
from hsbqr.sampler import BACKENDS, PRIORS, SamplerConfig, fit_quantiles

log = logging.getLogger("hsbqr")

RUN_ERRORS = (DomainError, DimensionError, NumericalError, ChainDivergenceError, IngestionError, OSError, ValueError)


class UsageError(Exception):
    pass


# --- argument types -----------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def _levels(text: str) -> list[float]:
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse quantile list {text!r}") from None
    if not vals or any(not 0.0 < v < 1.0 for v in vals):
        raise argparse.ArgumentTypeError("quantile levels must lie strictly between 0 and 1")
    return vals


def _sampler_args(p: argparse.ArgumentParser, iters: int = 5000) -> None:
    p.add_argument("--prior", choices=PRIORS, default="horseshoe")
    p.add_argument("--backend", choices=BACKENDS, default="auto")
    p.add_argument("--iters", type=_positive_int, default=iters)
    p.add_argument("--burn", type=_nonneg_int, default=None, help="default: iters // 5")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None, help="worker processes (env HSBQR_THREADS)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--timings", action="store_true", help="record wall times in the manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsbqr", description="Horseshoe Bayesian quantile regression tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    mc = sub.add_parser("mc", help="Monte Carlo study on a simulated design")
    mc.add_argument("--design", choices=SPARSITY, default="sparse")
    mc.add_argument("--error", choices=ERROR_MODELS, default="y1")
    mc.add_argument("--train", type=_positive_int, default=100)
    mc.add_argument("--holdout", type=_positive_int, default=100)
    mc.add_argument("--width", type=_positive_int, default=200, help="pattern width T1")
    mc.add_argument("--reps", type=_positive_int, default=20)
    mc.add_argument("--quantiles", type=_levels, default=[0.1, 0.3, 0.5, 0.7, 0.9])
    mc.add_argument("--compare", nargs="*", choices=PRIORS, default=[], help="extra priors to score on the same data")
    _sampler_args(mc)
    _common(mc)

    fit = sub.add_parser("fit", help="fit quantile regressions to a CSV dataset")
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--target", default=None, help="response column (default: first numeric column)")
    fit.add_argument("--quantiles", type=_levels, default=[0.5])
    _sampler_args(fit)
    _common(fit)

    fc = sub.add_parser("forecast", help="rolling-origin density forecasts")
    src = fc.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path)
    src.add_argument("--synthetic", type=_positive_int, metavar="N", help="simulate an N-quarter panel")
    fc.add_argument("--target", default=None)
    fc.add_argument("--target-transform", choices=("none", "log", "simple", "compound"), default="none")
    fc.add_argument("--start", default=None, help="first quarter kept, e.g. 1970Q1")
    fc.add_argument("--h", type=_positive_int, default=1)
    fc.add_argument("--window", type=_positive_int, default=50)
    fc.add_argument("--expanding", action="store_true")
    fc.add_argument("--grid", type=_positive_int, default=19, help="number of equidistant quantile levels")
    _sampler_args(fc, iters=2000)
    _common(fc)

    ev = sub.add_parser("eval", help="score forecasts written by `forecast`")
    ev.add_argument("--forecasts", type=Path, required=True)
    ev.add_argument("--compare", nargs="*", default=[], metavar="NAME=PATH", help="competitor forecast files")
    ev.add_argument("--density-points", type=_positive_int, default=128)
    _common(ev)
    return parser


# --- helpers -------------------------------------------------------------------


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HSBQR_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise UsageError(f"HSBQR_THREADS must be an integer, got {env!r}") from None


def _sampler_config(args) -> SamplerConfig:
    burn = args.burn if args.burn is not None else args.iters // 5
    if burn >= args.iters:
        raise UsageError(f"--burn ({burn}) must be smaller than --iters ({args.iters})")
    return SamplerConfig(prior=args.prior, beta_backend=args.backend, n_iter=args.iters, n_burn=burn)


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")


def _echo(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "timings", "verbose", "out", "threads"):
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _write_manifest(args, extra: dict, timings: dict) -> None:
    doc = {"command": args.command, "version": __version__, "seed": args.seed, "args": _echo(args)}
    doc.update(extra)
    if args.timings:
        doc["timings"] = {k: round(v, 3) for k, v in timings.items()}
    (args.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.10g}"


# --- commands -------------------------------------------------------------------


def cmd_mc(args) -> int:
    cfg = DgpConfig(
        sparsity=args.design,
        error_model=args.error,
        T_total=args.train + args.holdout,
        holdout=args.holdout,
        n_replications=args.reps,
        seed=args.seed,
        T1=args.width,
    )
    base = _sampler_config(args)
    estimators = {base.prior: base}
    for prior in args.compare:
        estimators.setdefault(prior, SamplerConfig(**{**base.to_dict(), "prior": prior}))
    t0 = time.perf_counter()
    score = run_mc_study(cfg, estimators, args.quantiles, threads=args.threads)
    elapsed = time.perf_counter() - t0
    failed = [n for n, k in score.n_ok.items() if k == 0]
    paths = write_tables(score, cfg, str(args.out / "mc"))
    _write_manifest(
        args,
        {"dgp": asdict(cfg), "estimators": {k: v.to_dict() for k, v in estimators.items()},
         "outputs": [Path(p).name for p in paths], "n_ok": score.n_ok},
        {"study": elapsed},
    )
    if failed:
        print(f"error: every replication failed for {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _read_table(path: Path, target: str | None) -> tuple[pd.Series, pd.DataFrame]:
    try:
        df = pd.read_csv(path, sep=None, engine="python")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    num = df.select_dtypes(include="number")
    if num.shape[1] < 2:
        raise IngestionError(f"{path} needs a response and at least one numeric regressor column")
    target = target or num.columns[0]
    if target not in num.columns:
        raise IngestionError(f"target column {target!r} not found among numeric columns")
    bad = num.index[num.isna().any(axis=1)]
    if len(bad):
        raise IngestionError(f"missing values in data rows {[int(i) + 2 for i in bad[:5]]}")
    return num[target], num.drop(columns=[target])


def cmd_fit(args) -> int:
    _require_file(args.data)
    y, X = _read_table(args.data, args.target)
    config = _sampler_config(args)
    t0 = time.perf_counter()
    fit = fit_quantiles(make_rng(args.seed), X.to_numpy(float), y.to_numpy(float), args.quantiles, config, list(X.columns))
    elapsed = time.perf_counter() - t0
    coefs = fit.coefficients()
    ivals = fit.intervals(0.95)
    with open(args.out / "coefficients.csv", "w") as fh:
        fh.write("quantile,coefficient,mean,lower95,upper95\n")
        for i, p in enumerate(fit.levels):
            lo, hi = ivals[i]
            for j, name in enumerate(fit.names):
                fh.write(f"{p:g},{name},{_fmt(coefs[i, j])},{_fmt(lo[j])},{_fmt(hi[j])}\n")
    _write_manifest(
        args,
        {"sampler": config.to_dict(), "target": y.name, "n_obs": int(len(y)), "outputs": ["coefficients.csv"]},
        {"fit": elapsed},
    )
    return 0


def _level_label(p: float) -> str:
    return f"q{p:.6g}"


def write_forecasts(fs: QuantileForecastSet, path: Path) -> None:
    cols = ["origin", "target", "horizon", "realization"] + [_level_label(p) for p in fs.grid.levels]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(len(fs)):
            vals = [_fmt(v) for v in fs.values[i]]
            real = _fmt(fs.realizations[i]) if fs.realizations is not None else ""
            fh.write(",".join([fs.origins[i], fs.targets[i], str(fs.horizon), real] + vals) + "\n")


def read_forecasts(path: Path) -> QuantileForecastSet:
    try:
        df = pd.read_csv(path, dtype={"origin": str, "target": str})
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path} is empty") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    need = {"origin", "target", "horizon", "realization"}
    if not need.issubset(df.columns):
        raise IngestionError(f"{path} lacks columns {sorted(need - set(df.columns))}")
    qcols = [c for c in df.columns if c.startswith("q")]
    if len(qcols) < 2:
        raise IngestionError(f"{path} has fewer than two quantile columns")
    if df.empty:
        raise IngestionError(f"{path} has no forecast rows")
    try:
        levels = [float(c[1:]) for c in qcols]
    except ValueError:
        raise IngestionError(f"{path}: quantile columns must be named q<level>") from None
    values = df[qcols].to_numpy(float)
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise IngestionError(f"{path}: non-finite forecasts in rows {[int(b) + 2 for b in bad[:5]]}")
    horizons = df["horizon"].unique()
    if horizons.size != 1:
        raise IngestionError(f"{path}: mixed horizons {sorted(horizons.tolist())}")
    return QuantileForecastSet(
        grid=QuantileGrid(tuple(levels)),
        values=values,
        horizon=int(horizons[0]),
        origins=df["origin"].tolist(),
        targets=df["target"].tolist(),
        realizations=df["realization"].to_numpy(float),
    )


def cmd_forecast(args) -> int:
    if args.data is not None:
        _require_file(args.data)
        panel = load_panel(args.data, target=args.target, start=args.start, target_transform=args.target_transform)
        source = {"data": str(args.data), "transforms": panel.transform_log}
    else:
        panel, beta = synthetic_panel(make_rng(args.seed, 1), n_obs=args.synthetic)
        source = {"synthetic": args.synthetic, "beta": beta.tolist()}
    plan = RollingPlan(window=args.window, horizon=args.h, expanding=args.expanding)
    if plan.n_origins(len(panel)) < 1:
        raise DomainError(f"{len(panel)} observations leave no origins for window {args.window} and h={args.h}")
    grid = QuantileGrid.equidistant(args.grid)
    config = _sampler_config(args)
    t0 = time.perf_counter()
    fs = rolling_forecast(panel, plan, grid, config, seed=args.seed, threads=args.threads)
    elapsed = time.perf_counter() - t0
    write_forecasts(fs, args.out / "forecasts.csv")
    _write_manifest(
        args,
        {"sampler": config.to_dict(), "source": source, "n_origins": len(fs), "flagged_origins": fs.flagged,
         "levels": list(grid.levels), "outputs": ["forecasts.csv"]},
        {"forecast": elapsed},
    )
    return 0


def _align(name: str, base: QuantileForecastSet, other: QuantileForecastSet) -> None:
    if len(other) != len(base):
        raise IngestionError(f"{name}: {len(other)} rows vs {len(base)} in the main forecast file")
    for i, (a, b) in enumerate(zip(base.targets, other.targets)):
        if a != b:
            raise IngestionError(f"{name}: row {i + 2} targets {b} but the main file targets {a}")
    if other.horizon != base.horizon:
        raise IngestionError(f"{name}: horizon {other.horizon} vs {base.horizon}")


def cmd_eval(args) -> int:
    _require_file(args.forecasts)
    competitors = {}
    for spec in args.compare:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--compare expects NAME=PATH, got {spec!r}")
        _require_file(Path(path))
        competitors[name] = Path(path)
    t0 = time.perf_counter()
    fs = read_forecasts(args.forecasts)
    others = {}
    for name, path in competitors.items():
        others[name] = read_forecasts(path)
        _align(name, fs, others[name])
    report = evaluate_run(fs, competitors=others)
    row = report.row()
    with open(args.out / "evaluation.csv", "w") as fh:
        fh.write(",".join(row) + "\n")
        fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row.values()) + "\n")
    with open(args.out / "pits.csv", "w") as fh:
        fh.write("target,pit\n")
        finite = np.all(np.isfinite(fs.values), axis=1) & np.isfinite(fs.realizations)
        for tgt, v in zip(np.asarray(fs.targets)[finite], report.pits):
            fh.write(f"{tgt},{_fmt(v)}\n")
    with open(args.out / "densities.csv", "w") as fh:
        fh.write("target,x,pdf,cdf\n")
        for tgt, vals in zip(fs.targets, fs.values):
            for x, f, F in smooth_to_density(vals).grid(args.density_points):
                fh.write(f"{tgt},{_fmt(x)},{_fmt(f)},{_fmt(F)}\n")
    elapsed = time.perf_counter() - t0
    _write_manifest(
        args,
        {"n_origins": report.n_origins, "competitors": sorted(competitors),
         "outputs": ["evaluation.csv", "pits.csv", "densities.csv"]},
        {"eval": elapsed},
    )
    return 0


COMMANDS = {"mc": cmd_mc, "fit": cmd_fit, "forecast": cmd_forecast, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.threads = _threads(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hsbqr: error: {exc}", file=sys.stderr)
        return 2
    except RUN_ERRORS as exc:
        print(f"hsbqr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
