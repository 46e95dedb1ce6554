"""Command-line entry point.

Every subcommand accepts ``--config FILE`` (``key = value`` lines, ``#``
comments, keys named like the long flags), ``--seed``, ``--paths``,
``--threads`` and ``--out``. Flags given on the command line override the
config file. Results go to stdout (and files under ``--out``), logs to stderr.

Exit codes: 0 ok, 2 usage/validation error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import backtest, calibration, estimation, market_data, pricing, sde_engine
from .model_core import BsParams, HestonParams, PivParams

log = logging.getLogger("pivpricing")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
_GLOBAL_KEYS = {"config", "command", "verbose"}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved options of one run."""

    subcommand: str
    options: dict

    @property
    def seed(self) -> int:
        return int(self.options["seed"])

    def digest(self) -> str:
        blob = json.dumps({"cmd": self.subcommand, **self.options}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _date(text):
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text}") from exc


def _common(p):
    p.add_argument("--config", help="key = value file with defaults for any long flag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paths", type=_positive_int, default=200_000, help="Monte Carlo paths")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker cap")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _model_params(p, models=("piv", "bs", "hs")):
    p.add_argument("--model", choices=models, required=True)
    g = p.add_argument_group("PIV parameters (either --kappa, or --theta/--a[/--mu/--sigma])")
    g.add_argument("--kappa", type=float)
    g.add_argument("--theta", type=float)
    g.add_argument("--a", type=float)
    g.add_argument("--mu", type=float)
    g.add_argument("--sigma", type=float)
    g = p.add_argument_group("Black-Scholes parameters")
    g.add_argument("--sigma-bs", type=float)
    g.add_argument("--drift-bs", type=float)
    g = p.add_argument_group("Heston parameters")
    g.add_argument("--kappa-v", type=float)
    g.add_argument("--theta-v", type=float)
    g.add_argument("--xi", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--v0", type=float)
    g.add_argument("--drift-h", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pivpricing", description="Pearson-diffusion option pricing toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="simulate paths to CSV")
    _common(p)
    _model_params(p)
    p.add_argument("--measure", choices=("P", "Q"), default="Q", help="PIV only")
    p.add_argument("--s0", type=float, default=100.0)
    p.add_argument("--rate", type=float, default=0.05)
    p.add_argument("--horizon", type=float, required=True, help="years")
    p.add_argument("--steps", type=_positive_int)
    p.add_argument("--record-every", type=_positive_int, default=1)
    p.add_argument("--antithetic", action="store_true")

    p = sub.add_parser("price", help="price one European call")
    _common(p)
    _model_params(p)
    p.add_argument("--method", choices=("mc", "pde", "cf", "closed"), help="default: mc for piv, cf for hs")
    p.add_argument("--s0", type=float, required=True)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--ttm", type=float, required=True, help="years")
    p.add_argument("--rate", type=float, required=True)

    p = sub.add_parser("estimate", help="historical MLE from a returns/closes CSV")
    _common(p)
    p.add_argument("--model", choices=("piv", "bs", "hs"), required=True)
    p.add_argument("--returns", required=True, help="CSV with a 'close' or 'log_return' column")
    p.add_argument("--dt", type=float, default=estimation.DT_DAILY)
    p.add_argument("--window-rv", type=_positive_int, default=21, help="Heston realized-variance block")

    p = sub.add_parser("calibrate", help="implied calibration on one trade date")
    _common(p)
    p.add_argument("--model", choices=("piv", "bs", "hs"), required=True)
    p.add_argument("--chain", required=True)
    p.add_argument("--rates", required=True)
    p.add_argument("--date", type=_date, help="trade date (default: last in chain)")
    p.add_argument("--piv-pricer", choices=("mc", "pde"), default="mc")
    p.add_argument("--decile", type=float, default=0.7)

    p = sub.add_parser("backtest", help="historical or implied backtest report")
    _common(p)
    p.add_argument("--mode", choices=("historical", "implied"), required=True)
    p.add_argument("--chain", required=True)
    p.add_argument("--rates", required=True)
    p.add_argument("--window", type=_positive_int, default=90, help="historical window in trading days")
    p.add_argument("--models", default="piv,bs,hs")
    p.add_argument("--piv-pricer", choices=("mc", "pde"), default="mc")
    p.add_argument("--decile", type=float, default=0.7)

    p = sub.add_parser("synth-data", help="write a synthetic option chain and rate file")
    _common(p)
    _model_params(p)
    p.add_argument("--n-dates", type=_positive_int, default=120)
    p.add_argument("--s0", type=float, default=100.0)
    p.add_argument("--rate", type=float, default=0.06)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--start", type=_date, default=dt.date(2023, 1, 2))
    p.add_argument("--piv-pricer", choices=("mc", "pde"), default="pde")
    return parser


def _read_config(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{n}: expected 'key = value'")
                k, v = (s.strip() for s in line.split("=", 1))
                out[k.replace("-", "_")] = v
    except OSError as exc:
        raise market_data.DataError(f"cannot read config {path}: {exc}") from exc
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, raw in values.items():
        if k not in actions or k in _GLOBAL_KEYS or k == "help":
            raise UsageError(f"unknown config key {k!r}")
        a = actions[k]
        if isinstance(a, argparse._StoreTrueAction):
            defaults[k] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            v = a.type(raw) if a.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {k!r}: {exc}") from exc
        if a.choices is not None and v not in a.choices:
            raise UsageError(f"config key {k!r}: {v!r} not in {sorted(a.choices)}")
        defaults[k] = v
        a.required = False
    sub.set_defaults(**defaults)


def parse(argv) -> tuple[RunConfig, argparse.Namespace]:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, _read_config(args.config))
        args = parser.parse_args(argv)
    opts = {k: v for k, v in vars(args).items() if k not in _GLOBAL_KEYS}
    opts["config"] = args.config
    return RunConfig(args.command, opts), args


# ------------------------------------------------------------- parameters


def _need(o, *names, flag_for=None):
    missing = [n for n in names if o.get(n) is None]
    if missing:
        raise UsageError(f"--model {flag_for} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))


def model_params(o: dict):
    m = o["model"]
    if m == "piv":
        full = [o.get(k) is not None for k in ("theta", "a")]
        if o.get("kappa") is not None and any(full):
            raise UsageError("--kappa conflicts with --theta/--a; give one or the other")
        if o.get("kappa") is not None:
            return PivParams.from_kappa(o["kappa"], mu=o.get("mu") or 0.0)
        if not all(full):
            raise UsageError("--model piv needs --kappa, or both --theta and --a")
        return PivParams(o["theta"], o["a"], o.get("mu") or 0.0, o.get("sigma") or 1.0)
    if m == "bs":
        _need(o, "sigma_bs", flag_for="bs")
        return BsParams(o["sigma_bs"], o.get("drift_bs") or 0.0)
    _need(o, "kappa_v", "theta_v", "xi", "rho", "v0", flag_for="hs")
    return HestonParams(o["kappa_v"], o["theta_v"], o["xi"], o["rho"], o["v0"], o.get("drift_h") or 0.0)


# -------------------------------------------------------------- commands


def _emit(d: dict):
    for k, v in d.items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")


def cmd_simulate(o):
    params = model_params(o)
    cfg = sde_engine.SimConfig(
        o["horizon"], n_paths=o["paths"], n_steps=o["steps"], seed=o["seed"], antithetic=o["antithetic"],
        store_paths=True, record_every=o["record_every"], workers=o["threads"],
    )
    m = o["model"]
    if m == "piv":
        if o["measure"] == "P":
            batch = sde_engine.simulate_r_paths_p(params, cfg)
        else:
            batch = sde_engine.simulate_s_paths_q(params, o["s0"], o["rate"], cfg)
    elif m == "bs":
        batch = sde_engine.simulate_gbm_paths(params, o["s0"], o["rate"], cfg)
    else:
        batch = sde_engine.simulate_heston_paths(params, o["s0"], o["rate"], cfg)
    os.makedirs(o["out"], exist_ok=True)
    path = os.path.join(o["out"], "paths.csv")
    sde_engine.dump_paths_csv(batch, path)
    x = batch.terminal_values
    _emit({"process": batch.process, "measure": batch.measure, "n_paths": x.size,
           "terminal_mean": float(x.mean()), "terminal_std": float(x.std(ddof=1)), "paths_csv": path})


def cmd_price(o):
    params = model_params(o)
    c = pricing.ContractSpec(o["s0"], o["strike"], o["ttm"], o["rate"])
    m = o["model"]
    method = o["method"] or {"piv": "mc", "bs": "closed", "hs": "cf"}[m]
    allowed = {"piv": ("mc", "pde"), "bs": ("closed",), "hs": ("cf", "mc")}[m]
    if method not in allowed:
        raise UsageError(f"--method {method} is not available for --model {m} (choose from {', '.join(allowed)})")
    cfg = sde_engine.SimConfig(c.ttm, n_paths=o["paths"], seed=o["seed"], workers=o["threads"])
    if m == "bs":
        res = pricing.price_call_bs(params.sigma_bs, c)
    elif m == "piv":
        res = pricing.price_call_piv_mc(params, c, cfg) if method == "mc" else pricing.price_call_piv_pde(params, c)
    else:
        res = pricing.price_call_heston(params, c) if method == "cf" else pricing.price_call_heston_mc(params, c, cfg)
    _emit({"price": res.price, "std_error": res.std_error, "method": res.method})


def _read_returns_csv(path, dt_):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise market_data.DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise estimation.EstimationError(f"{path}: series too short: 0 observations, need at least 30")
    cols = rows[0].keys()
    try:
        if "close" in cols:
            closes = np.array([float(r["close"]) for r in rows])
            if np.any(closes <= 0):
                raise market_data.DataError(f"{path}: closes must be positive")
            return estimation.log_returns(closes), estimation.log_return_path(closes)
        if "log_return" in cols:
            rets = np.array([float(r["log_return"]) for r in rows])
            return rets, np.concatenate([[0.0], np.cumsum(rets)])
    except ValueError as exc:
        raise market_data.DataError(f"{path}: {exc}") from exc
    raise market_data.DataError(f"{path}: need a 'close' or 'log_return' column")


def cmd_estimate(o):
    rets, path = _read_returns_csv(o["returns"], o["dt"])
    m = o["model"]
    if m == "piv":
        fit = estimation.mle_piv(estimation.ReturnSeries(path, o["dt"], instrument=o["returns"]))
    elif m == "bs":
        fit = estimation.mle_bs(estimation.ReturnSeries(rets, o["dt"], instrument=o["returns"]))
    else:
        fit = estimation.estimate_heston(estimation.ReturnSeries(rets, o["dt"]), window_rv=o["window_rv"])
    _report_fit(fit, o)


def _report_fit(fit, o):
    out = {"model": fit.model, "nll": fit.nll, "converged": bool(fit.converged), **vars(fit.params)}
    os.makedirs(o["out"], exist_ok=True)
    with open(os.path.join(o["out"], "fit.json"), "w") as fh:
        json.dump({**out, "diagnostics": fit.diagnostics}, fh, indent=2, default=str)
    _emit(out)


def _load_inputs(o):
    chain = market_data.load_option_chain(o["chain"])
    rates = market_data.load_rate_series(o["rates"])
    if not chain:
        raise market_data.DataError(f"{o['chain']}: no valid quotes")
    return chain, rates


def cmd_calibrate(o):
    chain, rates = _load_inputs(o)
    day = o["date"] or max(q.trade_date for q in chain)
    quotes = [q for q in market_data.apply_liquidity_filter(chain, o["decile"]) if q.trade_date == day]
    if not quotes:
        raise market_data.DataError(f"no filtered quotes on {day}")
    prob = calibration.CalibrationProblem(
        quotes, rates.lookup(day), o["model"].upper(), seed=o["seed"], piv_pricer=o["piv_pricer"], n_paths=o["paths"]
    )
    _report_fit(calibration.calibrate_implied(prob), o)


def cmd_backtest(o):
    chain, rates = _load_inputs(o)
    models = tuple(m.strip().upper() for m in o["models"].split(",") if m.strip())
    bad = [m for m in models if m not in backtest.MODELS]
    if bad or not models:
        raise UsageError(f"--models: unknown model(s) {bad or o['models']!r}")
    common = dict(models=models, seed=o["seed"], paths=o["paths"], decile=o["decile"],
                  piv_pricer=o["piv_pricer"], workers=o["threads"])
    if o["mode"] == "historical":
        rep = backtest.run_historical_backtest(chain, rates, o["window"], **common)
    else:
        rep = backtest.run_implied_backtest(chain, rates, **common)
    for path in backtest.emit_report(rep, o["out"]):
        print(f"wrote={path}")
    for m in rep.models:
        row = rep.metric(m, "ALL")
        print(f"{m} ALL count={row.count} mae={row.mae!r} mse={row.mse!r}")


def cmd_synth_data(o):
    params = model_params(o)
    gen = market_data.ChainGenerator(
        o["model"].upper(), params, o["n_dates"], s0=o["s0"], rate=o["rate"], start=o["start"],
        noise=o["noise"], pricer=o["piv_pricer"], mc_paths=min(o["paths"], 200_000),
    )
    quotes = market_data.generate_synthetic_chain(gen, o["seed"])
    os.makedirs(o["out"], exist_ok=True)
    chain_path = os.path.join(o["out"], "chain.csv")
    rates_path = os.path.join(o["out"], "rates.csv")
    market_data.write_option_chain(quotes, chain_path)
    market_data.write_rate_series(gen.rate_series(), rates_path)
    dates, closes = market_data.underlying_closes(quotes) if quotes else ([], [])
    with open(os.path.join(o["out"], "closes.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("date", "close"))
        for d, c in zip(dates, closes):
            w.writerow((d.isoformat(), repr(float(c))))
    _emit({"n_quotes": len(quotes), "chain_csv": chain_path, "rates_csv": rates_path})


COMMANDS = {
    "simulate": cmd_simulate,
    "price": cmd_price,
    "estimate": cmd_estimate,
    "calibrate": cmd_calibrate,
    "backtest": cmd_backtest,
    "synth-data": cmd_synth_data,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg, args = parse(argv)
    except UsageError as exc:
        print(f"pivpricing: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except market_data.DataError as exc:
        print(f"pivpricing: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(
        stream=sys.stderr, level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    print(f"# seed={cfg.seed} config_digest={cfg.digest()}")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            COMMANDS[cfg.subcommand](cfg.options)
    except UsageError as exc:
        print(f"pivpricing: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except market_data.DataError as exc:
        print(f"pivpricing: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (pricing.PricingError, sde_engine.SimulationError, backtest.DegenerateSeriesError, FloatingPointError) as exc:
        print(f"pivpricing: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (estimation.EstimationError, calibration.CalibrationError, calibration.ArbitrageError, ValueError) as exc:
        print(f"pivpricing: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"pivpricing: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
