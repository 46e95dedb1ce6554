"""Out-of-sample pricing backtests, bucketed error tables and Diebold-Mariano tests.

Two modes:

* historical: on each date, fit every model to the preceding ``window_days``
  closes of the underlying and price that date's quotes;
* implied: on each date, calibrate every model to the previous trading
  date's quotes and price that date's quotes.

Report layout (all CSVs have a header row; floats use full ``repr`` precision):

``moneyness_metrics.csv`` / ``maturity_metrics.csv``
    ``model,bucket,count,proportion_pct,mae,mse``
``dm_tests.csv``
    ``model_a,model_b,bucket,loss,n,statistic,p_value,alternative,note``
    (``note`` explains empty statistic/p-value cells)
``run_meta.json``
    mode, window, seed, paths, filters and per-model diagnostics.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from . import pricing
from .calibration import CalibrationError, CalibrationProblem, ChainPricer, calibrate_implied
from .estimation import (
    EstimationError,
    ReturnSeries,
    estimate_heston,
    log_return_path,
    log_returns,
    mle_bs,
    mle_piv,
)
from .market_data import (
    MaturityBucket,
    Moneyness,
    OptionQuote,
    RateSeries,
    DataError,
    apply_liquidity_filter,
    group_by_date,
    underlying_closes,
)

log = logging.getLogger(__name__)

MODELS = ("PIV", "BS", "HS")
MONEYNESS_BUCKETS = ("ITM", "OTM", "ATM", "ALL")
MATURITY_BUCKETS = tuple(b.value for b in MaturityBucket)
LOSSES = ("AE", "SE")
METRIC_COLUMNS = ("model", "bucket", "count", "proportion_pct", "mae", "mse")
DM_COLUMNS = ("model_a", "model_b", "bucket", "loss", "n", "statistic", "p_value", "alternative", "note")


class DegenerateSeriesError(ValueError):
    """Loss differential with zero sample variance; no test statistic exists."""


@dataclass(frozen=True)
class QuoteError:
    """One model's pricing error on one quote.

    ``quote_index`` is the quote's position in the filtered chain and pairs
    errors of different models on the same contract.
    """

    quote_index: int
    quote: OptionQuote
    model: str
    model_price: float
    market_price: float

    def __post_init__(self):
        if not (math.isfinite(self.model_price) and math.isfinite(self.market_price)):
            raise ValueError("prices must be finite")

    @property
    def abs_error(self) -> float:
        return abs(self.model_price - self.market_price)

    @property
    def sq_error(self) -> float:
        d = self.model_price - self.market_price
        return d * d


@dataclass(frozen=True)
class BucketMetrics:
    model: str
    bucket: str
    count: int
    proportion_pct: float
    mae: float
    mse: float


@dataclass(frozen=True)
class DmResult:
    model_a: str
    model_b: str
    bucket: str
    loss: str
    n: int
    statistic: float
    p_value: float
    alternative: str
    note: str = ""


@dataclass
class BacktestReport:
    mode: str
    models: tuple
    errors: list = field(default_factory=list)
    moneyness: list = field(default_factory=list)
    maturity: list = field(default_factory=list)
    dm: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def metric(self, model: str, bucket: str) -> BucketMetrics:
        for row in self.moneyness + self.maturity:
            if row.model == model and row.bucket == bucket:
                return row
        raise KeyError((model, bucket))

    def ranking(self, bucket: str = "ALL") -> list[str]:
        """Models ordered by MAE in ``bucket`` (models without errors last)."""
        rows = {r.model: r for r in self.moneyness + self.maturity if r.bucket == bucket}
        return sorted(self.models, key=lambda m: (rows[m].mae if m in rows and rows[m].count else math.inf, m))


# ---------------------------------------------------------------- metrics


def compute_error_metrics(errors) -> tuple[float, float]:
    """``(MAE, MSE)``: arithmetic means of absolute and squared errors."""
    errors = list(errors)
    if not errors:
        raise ValueError("no errors to aggregate")
    ae = np.array([e.abs_error for e in errors])
    se = np.array([e.sq_error for e in errors])
    return float(ae.mean()), float(se.mean())


def diebold_mariano(loss_a, loss_b, alternative: str = "less") -> tuple[float, float]:
    """Diebold-Mariano test at horizon 1.

    ``d = loss_a - loss_b``; statistic ``mean(d) / sqrt(var(d) / n)`` with the
    plain (divide-by-n) sample variance and no autocovariance terms.
    ``alternative="less"`` tests whether model a is more accurate (lower
    tail); ``"two-sided"`` doubles the smaller tail.
    """
    a = np.asarray(loss_a, dtype=float).ravel()
    b = np.asarray(loss_b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"loss series differ in length ({a.size} vs {b.size})")
    if a.size < 10:
        raise ValueError(f"need at least 10 paired losses, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("losses must be finite")
    if alternative not in ("less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = a - b
    n = d.size
    mean = float(np.mean(d))
    var = float(np.mean((d - mean) ** 2))
    if var == 0.0:
        raise DegenerateSeriesError("loss differential has zero variance")
    stat = mean / math.sqrt(var / n)
    if alternative == "less":
        p = float(ndtr(stat))
    else:
        p = float(2.0 * ndtr(-abs(stat)))
    return stat, p


def _bucket_of(q: OptionQuote, kind: str) -> str:
    return q.moneyness.value if kind == "moneyness" else q.maturity_bucket.value


def _metrics_table(errors, models, kind):
    buckets = MONEYNESS_BUCKETS if kind == "moneyness" else MATURITY_BUCKETS
    rows = []
    for m in models:
        mine = [e for e in errors if e.model == m]
        total = len(mine)
        for b in buckets:
            sel = mine if b == "ALL" else [e for e in mine if _bucket_of(e.quote, kind) == b]
            if sel:
                mae, mse = compute_error_metrics(sel)
            else:
                mae = mse = math.nan
            prop = 100.0 * len(sel) / total if total else math.nan
            rows.append(BucketMetrics(m, b, len(sel), prop, mae, mse))
    return rows


def _dm_table(errors, models, alternative="less"):
    by_model = {m: {e.quote_index: e for e in errors if e.model == m} for m in models}
    rows = []
    for i, ma in enumerate(models):
        for mb in models[i + 1:]:
            common = sorted(set(by_model[ma]) & set(by_model[mb]))
            for bucket in MONEYNESS_BUCKETS + MATURITY_BUCKETS:
                kind = "maturity" if bucket in MATURITY_BUCKETS else "moneyness"
                keys = [k for k in common if bucket == "ALL" or _bucket_of(by_model[ma][k].quote, kind) == bucket]
                for loss in LOSSES:
                    attr = "abs_error" if loss == "AE" else "sq_error"
                    la = [getattr(by_model[ma][k], attr) for k in keys]
                    lb = [getattr(by_model[mb][k], attr) for k in keys]
                    stat = p = math.nan
                    note = ""
                    try:
                        stat, p = diebold_mariano(la, lb, alternative)
                    except DegenerateSeriesError:
                        note = "degenerate: zero-variance loss differential"
                    except ValueError as exc:
                        note = str(exc)
                    rows.append(DmResult(ma, mb, bucket, loss, len(keys), stat, p, alternative, note))
    return rows


def build_report(mode, models, errors, meta) -> BacktestReport:
    """Aggregate errors (already in date, quote order) into a report."""
    models = tuple(models)
    return BacktestReport(
        mode=mode,
        models=models,
        errors=list(errors),
        moneyness=_metrics_table(errors, models, "moneyness"),
        maturity=_metrics_table(errors, models, "maturity"),
        dm=_dm_table(errors, models),
        meta=dict(meta),
    )


# ------------------------------------------------------------------ output


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def emit_report(report: BacktestReport, out_dir) -> list[str]:
    """Write the four report files into ``out_dir``; returns their paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for name, rows, cols in (
            ("moneyness_metrics.csv", report.moneyness, METRIC_COLUMNS),
            ("maturity_metrics.csv", report.maturity, METRIC_COLUMNS),
            ("dm_tests.csv", report.dm, DM_COLUMNS),
        ):
            path = os.path.join(out_dir, name)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                for r in rows:
                    w.writerow([_cell(getattr(r, c)) for c in cols])
            paths.append(path)
        path = os.path.join(out_dir, "run_meta.json")
        meta = {"mode": report.mode, "models": list(report.models), "n_errors": len(report.errors), **report.meta}
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        paths.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir!r}: {exc}") from exc
    return paths


def read_metrics_csv(path) -> list[BucketMetrics]:
    """Parse a metrics CSV written by :func:`emit_report`."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            f = lambda k: float(row[k]) if row[k] != "" else math.nan  # noqa: E731
            out.append(BucketMetrics(row["model"], row["bucket"], int(row["count"]), f("proportion_pct"), f("mae"), f("mse")))
    return out


# ------------------------------------------------------------------ pricing


def _price_with(model, params, quotes, rate, seed, paths, piv_pricer):
    """Model prices for one date's quotes (all sharing a spot)."""
    cp = ChainPricer(quotes, rate, seed=seed, n_paths=paths, piv_pricer=piv_pricer)
    if model == "BS":
        return cp.bs(params.sigma_bs)
    if model == "PIV":
        return cp.piv(params)
    return cp.heston(params)


def _errors_for(model, prices, indexed_quotes):
    return [QuoteError(i, q, model, float(p), q.option_close) for (i, q), p in zip(indexed_quotes, prices)]


def _run_tasks(fn, tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _prepare(chain, decile):
    chain = list(chain)
    if not chain:
        raise DataError("empty option chain")
    filtered = apply_liquidity_filter(chain, decile)
    filtered.sort(key=lambda q: q.trade_date)  # stable: keeps file order within a date
    by_date: dict = {}
    for i, q in enumerate(filtered):
        by_date.setdefault(q.trade_date, []).append((i, q))
    dates, closes = underlying_closes(chain)
    filters = {"liquidity_decile": decile, "n_raw": len(chain), "n_filtered": len(filtered)}
    return by_date, dates, closes, filters


def _finish(mode, models, results, meta):
    errors = []
    failures = {m: 0 for m in models}
    fits = []
    for res in results:
        errors.extend(res["errors"])
        for m in res["failed"]:
            failures[m] += 1
        fits.append(res["fit"])
    meta = dict(meta, model_failures=failures, fits=fits)
    return build_report(mode, models, errors, meta)


# -------------------------------------------------------------- historical


def _fit_historical(model, window_closes):
    if model == "PIV":
        return mle_piv(ReturnSeries(log_return_path(window_closes))).params
    rets = ReturnSeries(log_returns(window_closes))
    if model == "BS":
        return mle_bs(rets).params
    window_rv = max(2, min(21, len(rets) // 5))
    fit = estimate_heston(rets, window_rv=window_rv)
    # price from the filtered current variance rather than the first block
    return replace(fit.params, v0=fit.diagnostics["v_current"])


def _historical_task(task):
    date, window_closes, indexed, rate, models, seed, paths, piv_pricer = task
    quotes = [q for _, q in indexed]
    out = {"errors": [], "failed": [], "fit": {"date": date.isoformat()}}
    for m in models:
        try:
            params = _fit_historical(m, window_closes)
            prices = _price_with(m, params, quotes, rate, seed, paths, piv_pricer)
        except (EstimationError, pricing.PricingError, ValueError, FloatingPointError) as exc:
            log.warning("historical %s on %s failed: %s", m, date, exc)
            out["failed"].append(m)
            continue
        out["fit"][m] = _param_dict(params)
        out["errors"].extend(_errors_for(m, prices, indexed))
    return out


def _param_dict(params):
    return {k: float(v) for k, v in vars(params).items()}


def run_historical_backtest(
    chain,
    rates: RateSeries,
    window_days: int,
    models=MODELS,
    seed: int = 0,
    paths: int = 200_000,
    decile: float = 0.7,
    piv_pricer: str = "mc",
    workers: int = 1,
) -> BacktestReport:
    """Rolling-window historical backtest.

    For each trading date ``t`` with at least ``window_days`` earlier closes,
    the models are fitted to those closes (PIV: Euler pseudo-MLE on the
    log-return path; BS: Gaussian MLE; HS: block realized-variance fit with
    ``window_rv = min(21, returns // 5)``, priced from the filtered current
    variance) and every liquidity-filtered quote of ``t`` is priced. PIV
    prices start from ``R = 0`` at the day's close with ``paths`` Monte
    Carlo paths (common random numbers from ``seed``) or by PDE.
    """
    models = tuple(models)
    if window_days < 31:
        raise ValueError("window_days must be at least 31 (30 returns)")
    by_date, dates, closes, filters = _prepare(chain, decile)
    meta = {"window_days": window_days, "seed": seed, "paths": paths, "piv_pricer": piv_pricer, "filters": filters}
    if len(dates) < window_days + 1:
        log.warning("chain spans %d dates; window %d needs %d", len(dates), window_days, window_days + 1)
        meta.update(skipped_dates=len(dates), diagnostic=f"insufficient history: {len(dates)} dates for window {window_days}")
        return build_report("historical", models, [], meta)
    tasks = []
    skipped = window_days
    for i in range(window_days, len(dates)):
        indexed = by_date.get(dates[i])
        if not indexed:
            skipped += 1
            continue
        tasks.append(
            (dates[i], closes[i - window_days:i], indexed, rates.lookup(dates[i]), models, seed, paths, piv_pricer)
        )
    if skipped:
        log.info("historical backtest skipped %d dates (history or no quotes)", skipped)
    meta.update(skipped_dates=skipped, evaluation_dates=len(tasks))
    return _finish("historical", models, _run_tasks(_historical_task, tasks, workers), meta)


# ----------------------------------------------------------------- implied


def _implied_task(task):
    date, prev_date, prev_quotes, prev_rate, indexed, rate, models, seed, paths, piv_pricer = task
    quotes = [q for _, q in indexed]
    out = {"errors": [], "failed": [], "fit": {"date": date.isoformat(), "calibrated_on": prev_date.isoformat()}}
    for m in models:
        try:
            fit = calibrate_implied(
                CalibrationProblem(prev_quotes, prev_rate, m, seed=seed, piv_pricer=piv_pricer, n_paths=paths)
            )
            if not fit.converged:
                log.info("implied %s on %s: optimizer stopped before tolerance", m, prev_date)
            prices = _price_with(m, fit.params, quotes, rate, seed, paths, piv_pricer)
        except (CalibrationError, pricing.PricingError, ValueError, FloatingPointError) as exc:
            log.warning("implied %s on %s failed: %s", m, date, exc)
            out["failed"].append(m)
            continue
        out["fit"][m] = dict(_param_dict(fit.params), sse=fit.nll, converged=bool(fit.converged))
        out["errors"].extend(_errors_for(m, prices, indexed))
    return out


def run_implied_backtest(
    chain,
    rates: RateSeries,
    models=MODELS,
    seed: int = 0,
    paths: int = 200_000,
    decile: float = 0.7,
    piv_pricer: str = "mc",
    workers: int = 1,
) -> BacktestReport:
    """Previous-day implied backtest.

    For each trading date ``t`` after the first, every model is calibrated
    to all filtered quotes of the previous trading date and then prices the
    filtered quotes of ``t``. ``piv_pricer`` picks the PIV pricer for both
    steps (``"mc"`` with ``paths`` paths, or ``"pde"``). A failed model-date
    is left out and counted in ``meta['model_failures']``.
    """
    models = tuple(models)
    by_date, dates, _, filters = _prepare(chain, decile)
    meta = {"seed": seed, "paths": paths, "piv_pricer": piv_pricer, "filters": filters}
    if len(dates) < 2:
        meta.update(skipped_dates=len(dates), diagnostic="implied mode needs at least two trading dates")
        return build_report("implied", models, [], meta)
    tasks = []
    skipped = 1
    for prev, cur in zip(dates[:-1], dates[1:]):
        if not by_date.get(prev) or not by_date.get(cur):
            skipped += 1
            continue
        prev_quotes = [q for _, q in by_date[prev]]
        tasks.append(
            (cur, prev, prev_quotes, rates.lookup(prev), by_date[cur], rates.lookup(cur), models, seed, paths, piv_pricer)
        )
    meta.update(skipped_dates=skipped, evaluation_dates=len(tasks))
    return _finish("implied", models, _run_tasks(_implied_task, tasks, workers), meta)
