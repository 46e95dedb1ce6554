"""Option-chain and rate files, liquidity filter, bucket classifiers, synthetic chains.

Option chain CSV header::

    trade_date,expiry_date,underlying_close,strike,option_close,contracts_traded,lot_size

Rate CSV header::

    date,yield_91d

Dates are ISO-8601. Time to maturity is in calendar days; pricing uses
``ttm_days / 365``. Turnover is derived in lakhs:
``contracts_traded * lot_size * underlying_close / 1e5``.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model_core import BsParams, HestonParams, PivParams

log = logging.getLogger(__name__)

CHAIN_COLUMNS = (
    "trade_date",
    "expiry_date",
    "underlying_close",
    "strike",
    "option_close",
    "contracts_traded",
    "lot_size",
)
RATE_COLUMNS = ("date", "yield_91d")
MAX_TTM_DAYS = 90
DAYS_PER_YEAR = 365.0
LAKH = 1e5


class DataError(ValueError):
    """Input file or record failed validation."""


class Moneyness(str, Enum):
    ITM = "ITM"
    OTM = "OTM"
    ATM = "ATM"


class MaturityBucket(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


@dataclass(frozen=True)
class OptionQuote:
    trade_date: dt.date
    expiry_date: dt.date
    underlying_close: float
    strike: float
    option_close: float
    contracts_traded: float
    lot_size: float

    def __post_init__(self):
        if not self.expiry_date > self.trade_date:
            raise DataError("expiry_date must be after trade_date")
        if not 0 < self.ttm_days <= MAX_TTM_DAYS:
            raise DataError(f"ttm_days={self.ttm_days} outside (0, {MAX_TTM_DAYS}]")
        for name in ("underlying_close", "strike", "option_close"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"{name} must be positive, got {v!r}")
        for name in ("contracts_traded", "lot_size"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DataError(f"{name} must be non-negative, got {v!r}")

    @property
    def ttm_days(self) -> int:
        return (self.expiry_date - self.trade_date).days

    @property
    def ttm_years(self) -> float:
        return self.ttm_days / DAYS_PER_YEAR

    @property
    def turnover(self) -> float:
        """Turnover in lakhs."""
        return self.contracts_traded * self.lot_size * self.underlying_close / LAKH

    @property
    def moneyness(self) -> Moneyness:
        return classify_moneyness(self.underlying_close, self.strike)

    @property
    def maturity_bucket(self) -> MaturityBucket:
        return classify_maturity(self.ttm_days)


@dataclass(frozen=True)
class RatePoint:
    date: dt.date
    yield_91d: float


# ------------------------------------------------------------ classification


def classify_moneyness(underlying: float, strike: float) -> Moneyness:
    """ATM for S/K in (0.97, 1.03), OTM for S/K <= 0.97, ITM for S/K >= 1.03."""
    if not (underlying > 0 and strike > 0):
        raise ValueError("underlying and strike must be positive")
    ratio = underlying / strike
    if ratio <= 0.97:
        return Moneyness.OTM
    if ratio >= 1.03:
        return Moneyness.ITM
    return Moneyness.ATM


_MATURITY_EDGES = ((7, MaturityBucket.A), (15, MaturityBucket.B), (30, MaturityBucket.C), (60, MaturityBucket.D), (90, MaturityBucket.E))


def classify_maturity(ttm_days: int) -> MaturityBucket:
    """Left-open, right-closed day ranges: A (0,7], B (7,15], C (15,30], D (30,60], E (60,90]."""
    if not 1 <= ttm_days <= MAX_TTM_DAYS:
        raise ValueError(f"ttm_days={ttm_days} outside [1, {MAX_TTM_DAYS}]")
    for edge, bucket in _MATURITY_EDGES:
        if ttm_days <= edge:
            return bucket
    raise AssertionError("unreachable")


# ------------------------------------------------------------------- filters


def turnover_threshold(quotes, decile: float = 0.7) -> float:
    """Empirical ``decile`` quantile of turnover (linear interpolation between order statistics)."""
    t = np.array([q.turnover for q in quotes], dtype=float)
    return float(np.quantile(t, decile, method="linear"))


def apply_liquidity_filter(quotes, decile: float = 0.7) -> list[OptionQuote]:
    """Keep quotes whose turnover is at or above the ``decile`` turnover quantile."""
    quotes = list(quotes)
    if not quotes:
        raise ValueError("no quotes to filter")
    cut = turnover_threshold(quotes, decile)
    return [q for q in quotes if q.turnover >= cut]


# --------------------------------------------------------------------- I/O


def _parse_date(text, what):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"bad {what} {text!r}") from exc


def _parse_float(text, what):
    try:
        v = float(text)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad {what} {text!r}") from exc
    if not math.isfinite(v):
        raise DataError(f"non-finite {what}")
    return v


@dataclass
class LoadReport:
    accepted: int = 0
    rejected: list = field(default_factory=list)  # (row number, message)


def load_option_chain(path, report: LoadReport | None = None, strict: bool = False) -> list[OptionQuote]:
    """Read and validate an option-chain CSV.

    Invalid rows are skipped and recorded in ``report`` as ``(row, reason)``
    with 1-based data row numbers (``strict=True`` raises on the first one).
    Structural problems (missing columns, empty file) always raise.
    """
    report = report if report is not None else LoadReport()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in CHAIN_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        quotes = []
        for i, row in enumerate(reader, start=1):
            try:
                q = OptionQuote(
                    trade_date=_parse_date(row["trade_date"], "trade_date"),
                    expiry_date=_parse_date(row["expiry_date"], "expiry_date"),
                    underlying_close=_parse_float(row["underlying_close"], "underlying_close"),
                    strike=_parse_float(row["strike"], "strike"),
                    option_close=_parse_float(row["option_close"], "option_close"),
                    contracts_traded=_parse_float(row["contracts_traded"], "contracts_traded"),
                    lot_size=_parse_float(row["lot_size"], "lot_size"),
                )
            except DataError as exc:
                if strict:
                    raise DataError(f"{path}: row {i}: {exc}") from exc
                report.rejected.append((i, str(exc)))
                continue
            quotes.append(q)
    if not quotes and not report.rejected:
        raise DataError(f"{path}: no data rows")
    report.accepted = len(quotes)
    if report.rejected:
        log.warning("%s: accepted %d rows, rejected %d", path, report.accepted, len(report.rejected))
    return quotes


def write_option_chain(quotes, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CHAIN_COLUMNS)
        for q in quotes:
            w.writerow(
                [
                    q.trade_date.isoformat(),
                    q.expiry_date.isoformat(),
                    repr(q.underlying_close),
                    repr(q.strike),
                    repr(q.option_close),
                    repr(q.contracts_traded),
                    repr(q.lot_size),
                ]
            )


class RateSeries:
    """Sorted rate points; lookups use the last rate on or before the date."""

    def __init__(self, points):
        pts = sorted(points, key=lambda p: p.date)
        if not pts:
            raise DataError("empty rate series")
        self.points = pts
        self._dates = [p.date for p in pts]

    def __len__(self):
        return len(self.points)

    def lookup(self, date: dt.date) -> float:
        i = bisect.bisect_right(self._dates, date) - 1
        if i < 0:
            raise DataError(f"no rate on or before {date.isoformat()} (first is {self._dates[0].isoformat()})")
        return self.points[i].yield_91d

    @classmethod
    def constant(cls, rate: float, start: dt.date) -> "RateSeries":
        return cls([RatePoint(start, rate)])


def load_rate_series(path) -> RateSeries:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in RATE_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        pts = []
        for i, row in enumerate(reader, start=1):
            try:
                p = RatePoint(_parse_date(row["date"], "date"), _parse_float(row["yield_91d"], "yield_91d"))
            except DataError as exc:
                raise DataError(f"{path}: row {i}: {exc}") from exc
            if not 0.0 <= p.yield_91d <= 0.2:
                log.warning("%s: row %d: unusual rate %g", path, i, p.yield_91d)
            pts.append(p)
    if not pts:
        raise DataError(f"{path}: no data rows")
    return RateSeries(pts)


def write_rate_series(rates: RateSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATE_COLUMNS)
        for p in rates.points:
            w.writerow([p.date.isoformat(), repr(p.yield_91d)])


# --------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class ChainGenerator:
    """Recipe for a synthetic option chain.

    ``model`` is ``"PIV"``, ``"BS"`` or ``"HS"`` with matching ``params``.
    The underlying follows the model's physical dynamics on a business-day
    calendar (BS: GBM with ``drift_bs``; HS: Heston with ``drift_h``; PIV: the
    Pearson diffusion for ``R = ln(S / s0)``). Options are priced under the
    risk-neutral measure at a constant ``rate``; for PIV the pricing state is
    reset to ``R = 0`` every day, matching the model's pricing convention.
    ``strikes`` are multiples of the day's close, rounded to ``strike_step``.
    ``maturities`` are calendar-day times to expiry.
    """

    model: str
    params: object
    n_dates: int
    strikes: tuple = (0.9, 0.95, 0.98, 1.0, 1.02, 1.05, 1.1)
    maturities: tuple = (7, 14, 28, 56, 84)
    s0: float = 100.0
    rate: float = 0.06
    start: dt.date = dt.date(2023, 1, 2)
    noise: float = 0.0
    strike_step: float = 0.5
    lot_size: float = 50.0
    pricer: str = "pde"  # PIV only: "pde" or "mc"
    mc_paths: int = 20_000

    def rate_series(self) -> "RateSeries":
        return RateSeries.constant(self.rate, self.start)


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def _underlying_path(gen: ChainGenerator, rng) -> np.ndarray:
    n = gen.n_dates
    dt_y = 1.0 / 252.0
    z = rng.standard_normal((n - 1, 2))
    s = np.empty(n)
    s[0] = gen.s0
    if gen.model == "BS":
        p: BsParams = gen.params
        inc = (p.drift_bs - 0.5 * p.sigma_bs**2) * dt_y + p.sigma_bs * math.sqrt(dt_y) * z[:, 0]
        s[1:] = gen.s0 * np.exp(np.cumsum(inc))
    elif gen.model == "HS":
        h: HestonParams = gen.params
        x, v = 0.0, h.v0
        rc = math.sqrt(1 - h.rho**2)
        for k in range(n - 1):
            vp = max(v, 0.0)
            x += (h.drift_h - 0.5 * vp) * dt_y + math.sqrt(vp * dt_y) * z[k, 0]
            v += h.kappa_v * (h.theta_v - vp) * dt_y + h.xi * math.sqrt(vp * dt_y) * (h.rho * z[k, 0] + rc * z[k, 1])
            s[k + 1] = gen.s0 * math.exp(x)
    elif gen.model == "PIV":
        p: PivParams = gen.params
        r = 0.0
        for k in range(n - 1):
            r += -p.theta * (r - p.mu) * dt_y + math.sqrt(2 * p.kappa * (1 + r * r) * dt_y) * z[k, 0]
            s[k + 1] = gen.s0 * math.exp(r)
    else:
        raise ValueError(f"unknown model {gen.model!r}")
    return s


def _model_prices(gen: ChainGenerator, s: float, strikes, ttm_years: float, seed: int) -> np.ndarray:
    from . import pricing
    from .sde_engine import SimConfig

    strikes = np.asarray(strikes, dtype=float)
    if gen.model == "BS":
        return pricing.bs_call(s, strikes, ttm_years, gen.rate, gen.params.sigma_bs)
    if gen.model == "HS":
        return pricing.heston_calls(gen.params, s, strikes, ttm_years, gen.rate)[0]
    if gen.pricer == "mc":
        cfg = SimConfig(ttm_years, n_paths=gen.mc_paths, seed=seed)
        return np.array([r.price for r in pricing.price_calls_piv_mc(gen.params, s, strikes, ttm_years, gen.rate, cfg)])
    return np.array([r.price for r in pricing.price_calls_piv_pde(gen.params, s, strikes, ttm_years, gen.rate)])


def generate_synthetic_chain(gen: ChainGenerator, seed: int) -> list[OptionQuote]:
    """Simulate an underlying and price a strike x maturity grid on every day.

    Noise is multiplicative, ``price * exp(noise * Z)``. Turnover fields are
    synthesized so that near-the-money, short-dated contracts trade most.
    Quotes whose price falls below 0.05 are dropped (no tradeable value).
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0])))
    dates = business_days(gen.start, gen.n_dates)
    if not gen.strikes or not gen.maturities or gen.n_dates < 1:
        return []
    closes = _underlying_path(gen, rng) if gen.n_dates > 1 else np.array([gen.s0])
    quotes = []
    for di, (day, s) in enumerate(zip(dates, closes)):
        strikes = sorted({round(m * s / gen.strike_step) * gen.strike_step for m in gen.strikes})
        for mi, ttm in enumerate(gen.maturities):
            prices = _model_prices(gen, float(s), strikes, ttm / DAYS_PER_YEAR, seed * 100_003 + di * 101 + mi)
            if gen.noise > 0:
                prices = prices * np.exp(gen.noise * rng.standard_normal(len(prices)))
            for k, p in zip(strikes, prices):
                if not p >= 0.05:
                    continue
                liq = math.exp(-8.0 * abs(math.log(k / s)) - ttm / 60.0)
                contracts = float(np.floor(1000.0 * liq * (0.5 + rng.random())) + 1.0)
                quotes.append(
                    OptionQuote(
                        trade_date=day,
                        expiry_date=day + dt.timedelta(days=int(ttm)),
                        underlying_close=float(s),
                        strike=float(k),
                        option_close=float(p),
                        contracts_traded=contracts,
                        lot_size=gen.lot_size,
                    )
                )
    return quotes


def group_by_date(quotes) -> dict:
    out: dict = {}
    for q in quotes:
        out.setdefault(q.trade_date, []).append(q)
    return dict(sorted(out.items()))


def underlying_closes(quotes) -> tuple[list, np.ndarray]:
    """One underlying close per trade date (first quote wins), date-sorted."""
    by = group_by_date(quotes)
    return list(by), np.array([qs[0].underlying_close for qs in by.values()])
