"""Implied (cross-sectional) calibration by least squares on one day's chain."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import pricing
from .estimation import FitResult
from .model_core import BsParams, HestonParams, PivParams
from .optimize import nelder_mead
from .pricing import ContractSpec, PdeGrid
from .sde_engine import SimConfig

MODELS = ("PIV", "BS", "HS")


class CalibrationError(ValueError):
    pass


class ArbitrageError(ValueError):
    """Market price outside the no-arbitrage bounds for a call."""


@dataclass(frozen=True)
class CalibrationProblem:
    """One trade date's quotes for one model.

    ``piv_pricer`` selects the PIV objective: ``"mc"`` (common random numbers
    from ``seed`` with ``n_paths`` paths) or ``"pde"``.
    """

    quotes: tuple
    rate: float
    model: str
    seed: int = 0
    piv_pricer: str = "mc"
    n_paths: int = 20_000

    def __post_init__(self):
        object.__setattr__(self, "quotes", tuple(self.quotes))
        if not self.quotes:
            raise CalibrationError("empty option chain")
        if self.model not in MODELS:
            raise CalibrationError(f"unknown model {self.model!r}")
        if len({q.trade_date for q in self.quotes}) != 1:
            raise CalibrationError("quotes span more than one trade date")
        if self.piv_pricer not in ("mc", "pde"):
            raise CalibrationError(f"unknown PIV pricer {self.piv_pricer!r}")


def _groups(quotes):
    """Quotes grouped by (spot, ttm) so each group shares one pricing call."""
    out = {}
    for i, q in enumerate(quotes):
        out.setdefault((q.underlying_close, q.ttm_years), []).append(i)
    return [(s, t, np.array(ix)) for (s, t), ix in sorted(out.items())]


class ChainPricer:
    """Vectorized model prices for a fixed set of quotes."""

    def __init__(self, quotes, rate, seed=0, n_paths=20_000, piv_pricer="mc", pde_grid=None):
        self.quotes = tuple(quotes)
        self.rate = rate
        self.seed = seed
        self.n_paths = n_paths
        self.piv_pricer = piv_pricer
        self.pde_grid = pde_grid or PdeGrid()
        self.strikes = np.array([q.strike for q in self.quotes])
        self.market = np.array([q.option_close for q in self.quotes])
        self.spots = np.array([q.underlying_close for q in self.quotes])
        self.ttms = np.array([q.ttm_years for q in self.quotes])
        self.groups = _groups(self.quotes)

    def bs(self, sigma):
        return pricing.bs_call(self.spots, self.strikes, self.ttms, self.rate, sigma)

    def piv(self, kappa_or_params):
        params = kappa_or_params
        if not isinstance(params, PivParams):
            params = PivParams.from_kappa(float(params))
        if self.piv_pricer == "pde":
            res = pricing.price_quotes_piv_pde(
                params, self.spots, self.strikes, self.ttms, self.rate, self.pde_grid, boundary_check=False
            )
            return np.array([r.price for r in res])
        out = np.empty(len(self.quotes))
        for s, t, ix in self.groups:
            cfg = SimConfig(t, n_paths=self.n_paths, seed=self.seed)
            res = pricing.price_calls_piv_mc(params, s, self.strikes[ix], t, self.rate, cfg)
            out[ix] = [r.price for r in res]
        return out

    def fix_heston_quadrature(self, h: HestonParams):
        """Choose each group's quadrature once, adaptively, at ``h``."""
        self._quad = [
            pricing.heston_calls(h, s, self.strikes[ix], t, self.rate, n_nodes=64, u_max=100.0, tol=1e-6 * s)[1]
            for s, t, ix in self.groups
        ]

    def heston(self, h: HestonParams):
        quad = getattr(self, "_quad", None)
        out = np.empty(len(self.quotes))
        for g, (s, t, ix) in enumerate(self.groups):
            if quad is None:
                out[ix] = pricing.heston_calls(h, s, self.strikes[ix], t, self.rate)[0]
            else:
                q = quad[g]
                out[ix] = pricing.heston_calls(
                    h, s, self.strikes[ix], t, self.rate, q["n_nodes"], q["u_max"], adaptive=False
                )[0]
        return out

    def sse(self, model_prices):
        d = model_prices - self.market
        return float(d @ d)


def _best(runs):
    return min(runs, key=lambda r: (r.fun, tuple(r.x)))


def _calibrate_bs(cp: ChainPricer):
    def obj(z):
        return cp.sse(cp.bs(math.exp(z[0])))

    runs = [nelder_mead(obj, [math.log(s)], x_tol=1e-10, f_tol=1e-14, step=[0.3]) for s in (0.1, 0.3, 0.8)]
    best = _best(runs)
    return BsParams(sigma_bs=math.exp(best.x[0])), best


def _calibrate_piv(cp: ChainPricer):
    def obj(z):
        if abs(z[0]) > 12:
            return math.inf
        return cp.sse(cp.piv(math.exp(z[0])))

    runs = [nelder_mead(obj, [math.log(k)], x_tol=1e-6, f_tol=1e-14, step=[0.4], max_iter=200) for k in (0.005, 0.05)]
    best = _best(runs)
    return PivParams.from_kappa(math.exp(best.x[0])), best


HESTON_STARTS = ((2.0, 0.04, 0.5, -0.5), (5.0, 0.09, 1.0, -0.2))


def _heston_from(z):
    return HestonParams(
        kappa_v=math.exp(z[0]),
        theta_v=math.exp(z[1]),
        xi=math.exp(z[2]),
        rho=math.tanh(z[3]),
        v0=math.exp(z[4]),
    )


def _calibrate_heston(cp: ChainPricer, max_iter=1500):
    def obj(z):
        if np.any(np.abs(z[[0, 1, 2, 4]]) > 12) or abs(z[3]) > 5:
            return math.inf
        try:
            return cp.sse(cp.heston(_heston_from(z)))
        except (pricing.PricingError, ValueError, FloatingPointError):
            return math.inf

    # level the variance start at the chain's average BS implied variance
    sig_bs, _ = _calibrate_bs(cp)
    v_guess = sig_bs.sigma_bs**2
    # quadrature sized for the widest plausible integrand (low variance decays slowest)
    cp.fix_heston_quadrature(HestonParams(1.0, 0.25 * v_guess, 0.5, 0.0, 0.25 * v_guess))
    runs = []
    for k, tv, xi, rho in HESTON_STARTS:
        z0 = np.array([math.log(k), math.log(max(v_guess, tv)), math.log(xi), math.atanh(rho), math.log(v_guess)])
        with np.errstate(all="ignore"):
            runs.append(
                nelder_mead(obj, z0, max_iter=max_iter, x_tol=1e-4, f_tol=1e-14, step=[0.5, 0.4, 0.5, 0.5, 0.3])
            )
    best = _best(runs)
    return _heston_from(best.x), best


def calibrate_implied(problem: CalibrationProblem) -> FitResult:
    """Least-squares fit of the model's pricing parameters to one day's quotes.

    BS fits ``sigma_bs``; PIV fits ``kappa`` alone (risk-neutral prices depend
    on nothing else) and reports ``PivParams.from_kappa(kappa)``; Heston fits
    ``(kappa_v, theta_v, xi, rho, v0)``.
    """
    cp = ChainPricer(problem.quotes, problem.rate, problem.seed, problem.n_paths, problem.piv_pricer)
    if problem.model == "BS":
        params, res = _calibrate_bs(cp)
    elif problem.model == "PIV":
        params, res = _calibrate_piv(cp)
    else:
        params, res = _calibrate_heston(cp)
    diag = {"sse": res.fun, "n_quotes": len(problem.quotes), "simplex_spread": res.spread, "n_eval": res.n_eval}
    if problem.model == "PIV":
        diag.update(kappa=params.kappa, piv_pricer=problem.piv_pricer)
    return FitResult(problem.model, params, res.fun, res.converged, res.n_iter, diag)


def piv_sse(params: PivParams, quotes, rate, **pricer_opts) -> float:
    """SSE of PIV prices on ``quotes`` for a full 4-vector (used to check the kappa reduction)."""
    cp = ChainPricer(quotes, rate, **pricer_opts)
    return cp.sse(cp.piv(params))


def implied_vol_bs(c: ContractSpec, market_price: float, lo: float = 1e-6, hi: float = 5.0) -> float:
    """Black-Scholes implied volatility by bisection on ``[lo, hi]``.

    Stops once ``|price(sigma) - market_price| < 1e-10 * s0``. Raises
    :class:`ArbitrageError` outside ``(max(s0 - K e^{-rT}, 0), s0)``.
    """
    lower = c.lower_bound()
    if not (lower < market_price < c.s0):
        raise ArbitrageError(
            f"call price {market_price!r} outside no-arbitrage bounds ({lower!r}, {c.s0!r})"
        )
    tol = 1e-10 * c.s0

    def f(s):
        return float(pricing.bs_call(c.s0, c.strike, c.ttm, c.rate, s)) - market_price

    f_lo = f(lo)
    if f_lo >= -tol:
        return lo
    if f(hi) < -tol:
        raise ArbitrageError(f"call price {market_price!r} needs volatility above {hi}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
