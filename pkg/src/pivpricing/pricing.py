"""European call pricers: PIV (Monte Carlo and PDE), Black-Scholes, Heston."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg.lapack import dgttrf as _gttrf, dgttrs as _gttrs
from scipy.special import ndtr

from .model_core import HestonParams, PivParams
from .sde_engine import SimConfig, simulate_heston_paths, simulate_s_paths_q


class PricingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContractSpec:
    s0: float
    strike: float
    ttm: float
    rate: float

    def __post_init__(self):
        if not (self.s0 > 0 and self.ttm > 0):
            raise ValueError("s0 and ttm must be positive")
        # strike 0 is allowed: the payoff is then S_T itself
        if not self.strike >= 0:
            raise ValueError("strike must be non-negative")
        if not math.isfinite(self.rate):
            raise ValueError("rate must be finite")

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.ttm)

    def lower_bound(self) -> float:
        return max(self.s0 - self.strike * self.discount, 0.0)


@dataclass(frozen=True)
class PriceResult:
    price: float
    std_error: float
    method: str
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------- Black-Scholes


def bs_call(s0, strike, ttm, rate, sigma):
    """Vectorized Black-Scholes call value (no input validation)."""
    s0, strike, ttm, sigma = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (s0, strike, ttm, sigma)))
    shape = s0.shape
    s0, strike, ttm, sigma = (np.atleast_1d(v).ravel() for v in (s0, strike, ttm, sigma))
    disc_k = strike * np.exp(-rate * ttm)
    intrinsic = np.maximum(s0 - disc_k, 0.0)
    sd = sigma * np.sqrt(ttm)
    out = intrinsic.copy()
    ok = (sd > 0) & (strike > 0)
    if np.any(ok):
        d1 = (np.log(s0[ok] / disc_k[ok]) + 0.5 * sd[ok] ** 2) / sd[ok]
        d2 = d1 - sd[ok]
        out[ok] = s0[ok] * ndtr(d1) - disc_k[ok] * ndtr(d2)
    return out.reshape(shape)


def price_call_bs(bs_sigma: float, c: ContractSpec) -> PriceResult:
    """Closed-form Black-Scholes call; ``bs_sigma = 0`` gives the discounted intrinsic value."""
    if not bs_sigma >= 0:
        raise ValueError("bs_sigma must be non-negative")
    p = float(bs_call(c.s0, c.strike, c.ttm, c.rate, bs_sigma))
    return PriceResult(p, 0.0, "closed-form", {"sigma": bs_sigma})


# ------------------------------------------------------------------ PIV by MC


def _mc_config(config: SimConfig, ttm: float) -> SimConfig:
    return config if config.horizon_t == ttm else config.with_horizon(ttm)


def price_calls_piv_mc(
    params: PivParams,
    s0: float,
    strikes,
    ttm: float,
    rate: float,
    config: SimConfig,
    r0: float = 0.0,
) -> list[PriceResult]:
    """Price a strip of calls on one set of risk-neutral paths (common random numbers)."""
    cfg = _mc_config(config, ttm)
    terminal = simulate_s_paths_q(params, s0, rate, cfg, r0).terminal_values
    disc = math.exp(-rate * ttm)
    n = terminal.shape[0]
    out = []
    for k in np.atleast_1d(np.asarray(strikes, dtype=float)):
        pay = np.maximum(terminal - k, 0.0)
        se = disc * pay.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
        out.append(
            PriceResult(
                disc * float(pay.mean()),
                float(se),
                "MC",
                {"n_paths": n, "n_steps": cfg.n_steps, "seed": cfg.seed, "kappa": params.kappa},
            )
        )
    return out


def price_call_piv_mc(params: PivParams, c: ContractSpec, config: SimConfig, r0: float = 0.0) -> PriceResult:
    """Discounted mean call payoff over Euler paths of the risk-neutral price."""
    return price_calls_piv_mc(params, c.s0, [c.strike], c.ttm, c.rate, config, r0)[0]


# ----------------------------------------------------------------- PIV by PDE


@dataclass(frozen=True)
class PdeGrid:
    """Crank-Nicolson mesh. ``half_width=None`` uses 8 effective std devs."""

    n_space: int = 800
    n_time: int = 100
    half_width: float | None = None
    rannacher_steps: int = 4

    def __post_init__(self):
        if self.n_space < 64 or self.n_time < 64:
            raise ValueError("PDE grid needs at least 64 space and 64 time steps")

    def refine(self, factor: int = 2) -> "PdeGrid":
        return PdeGrid(self.n_space * factor, self.n_time * factor, self.half_width, self.rannacher_steps)


def _effective_sd(kappa, ttm, r0=0.0):
    return math.sqrt(2.0 * kappa * (1.0 + r0 * r0) * ttm)


def _piv_pde_solve(kappa, s_ref, strikes, ttm, rate, z_lo, z_hi, n_space, n_time, rannacher):
    """Backward solve in ``z = ln(x / s_ref)`` for a batch of contracts at once.

    ``s_ref``, ``strikes``, ``ttm``, ``z_lo`` and ``z_hi`` broadcast to one row
    per contract. Each row gets its own mesh, shifted so its payoff kink sits
    on a node, and its own time step ``ttm / n_time``; the rows are stacked
    into one block-tridiagonal system that shares the time loop. The
    operator is time-independent, so each step type is factored once.
    Returns (nodes, values at t=0, terminal), each shaped (rows, n_space + 1).
    """
    strikes, s_ref, ttm, z_lo, z_hi = (
        np.array(v, dtype=float) for v in np.broadcast_arrays(strikes, s_ref, ttm, z_lo, z_hi)
    )
    m = strikes.size
    h = (z_hi - z_lo) / n_space
    with np.errstate(divide="ignore"):
        zk = np.log(strikes / s_ref)
    inside = (strikes > 0) & (zk > z_lo) & (zk < z_hi)
    z_lo[inside] = zk[inside] - np.round((zk[inside] - z_lo[inside]) / h[inside]) * h[inside]
    z = z_lo[:, None] + h[:, None] * np.arange(n_space + 1)
    x = s_ref[:, None] * np.exp(z)
    terminal = np.maximum(x - strikes[:, None], 0.0)

    zi = z[:, 1:-1]
    h2 = (h * h)[:, None]
    diff = kappa * (1.0 + zi * zi)
    conv = rate - diff
    lower = diff / h2 - conv / (2.0 * h[:, None])
    upper = diff / h2 + conv / (2.0 * h[:, None])
    centre = -2.0 * diff / h2 - rate
    n_in = n_space - 1
    dt = (ttm / n_time)[:, None]

    def factor(frac, w):
        # (I - w dt L); blocks decoupled by zeroing the cross-block entries
        wdt = w * frac * dt
        pad = np.zeros((m, 1))
        dl = np.concatenate([-wdt * lower[:, 1:], pad], axis=1).ravel()[:-1]
        du = np.concatenate([-wdt * upper[:, :-1], pad], axis=1).ravel()[:-1]
        d = (1.0 - wdt * centre).ravel()
        out = _gttrf(dl, d, du)
        if out[-1] != 0:
            raise PricingError("PDE system is singular")
        return out[:-1]

    def step(f, tau_new, frac, w, lu):
        edt = (1.0 - w) * frac * dt
        rhs = f[:, 1:-1] + edt * (lower * f[:, :-2] + centre * f[:, 1:-1] + upper * f[:, 2:])
        hi_b = x[:, -1] - strikes * np.exp(-rate * tau_new)
        rhs[:, -1] += w * frac * dt[:, 0] * upper[:, -1] * hi_b
        sol, _ = _gttrs(*lu, rhs.ravel())
        new = np.empty_like(f)
        new[:, 1:-1] = sol.reshape(m, n_in)
        new[:, 0] = 0.0
        new[:, -1] = hi_b
        return new

    f = terminal.copy()
    k = 0.0  # elapsed time in units of dt
    # Rannacher start: implicit half steps damp the payoff kink
    n_half = min(rannacher, 2 * n_time)
    if n_half:
        lu = factor(0.5, 1.0)
        for _ in range(n_half):
            k += 0.5
            f = step(f, k * dt[:, 0], 0.5, 1.0, lu)
    lu = factor(1.0, 0.5)
    for _ in range(n_time - n_half // 2):
        k += 1.0
        f = step(f, k * dt[:, 0], 1.0, 0.5, lu)
    if not np.all(np.isfinite(f)):
        raise PricingError("PDE solve produced non-finite values")
    return z, f, terminal


def _cubic_at(z, f, z0):
    j = int(np.clip(np.searchsorted(z, z0) - 2, 0, len(z) - 4))
    zs, fs = z[j:j + 4], f[j:j + 4]
    out = 0.0
    for i in range(4):
        w = 1.0
        for m in range(4):
            if m != i:
                w *= (z0 - zs[m]) / (zs[i] - zs[m])
        out += w * fs[i]
    return out


def price_quotes_piv_pde(
    params: PivParams,
    s0,
    strikes,
    ttm,
    rate: float,
    grid: PdeGrid | None = None,
    r0: float = 0.0,
    boundary_check: bool = True,
    return_grid: bool = False,
) -> list[PriceResult]:
    """Crank-Nicolson solution of the PIV pricing PDE in log-price coordinates.

    The state variable is the log return ``z`` against the reference price
    ``s0 * exp(-r0)``; the diffusion coefficient is ``kappa (1 + z^2)``.
    Dirichlet data: 0 at the lower edge, ``x - K exp(-r tau)`` at the upper edge.
    ``s0``, ``strikes`` and ``ttm`` broadcast to one contract per entry and
    all contracts share one time loop. With ``boundary_check`` the solve is
    repeated on a doubled domain at the same spacing and a shift above
    ``1e-6 * s0`` raises :class:`PricingError`.
    """
    grid = grid or PdeGrid()
    s0, strikes, ttm = (np.array(v, dtype=float).ravel() for v in np.broadcast_arrays(s0, strikes, ttm))
    if not (np.all(s0 > 0) and np.all(ttm > 0) and math.isfinite(rate)):
        raise ValueError("need s0 > 0, ttm > 0 and a finite rate")
    if np.any(strikes < 0) or not np.all(np.isfinite(strikes)):
        raise ValueError("strikes must be finite and non-negative")
    kappa = params.kappa
    sd = np.sqrt(2.0 * kappa * (1.0 + r0 * r0) * ttm)
    half = np.full_like(sd, grid.half_width) if grid.half_width is not None else 8.0 * sd
    if np.any(half < 8.0 * sd - 1e-12):
        raise ValueError(f"half_width {grid.half_width:g} is below 8 effective std devs ({8 * sd.max():g})")
    s_ref = s0 * math.exp(-r0)

    def solve(scale, n_space):
        z, f, terminal = _piv_pde_solve(
            kappa, s_ref, strikes, ttm, rate, r0 - scale * half, r0 + scale * half, n_space, grid.n_time,
            grid.rannacher_steps,
        )
        return z, f, terminal, np.array([_cubic_at(z[i], f[i], r0) for i in range(strikes.size)])

    z, f, terminal, prices = solve(1.0, grid.n_space)
    shift = None
    if boundary_check:
        # same spacing, doubled domain
        _, _, _, wide = solve(2.0, 2 * grid.n_space)
        shift = np.abs(wide - prices)
        bad = shift > 1e-6 * s0
        if np.any(bad):
            i = int(np.argmax(bad))
            raise PricingError(
                f"domain half-width {half[i]:g} too narrow: doubling it moves the price by {shift[i]:.3g}"
            )
    out = []
    for i, p in enumerate(prices):
        diag = {"n_space": grid.n_space, "n_time": grid.n_time, "half_width": float(half[i]), "kappa": kappa}
        if shift is not None:
            diag["boundary_shift"] = float(shift[i])
        if return_grid:
            diag.update(nodes=z[i], values=f[i], terminal=terminal[i])
        out.append(PriceResult(float(p), 0.0, "PDE", diag))
    return out


def price_calls_piv_pde(params: PivParams, s0: float, strikes, ttm: float, rate: float, grid=None, r0=0.0,
                        boundary_check=True, return_grid=False) -> list[PriceResult]:
    """Several strikes at one spot and maturity; see :func:`price_quotes_piv_pde`."""
    return price_quotes_piv_pde(params, s0, strikes, ttm, rate, grid, r0, boundary_check, return_grid)


def price_call_piv_pde(
    params: PivParams,
    c: ContractSpec,
    grid: PdeGrid | None = None,
    r0: float = 0.0,
    boundary_check: bool = True,
    return_grid: bool = False,
) -> PriceResult:
    """Single-contract wrapper around :func:`price_calls_piv_pde`."""
    return price_quotes_piv_pde(params, c.s0, c.strike, c.ttm, c.rate, grid, r0, boundary_check, return_grid)[0]


# --------------------------------------------------------------------- Heston


@lru_cache(maxsize=16)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _heston_probabilities(h: HestonParams, s0, log_k, ttm, rate, n_nodes, u_max):
    """P1, P2 for every log-strike, using the 'little trap' logarithm branch."""
    x, w = _gauss_legendre(n_nodes)
    phi = 0.5 * u_max * (x + 1.0)
    w = 0.5 * u_max * w
    kv, tv, xi, rho = h.kappa_v, h.theta_v, h.xi, h.rho
    out = []
    for u, b in ((0.5, kv - rho * xi), (-0.5, kv)):
        iphi = 1j * phi
        beta = b - rho * xi * iphi
        d = np.sqrt(beta * beta - xi * xi * (2.0 * u * iphi - phi * phi))
        g = (beta - d) / (beta + d)
        edt = np.exp(-d * ttm)
        cterm = rate * iphi * ttm + kv * tv / (xi * xi) * ((beta - d) * ttm - 2.0 * np.log((1.0 - g * edt) / (1.0 - g)))
        dterm = (beta - d) / (xi * xi) * (1.0 - edt) / (1.0 - g * edt)
        f = np.exp(cterm + dterm * h.v0 + iphi * math.log(s0))
        integrand = np.real(np.exp(-1j * np.outer(log_k, phi)) * f / iphi)
        out.append(0.5 + (integrand @ w) / math.pi)
        out.append(integrand[:, -1])
    return out[0], out[2], np.maximum(np.abs(out[1]), np.abs(out[3]))


def heston_calls(h: HestonParams, s0, strikes, ttm, rate, n_nodes=256, u_max=200.0, tol=None, adaptive=True):
    """Vectorized Heston call prices for one maturity.

    Refines the quadrature until doubling ``n_nodes`` moves no price by more
    than ``tol`` (default ``1e-6 * s0``); the range is widened first while the
    integrand at ``u_max`` is still material. ``adaptive=False`` uses the
    given ``(n_nodes, u_max)`` as is, which keeps a calibration objective a
    fixed smooth function of the parameters.
    """
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    tol = 1e-6 * s0 if tol is None else tol
    disc = math.exp(-rate * ttm)
    out = np.empty_like(strikes)
    pos = strikes > 0
    out[~pos] = s0
    if not np.any(pos):
        return out, {"n_nodes": n_nodes, "u_max": u_max}
    if h.xi == 0.0:
        # deterministic variance: exact Gaussian log-price
        avg = h.theta_v + (h.v0 - h.theta_v) * (1.0 - math.exp(-h.kappa_v * ttm)) / (h.kappa_v * ttm)
        out[pos] = bs_call(s0, strikes[pos], ttm, rate, math.sqrt(avg))
        return out, {"n_nodes": 0, "u_max": 0.0, "degenerate": True}
    log_k = np.log(strikes[pos])

    def price(n, um):
        p1, p2, tail = _heston_probabilities(h, s0, log_k, ttm, rate, n, um)
        return s0 * p1 - strikes[pos] * disc * p2, tail

    if not adaptive:
        cur, _ = price(n_nodes, u_max)
        out[pos] = np.maximum(cur, np.maximum(s0 - strikes[pos] * disc, 0.0))
        return out, {"n_nodes": n_nodes, "u_max": u_max}
    for _ in range(8):
        _, tail = price(64, u_max)
        if np.max(tail) * s0 < 1e-3 * tol:
            break
        u_max *= 2.0
        n_nodes *= 2
    cur, _ = price(n_nodes, u_max)
    for _ in range(6):
        fine, _ = price(2 * n_nodes, u_max)
        if np.max(np.abs(fine - cur)) <= tol:
            break
        n_nodes *= 2
        cur = fine
    else:
        raise PricingError("Heston quadrature did not converge")
    out[pos] = np.maximum(cur, np.maximum(s0 - strikes[pos] * disc, 0.0))
    return out, {"n_nodes": n_nodes, "u_max": u_max}


def price_call_heston(h: HestonParams, c: ContractSpec, n_nodes: int = 256, u_max: float = 200.0) -> PriceResult:
    """Heston (1993) two-probability characteristic-function price."""
    p, diag = heston_calls(h, c.s0, [c.strike], c.ttm, c.rate, n_nodes, u_max)
    return PriceResult(float(p[0]), 0.0, "CF", diag)


def price_call_heston_mc(h: HestonParams, c: ContractSpec, config: SimConfig) -> PriceResult:
    """Monte Carlo Heston price from full-truncation Euler paths."""
    cfg = _mc_config(config, c.ttm)
    st = simulate_heston_paths(h, c.s0, c.rate, cfg).terminal_values
    pay = np.maximum(st - c.strike, 0.0)
    return PriceResult(
        c.discount * float(pay.mean()),
        c.discount * float(pay.std(ddof=1)) / math.sqrt(len(pay)),
        "MC",
        {"n_paths": len(pay), "n_steps": cfg.n_steps},
    )
