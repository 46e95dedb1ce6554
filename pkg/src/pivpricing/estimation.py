"""Historical parameter estimation from daily data.

PIV uses an Euler (Gaussian) pseudo-likelihood on the log-return path with
``sigma`` pinned to 1; only ``c = sigma**2 a`` is identified, so nothing is lost.
Black-Scholes is the closed-form Gaussian MLE. Heston is fitted by a Kalman
quasi-likelihood on block realized variances (see :func:`estimate_heston`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model_core import BsParams, HestonParams, PivParams
from .optimize import nelder_mead

DT_DAILY = 1.0 / 252.0
_LOG_2PI = math.log(2.0 * math.pi)


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class ReturnSeries:
    """An observed series on a uniform ``dt`` grid.

    What ``values`` holds depends on the consumer: :func:`mle_piv` expects the
    log-return path ``R_k = ln(S_k / S_0)``, while :func:`mle_bs` and
    :func:`estimate_heston` expect per-period log returns. Use
    :func:`log_return_path` / :func:`log_returns` to build either from closes.
    """

    values: np.ndarray
    dt: float = DT_DAILY
    instrument: str = ""
    date_range: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", v)
        if v.size < 30:
            raise EstimationError(f"series too short: {v.size} observations, need at least 30")
        if not np.all(np.isfinite(v)):
            raise EstimationError("series contains non-finite values")
        if not self.dt > 0:
            raise EstimationError("dt must be positive")
        if np.ptp(v) == 0:
            raise EstimationError("series is constant (degenerate variance)")

    def __len__(self):
        return self.values.size


def log_returns(closes) -> np.ndarray:
    closes = np.asarray(closes, dtype=float)
    return np.diff(np.log(closes))


def log_return_path(closes) -> np.ndarray:
    """``ln(S_k / S_0)`` for every close, starting at exactly 0."""
    closes = np.asarray(closes, dtype=float)
    return np.log(closes / closes[0])


@dataclass
class FitResult:
    model: str
    params: object
    nll: float
    converged: bool
    iterations: int
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------- PIV


def euler_pseudo_loglik(params: PivParams, series: ReturnSeries) -> float:
    """Gaussian one-step log-likelihood of the path ``series.values``.

    Conditional on ``R_k``, ``R_{k+1}`` is taken as normal with mean
    ``R_k - theta (R_k - mu) dt`` and variance ``2 theta c (1 + R_k^2) dt``.
    """
    x = series.values
    dt = series.dt
    prev, nxt = x[:-1], x[1:]
    mean = prev - params.theta * (prev - params.mu) * dt
    var = 2.0 * params.theta * params.c * (1.0 + prev * prev) * dt
    with np.errstate(all="ignore"):
        ll = -0.5 * np.sum(_LOG_2PI + np.log(var) + (nxt - mean) ** 2 / var)
    return float(ll) if math.isfinite(ll) else -math.inf


PIV_STARTS = tuple((th, c, mu) for th in (0.5, 5.0) for c in (0.01, 1.0) for mu in (-0.1, 0.1))
_PIV_LOG_BOUND = 12.0


def mle_piv(series: ReturnSeries, starts=PIV_STARTS, max_iter: int = 2000) -> FitResult:
    """Euler pseudo-MLE of ``(theta, a, mu)`` with ``sigma = 1``.

    Optimizes over ``(ln theta, ln a, mu)`` from each start in ``starts``;
    the lowest negative log-likelihood wins, ties going to the
    lexicographically smallest parameter vector.
    """

    def nll(z):
        if np.any(np.abs(z[:2]) > _PIV_LOG_BOUND):
            return math.inf
        p = PivParams(theta=math.exp(z[0]), a=math.exp(z[1]), mu=float(z[2]), sigma=1.0)
        return -euler_pseudo_loglik(p, series)

    runs = []
    for th, c, mu in starts:
        z0 = np.array([math.log(th), math.log(c), mu])
        res = nelder_mead(nll, z0, max_iter=max_iter, x_tol=1e-7, f_tol=1e-9, step=[0.5, 0.5, 0.05])
        runs.append(res)
    best = min(runs, key=lambda r: (r.fun, tuple(r.x)))
    theta, a, mu = math.exp(best.x[0]), math.exp(best.x[1]), float(best.x[2])
    params = PivParams(theta=theta, a=a, mu=mu, sigma=1.0)
    return FitResult(
        "PIV",
        params,
        best.fun,
        best.converged,
        best.n_iter,
        {
            "c": params.c,
            "kappa": params.kappa,
            "n_starts": len(runs),
            "n_converged": sum(r.converged for r in runs),
            "simplex_spread": best.spread,
        },
    )


# ----------------------------------------------------------------------- BS


def mle_bs(series: ReturnSeries) -> FitResult:
    """Gaussian MLE on per-period log returns.

    ``sigma_bs = std(returns, ddof=0) / sqrt(dt)``; ``drift_bs`` is the drift of
    the price itself, ``mean / dt + sigma_bs**2 / 2``.
    """
    r = series.values
    n = r.size
    m = float(r.mean())
    var = float(np.mean((r - m) ** 2))
    sigma = math.sqrt(var / series.dt)
    params = BsParams(sigma_bs=sigma, drift_bs=m / series.dt + 0.5 * sigma * sigma)
    nll = 0.5 * n * (_LOG_2PI + math.log(var) + 1.0)
    return FitResult("BS", params, nll, True, 0, {"log_drift": m / series.dt})


# ------------------------------------------------------------------- Heston


def _block_rv(returns, window, dt):
    n_blocks = returns.size // window
    r = returns[: n_blocks * window]
    dm = r - r.mean()
    blocks = dm.reshape(n_blocks, window)
    return (blocks**2).mean(axis=1) / dt, r.reshape(n_blocks, window).sum(axis=1)


def _kalman_nll(kappa, theta, xi, y, delta, window, want_states=False):
    """Quasi-likelihood of block variances ``y`` under a linearized CIR state.

    State: block-average variance, AR(1) with ``phi = exp(-kappa delta)`` and
    CIR conditional variance evaluated at the filtered mean. Observation noise
    of a mean of ``window`` squared Gaussian returns is ``2 v^2 / window``.
    """
    phi = math.exp(-kappa * delta)
    xi2 = xi * xi
    m = theta
    p = theta * xi2 / (2.0 * kappa)
    nll = 0.0
    states, innov, fvar = [], [], []
    for k, obs in enumerate(y):
        if k > 0:
            mp = max(m, 1e-12)
            q = xi2 * (mp * (phi - phi * phi) / kappa + theta * (1.0 - phi) ** 2 / (2.0 * kappa))
            m = theta + phi * (m - theta)
            p = phi * phi * p + q
        vpred = max(m, 1e-12)
        r = 2.0 * vpred * vpred / window
        f = p + r
        e = obs - m
        nll += 0.5 * (_LOG_2PI + math.log(f) + e * e / f)
        gain = p / f
        m = m + gain * e
        p = (1.0 - gain) * p
        if want_states:
            states.append(m)
            innov.append(e)
            fvar.append(f)
    if want_states:
        return nll, np.array(states), np.array(innov), np.array(fvar)
    return nll


_BLOCK_CORR = 0.5 / math.sqrt(2.0 / 3.0)
HESTON_BOUNDS = {"kappa_v": (1e-2, 50.0), "theta_v": (1e-5, 4.0), "xi": (1e-4, 5.0)}


def estimate_heston(series: ReturnSeries, window_rv: int = 21, max_iter: int = 1500) -> FitResult:
    """Heston fit from daily log returns via block realized variance.

    1. Split the demeaned returns into non-overlapping blocks of ``window_rv``
       days; each block's mean squared return over ``dt`` is a noisy reading
       of the average variance over that block.
    2. Maximize the Kalman quasi-likelihood of those readings over
       ``(kappa_v, theta_v, xi)``. Modelling the reading noise keeps it out of
       ``xi`` and avoids the attenuation bias a plain regression of successive
       readings has on ``kappa_v``.
    3. ``rho`` is the correlation between each block's summed return and its
       variance innovation; ``drift_h = mean / dt + theta_v / 2``.

    ``v0`` is the first block reading; ``diagnostics['v_current']`` holds the
    filtered variance of the last block, which is what a pricer should use.
    """
    r = series.values
    if r.size < 5 * window_rv:
        raise EstimationError(f"need at least {5 * window_rv} returns for window_rv={window_rv}")
    dt = series.dt
    delta = window_rv * dt
    y, block_ret = _block_rv(r, window_rv, dt)
    lo = np.log([HESTON_BOUNDS[k][0] for k in ("kappa_v", "theta_v", "xi")])
    hi = np.log([HESTON_BOUNDS[k][1] for k in ("kappa_v", "theta_v", "xi")])

    def obj(z):
        if np.any(z < lo) or np.any(z > hi):
            return math.inf
        return _kalman_nll(*np.exp(z), y, delta, window_rv)

    ybar = float(np.mean(y))
    starts = [(1.0, ybar, 0.1), (5.0, ybar, 0.5), (0.3, ybar, 0.3)]
    runs = []
    for s in starts:
        z0 = np.log(np.clip(s, np.exp(lo) * 1.0001, np.exp(hi) * 0.9999))
        runs.append(nelder_mead(obj, z0, max_iter=max_iter, x_tol=1e-6, f_tol=1e-9, step=[0.5, 0.3, 0.7]))
    best = min(runs, key=lambda res: (res.fun, tuple(res.x)))
    kappa, theta, xi = (float(v) for v in np.exp(best.x))
    at_bound = [name for name, z, a, b in zip(("kappa_v", "theta_v", "xi"), best.x, lo, hi) if z - a < 1e-3 or b - z < 1e-3]
    _, states, innov, fvar = _kalman_nll(kappa, theta, xi, y, delta, window_rv, want_states=True)

    rho = 0.0
    if y.size > 3 and np.std(innov[1:]) > 0 and np.std(block_ret[1:]) > 0:
        raw = float(np.corrcoef(block_ret[1:], innov[1:])[0, 1])
        # the innovation carries reading noise; rescale to the state-noise share
        state_share = 1.0 - np.mean(2.0 * np.maximum(states[1:], 1e-12) ** 2 / window_rv / fvar[1:])
        # a block's summed return shares only half its variance shocks with the
        # innovation of the next block average: corr factor (1/2) / sqrt(2/3)
        rho = raw / math.sqrt(max(state_share, 1e-6)) / _BLOCK_CORR
    rho = float(np.clip(rho, -0.99, 0.99))
    params = HestonParams(
        kappa_v=kappa,
        theta_v=theta,
        xi=xi,
        rho=rho,
        v0=float(max(y[0], 1e-8)),
        drift_h=float(r.mean()) / dt + 0.5 * theta,
    )
    return FitResult(
        "HS",
        params,
        best.fun,
        best.converged,
        best.n_iter,
        {
            "v_current": float(max(states[-1], 1e-8)),
            "n_blocks": int(y.size),
            "boundary_hits": at_bound,
            "feller_ratio": params.feller_ratio,
            "simplex_spread": best.spread,
        },
    )
