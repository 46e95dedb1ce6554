"""Parameter types and pointwise functions of the Pearson-diffusion return model.

The log return ``R`` follows

    dR = -theta (R - mu) dt + sigma * sqrt(2 theta a (1 + R^2)) dB

so ``sigma`` and ``a`` only ever appear through ``c = sigma**2 * a``. Every
function here is written in terms of ``c`` (and ``kappa = theta * c``) so the
outputs are unchanged under ``(sigma, a) -> (sigma * t, a / t**2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# fraction of total mass the truncated density grid must capture
_MASS_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PivParams:
    """Pearson diffusion parameters ``(theta, a, mu, sigma)``."""

    theta: float
    a: float
    mu: float
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("theta", "a", "mu", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.theta <= 0 or self.a <= 0 or self.sigma <= 0:
            raise ValueError("theta, a and sigma must be strictly positive")

    @property
    def c(self) -> float:
        """Identified diffusion scale ``sigma**2 * a``."""
        return self.sigma * self.sigma * self.a

    @property
    def kappa(self) -> float:
        """Risk-neutral pricing parameter ``theta * sigma**2 * a``."""
        return self.theta * self.c

    @classmethod
    def from_kappa(cls, kappa: float, c: float = 1.0, mu: float = 0.0) -> "PivParams":
        """Canonical 4-vector for a given ``kappa``: ``(kappa / c, c, mu, 1)``."""
        return cls(theta=kappa / c, a=c, mu=mu, sigma=1.0)


@dataclass(frozen=True)
class BsParams:
    sigma_bs: float
    drift_bs: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma_bs) and self.sigma_bs > 0):
            raise ValueError("sigma_bs must be positive and finite")


@dataclass(frozen=True)
class HestonParams:
    """Heston (1993) parameters; ``xi`` is the vol-of-vol."""

    kappa_v: float
    theta_v: float
    xi: float
    rho: float
    v0: float
    drift_h: float = 0.0

    def __post_init__(self):
        vals = (self.kappa_v, self.theta_v, self.xi, self.rho, self.v0, self.drift_h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("Heston parameters must be finite")
        if self.kappa_v <= 0 or self.theta_v <= 0 or self.v0 <= 0:
            raise ValueError("kappa_v, theta_v and v0 must be strictly positive")
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    @property
    def feller_ratio(self) -> float:
        """``2 kappa_v theta_v / xi**2``; infinite when ``xi == 0``."""
        if self.xi == 0:
            return math.inf
        return 2.0 * self.kappa_v * self.theta_v / self.xi**2


@dataclass(frozen=True)
class Pearson4Shape:
    m: float
    a4: float
    nu: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if not self.m > 0.5:
            raise ValueError("m must exceed 1/2 for the density to be normalizable")
        if not self.a4 > 0:
            raise ValueError("a4 must be positive")


def _check_finite(x, name="r_val"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _out(arr):
    return float(arr) if arr.ndim == 0 else arr


def piv_drift(params: PivParams, r_val):
    """Physical-measure drift ``-theta (R - mu)``."""
    r = _check_finite(r_val)
    return _out(-params.theta * (r - params.mu))


def piv_diffusion(params: PivParams, r_val):
    """Diffusion coefficient ``sqrt(2 kappa (1 + R^2))``."""
    r = _check_finite(r_val)
    return _out(np.sqrt(2.0 * params.kappa * (1.0 + r * r)))


def girsanov_kernel_u(params: PivParams, rate: float, r_val):
    """Market price of risk that turns ``exp(-rt) S_t`` into a local martingale.

    ``u = (-r - theta (R - mu) + kappa (1 + R^2)) / sqrt(2 kappa (1 + R^2))``
    """
    if not math.isfinite(rate):
        raise ValueError("rate must be finite")
    r = _check_finite(r_val)
    q = 1.0 + r * r
    num = -rate - params.theta * (r - params.mu) + params.kappa * q
    return _out(num / np.sqrt(2.0 * params.kappa * q))


def novikov_constant(params: PivParams, rate: float) -> float:
    """Constant ``K`` with ``u(R)**2 <= K (1 + R**2)`` for every real ``R``."""
    theta, c = params.theta, params.c
    two_kappa = 2.0 * theta * c
    return 3.0 * (
        (params.mu * theta - rate) ** 2 / two_kappa
        + theta * theta / two_kappa
        + c * theta / 2.0
    )


def novikov_bound_check(params: PivParams, rate: float, r_grid) -> tuple[float, bool]:
    """Return ``(K, holds)`` where ``holds`` checks the bound at every grid point."""
    grid = _check_finite(r_grid, "r_grid").ravel()
    if grid.size == 0:
        raise ValueError("r_grid must be non-empty")
    k = novikov_constant(params, rate)
    u = np.atleast_1d(girsanov_kernel_u(params, rate, grid))
    holds = bool(np.all(u * u <= k * (1.0 + grid * grid)))
    return k, holds


def _trapezoid_normalize(x, log_f):
    f = np.exp(log_f - np.max(log_f))
    mass = np.trapezoid(f, x)
    return f / mass


def _check_grid(x):
    x = _check_finite(x, "x_grid").ravel()
    if x.size < 3 or np.any(np.diff(x) <= 0):
        raise ValueError("x_grid must be strictly increasing with at least 3 points")
    return x


def _student_tail_mass(exponent, lo, hi, loc, scale):
    """Mass beyond ``[lo, hi]`` relative to the core, for a ``|x|**(-2 exponent)`` tail."""
    # the integrand ~ |z|^(-2m); tail beyond |z| = L is ~ L^(1-2m) / (2m - 1)
    zl = max(abs(lo - loc) / scale, 1.0)
    zh = max(abs(hi - loc) / scale, 1.0)
    p = 2.0 * exponent - 1.0
    return (zl ** (-p) + zh ** (-p)) / p


def pearson4_pdf(shape: Pearson4Shape, x_grid) -> np.ndarray:
    """Pearson type IV density, normalized by trapezoidal quadrature on ``x_grid``.

    The skew factor ``exp(nu * arctan(z))`` is bounded by ``exp(pi |nu| / 2)``,
    which enters the tail-mass estimate used to reject grids that are too narrow.
    """
    x = _check_grid(x_grid)
    z = (x - shape.lam) / shape.a4
    log_f = -shape.m * np.log1p(z * z) + shape.nu * np.arctan(z)
    tail = _student_tail_mass(shape.m, x[0], x[-1], shape.lam, shape.a4)
    tail *= math.exp(math.pi * abs(shape.nu))
    if tail > _MASS_TOLERANCE:
        raise ValueError(
            f"grid [{x[0]:g}, {x[-1]:g}] truncates an estimated tail mass of {tail:.2e}"
        )
    return _trapezoid_normalize(x, log_f)


def stationary_shape(params: PivParams) -> Pearson4Shape:
    """Invariant law under P as a Pearson IV shape.

    ``p(x) ∝ (1 + x^2)^(-(1 + 1/(2c))) exp((mu / c) arctan x)``.
    """
    return Pearson4Shape(m=1.0 + 1.0 / (2.0 * params.c), a4=1.0, nu=params.mu / params.c, lam=0.0)


def stationary_density_p(params: PivParams, x_grid) -> np.ndarray:
    """Normalized invariant density of the physical-measure log return on ``x_grid``."""
    return pearson4_pdf(stationary_shape(params), x_grid)


def stationary_cdf_p(params: PivParams, x) -> np.ndarray:
    """CDF of the invariant law, by cumulative quadrature on a fine grid."""
    from scipy.integrate import cumulative_trapezoid

    shape = stationary_shape(params)
    width = 40.0
    while True:
        grid = np.linspace(-width, width, 400_001)
        try:
            dens = pearson4_pdf(shape, grid)
            break
        except ValueError:
            width *= 4.0
    cdf = cumulative_trapezoid(dens, grid, initial=0.0)
    return np.interp(np.asarray(x, dtype=float), grid, cdf, left=0.0, right=1.0)
