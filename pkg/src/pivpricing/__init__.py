"""Option pricing with Pearson-diffusion log returns.

Modules
-------
model_core    parameter types, drift/diffusion, Girsanov kernel, stationary law
sde_engine    reproducible path simulation under P and Q
pricing       PIV (Monte Carlo, PDE), Black-Scholes and Heston call pricers
estimation    historical MLE for PIV, Black-Scholes and Heston
calibration   implied least-squares calibration on one day's chain
market_data   option chain and rate I/O, buckets, liquidity filter, synthetic data
backtest      historical and implied backtests, error tables, Diebold-Mariano
cli           command-line entry point
"""

from .model_core import BsParams, HestonParams, PivParams
from .optimize import nelder_mead

__all__ = ["BsParams", "HestonParams", "PivParams", "nelder_mead"]
__version__ = "0.1.0"
