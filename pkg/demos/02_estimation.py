"""Fitting the three models to a simulated price history.

Run with ``python demos/02_estimation.py``. Takes a few seconds.

Under the physical measure the PIV log return mean-reverts to ``mu`` at rate
``theta``. Only ``theta``, ``c = sigma^2 a`` and ``mu`` can be recovered from
data, so estimation fixes ``sigma = 1``. We simulate ten years of daily closes,
fit all three models and look at what each one implies for pricing.
"""

import math

import numpy as np

from pivpricing.estimation import ReturnSeries, estimate_heston, log_return_path, log_returns, mle_bs, mle_piv
from pivpricing.model_core import PivParams
from pivpricing.sde_engine import SimConfig, simulate_r_paths_p

true = PivParams(theta=2.0, a=0.015, mu=0.0)
days = 2520
cfg = SimConfig(days / 252, n_paths=1, n_steps=days, seed=7, store_paths=True)
r_path = simulate_r_paths_p(true, cfg).paths[0]
closes = 100.0 * np.exp(r_path)
print(f"simulated {days} closes, final {closes[-1]:.2f}")

piv = mle_piv(ReturnSeries(log_return_path(closes)))
p = piv.params
print(f"\nPIV  theta {p.theta:.3f} (true {true.theta})  c {p.c:.4f} (true {true.c})  mu {p.mu:+.4f}")
print(f"     pricing kappa {p.kappa:.4f} (true {true.kappa:.4f})")

bs = mle_bs(ReturnSeries(log_returns(closes)))
print(f"BS   sigma {bs.params.sigma_bs:.4f}  vs sqrt(2 kappa) = {math.sqrt(2 * true.kappa):.4f}")

hs = estimate_heston(ReturnSeries(log_returns(closes)))
h = hs.params
print(f"HS   theta_v {h.theta_v:.4f}  kappa_v {h.kappa_v:.3f}  xi {h.xi:.3f}  rho {h.rho:+.3f}")
# the path has no stochastic variance, so xi collapses towards 0 and rho is unidentified

# kappa is what matters for option prices; theta and c trade off against
# each other in short samples, so kappa is usually better determined than either
