"""Derivative-free minimization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    converged: bool
    n_iter: int
    n_eval: int
    spread: float
    history: list = field(default_factory=list, repr=False)

    def __iter__(self):
        # allows ``x, f, ok = nelder_mead(...)``
        return iter((self.x, self.fun, self.converged))


def _initial_simplex(x0, step):
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        if step is not None:
            d = np.broadcast_to(np.asarray(step, dtype=float), (n,))[i]
        else:
            d = 0.05 * x0[i] if x0[i] != 0 else 0.00025
        simplex[i + 1, i] += d
    return simplex


def nelder_mead(
    objective,
    x0,
    max_iter: int = 2000,
    x_tol: float = 1e-8,
    f_tol: float = 1e-10,
    step=None,
    initial_simplex=None,
) -> NelderMeadResult:
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
    Non-finite objective values are treated as ``+inf``. Stops when both the
    simplex diameter (max-norm, around the best vertex) is below ``x_tol`` and
    the spread of vertex values is below ``f_tol``; otherwise after
    ``max_iter`` iterations with ``converged=False``.

    ``history`` records the best value after every iteration.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        v = objective(x)
        v = float(v)
        return v if math.isfinite(v) else math.inf

    if initial_simplex is not None:
        sim = np.array(initial_simplex, dtype=float)
    else:
        sim = _initial_simplex(x0, step)
    fs = np.array([f(v) for v in sim])
    if not math.isfinite(fs[0]):
        raise ValueError("objective is not finite at x0")
    n = x0.size
    history = []
    converged = False
    it = 0
    while it < max_iter:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        spread_x = np.max(np.abs(sim[1:] - sim[0]))
        spread_f = np.max(np.abs(fs[1:] - fs[0])) if np.all(np.isfinite(fs)) else math.inf
        if spread_x <= x_tol and spread_f <= f_tol:
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (worst - centroid)
                fc = f(xc)
                accept = fc < fs[-1]
            if accept:
                sim[-1], fs[-1] = xc, fc
            else:
                sim[1:] = sim[0] + 0.5 * (sim[1:] - sim[0])
                fs[1:] = [f(v) for v in sim[1:]]
        history.append(float(np.min(fs)))
    order = np.argsort(fs, kind="stable")
    sim, fs = sim[order], fs[order]
    return NelderMeadResult(
        x=sim[0].copy(),
        fun=float(fs[0]),
        converged=converged,
        n_iter=it,
        n_eval=n_eval,
        spread=float(np.max(np.abs(sim[1:] - sim[0]))) if n else 0.0,
        history=history,
    )
