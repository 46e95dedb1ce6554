"""Seed-reproducible Euler path simulation.

Paths are generated in fixed-size blocks. Block ``b`` draws its normals from a
generator seeded with ``SeedSequence([seed, b])``, so the output depends only on
``(seed, config, params)`` and never on how many worker threads run the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model_core import BsParams, HestonParams, PivParams

BLOCK_SIZE = 8192


class SimulationError(RuntimeError):
    """Raised when a path leaves the finite range."""


def default_n_steps(horizon_t: float) -> int:
    """Daily resolution with a floor of 16 steps."""
    return max(16, math.ceil(252.0 * horizon_t - 1e-9))


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo controls.

    ``n_steps=None`` resolves to :func:`default_n_steps`. ``record_every`` thins
    the stored paths when ``store_paths`` is set; ``workers`` only changes
    wall-clock time, never the numbers.
    """

    horizon_t: float
    n_paths: int = 200_000
    n_steps: int | None = None
    seed: int = 0
    antithetic: bool = False
    store_paths: bool = False
    record_every: int = 1
    workers: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.horizon_t) and self.horizon_t > 0):
            raise ValueError("horizon_t must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.n_steps is None:
            object.__setattr__(self, "n_steps", default_n_steps(self.horizon_t))
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.record_every < 1 or self.workers < 1:
            raise ValueError("record_every and workers must be >= 1")

    @property
    def dt(self) -> float:
        return self.horizon_t / self.n_steps

    def with_horizon(self, horizon_t: float) -> "SimConfig":
        """Same controls for another horizon (step count re-derived)."""
        return replace(self, horizon_t=horizon_t, n_steps=None)


@dataclass(frozen=True)
class PathBatch:
    terminal_values: np.ndarray
    measure: str
    process: str
    paths: np.ndarray | None = None
    times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.terminal_values.shape[0]


def _blocks(n_paths: int):
    out = []
    start = 0
    b = 0
    while start < n_paths:
        n = min(BLOCK_SIZE, n_paths - start)
        out.append((b, start, n))
        start += n
        b += 1
    return out


def block_normals(seed: int, block: int, n_steps: int, n: int, antithetic=False, n_factors=1):
    """Standard normals of shape ``(n_factors, n_steps, n)`` for one block."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) % 2**64, block])))
    if not antithetic:
        return rng.standard_normal((n_factors, n_steps, n))
    half = (n + 1) // 2
    z = rng.standard_normal((n_factors, n_steps, half))
    return np.concatenate([z, -z], axis=2)[:, :, :n]


def recorded_normals(config: SimConfig, n_factors: int = 1) -> np.ndarray:
    """All normals a simulation with ``config`` consumes, shape ``(n_factors, n_steps, n_paths)``."""
    parts = [
        block_normals(config.seed, b, config.n_steps, n, config.antithetic, n_factors)
        for b, _, n in _blocks(config.n_paths)
    ]
    return np.concatenate(parts, axis=2)


def _run(config: SimConfig, step_block, x0, n_factors=1):
    """Drive ``step_block(state, z_step, dt) -> state`` over all blocks.

    ``state`` is a tuple of arrays whose first element is the recorded process.
    """
    n_rec = config.n_steps // config.record_every + 1 if config.store_paths else 0
    terminal = np.empty(config.n_paths)
    paths = np.empty((config.n_paths, n_rec)) if config.store_paths else None
    dt = config.dt

    def work(item):
        b, start, n = item
        z = block_normals(config.seed, b, config.n_steps, n, config.antithetic, n_factors)
        state = tuple(np.full(n, v, dtype=float) for v in x0)
        if paths is not None:
            paths[start:start + n, 0] = state[0]
        for k in range(config.n_steps):
            state = step_block(state, z[:, k, :], dt)
            if paths is not None and (k + 1) % config.record_every == 0:
                paths[start:start + n, (k + 1) // config.record_every] = state[0]
        if not np.all(np.isfinite(state[0])):
            _locate_blowup(config, step_block, x0, z, n, b)
        terminal[start:start + n] = state[0]

    items = _blocks(config.n_paths)
    if config.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            list(pool.map(work, items))
    else:
        for item in items:
            work(item)
    times = None
    if paths is not None:
        times = np.arange(n_rec) * config.record_every * dt
    return terminal, paths, times


def _locate_blowup(config, step_block, x0, z, n, block):
    state = tuple(np.full(n, v, dtype=float) for v in x0)
    with np.errstate(all="ignore"):
        for k in range(config.n_steps):
            state = step_block(state, z[:, k, :], config.dt)
            bad = ~np.isfinite(state[0])
            if bad.any():
                path = block * BLOCK_SIZE + int(np.argmax(bad))
                raise SimulationError(f"non-finite value on path {path} at step {k + 1}")
    raise SimulationError("non-finite value in simulation")


def _piv_step_p(params: PivParams):
    theta, mu, two_kappa = params.theta, params.mu, 2.0 * params.kappa

    def step(state, z, dt):
        (r,) = state
        vol = np.sqrt(two_kappa * (1.0 + r * r) * dt)
        return (r - theta * (r - mu) * dt + vol * z[0],)

    return step


def _piv_step_q(kappa: float, rate: float):
    # log-Euler of dR = (r - kappa (1 + R^2)) dt + sqrt(2 kappa (1 + R^2)) dW
    def step(state, z, dt):
        (r,) = state
        var = kappa * (1.0 + r * r) * dt
        return (r + rate * dt - var + np.sqrt(2.0 * var) * z[0],)

    return step


def simulate_r_paths_p(params: PivParams, config: SimConfig, r0: float = 0.0) -> PathBatch:
    """Euler paths of the log return under the physical measure, ``R_0 = r0``."""
    terminal, paths, times = _run(config, _piv_step_p(params), (r0,))
    return PathBatch(terminal, "P", "R", paths, times, {"dt": config.dt})


def simulate_r_paths_q(params: PivParams, rate: float, config: SimConfig, r0: float = 0.0) -> PathBatch:
    """Euler paths of the log return under the risk-neutral measure.

    Only ``kappa`` and ``rate`` enter; ``mu`` is absent from the Q-dynamics.
    """
    terminal, paths, times = _run(config, _piv_step_q(params.kappa, rate), (r0,))
    return PathBatch(terminal, "Q", "R", paths, times, {"dt": config.dt})


def simulate_s_paths_q(
    params: PivParams, s0: float, rate: float, config: SimConfig, r0: float = 0.0
) -> PathBatch:
    """Risk-neutral price paths ``S = s0 * exp(R - r0)`` with R from :func:`simulate_r_paths_q`.

    ``s0`` is the current spot and ``r0`` its log return against the reference
    price ``s0 * exp(-r0)`` that anchors the diffusion coefficient. With the
    default ``r0 = 0`` today's spot is the reference.
    """
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    rb = simulate_r_paths_q(params, rate, config, r0)
    paths = None if rb.paths is None else s0 * np.exp(rb.paths - r0)
    return PathBatch(s0 * np.exp(rb.terminal_values - r0), "Q", "S", paths, rb.times, rb.meta)


def simulate_gbm_paths(bs: BsParams, s0: float, rate: float, config: SimConfig) -> PathBatch:
    """Exact log-space GBM steps under the risk-neutral measure."""
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    sig = bs.sigma_bs

    def step(state, z, dt):
        (x,) = state
        return (x + (rate - 0.5 * sig * sig) * dt + sig * math.sqrt(dt) * z[0],)

    terminal, paths, times = _run(config, step, (0.0,))
    return PathBatch(
        s0 * np.exp(terminal), "Q", "S", None if paths is None else s0 * np.exp(paths), times, {"dt": config.dt}
    )


def simulate_heston_paths(h: HestonParams, s0: float, rate: float, config: SimConfig) -> PathBatch:
    """Full-truncation Euler for the variance, log-Euler for the price."""
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    kv, tv, xi, rho = h.kappa_v, h.theta_v, h.xi, h.rho
    rho_c = math.sqrt(max(0.0, 1.0 - rho * rho))

    def step(state, z, dt):
        x, v = state
        vp = np.maximum(v, 0.0)
        sq = np.sqrt(vp * dt)
        zs = z[0]
        zv = rho * zs + rho_c * z[1]
        x = x + (rate - 0.5 * vp) * dt + sq * zs
        v = v + kv * (tv - vp) * dt + xi * sq * zv
        return (x, v)

    terminal, paths, times = _run(config, step, (0.0, h.v0), n_factors=2)
    return PathBatch(
        s0 * np.exp(terminal), "Q", "S", None if paths is None else s0 * np.exp(paths), times, {"dt": config.dt}
    )


def dump_paths_csv(batch: PathBatch, path) -> None:
    """Write stored paths as ``path_id,step,t,value`` rows."""
    import csv

    if batch.paths is None:
        raise ValueError("batch has no stored paths; simulate with store_paths=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "step", "t", "value"])
        for i, row in enumerate(batch.paths):
            for k, (t, v) in enumerate(zip(batch.times, row)):
                w.writerow([i, k, repr(float(t)), repr(float(v))])
