from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from .filtering import ALL_REGIMES, ExpertSchedule, Regime, gamma_trajectory, run_filter
from .market_model import ModelParams, drift_covariance, drift_mean, drift_second_moment, drift_variance
from .valuation import optimal_strategy, value


logger = logging.getLogger(__name__)

# stream tags of the per-path generators
STREAM_INITIAL = 0
STREAM_DRIFT = 1
STREAM_RETURNS = 2
STREAM_EXPERTS = 3

DEFAULT_SEED = 20_240_117


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 10_000
    dt: float = 1e-3
    seed: int = DEFAULT_SEED
    batch_size: int = 1_000
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise SimulationError("n_paths_must_be_positive")
        if not self.dt > 0:
            raise SimulationError("dt_must_be_positive")
        if not 0 <= self.seed < 2**64:
            raise SimulationError("seed_must_be_uint64")
        if self.batch_size < 1:
            raise SimulationError("batch_size_must_be_positive")
        if self.workers < 1:
            raise SimulationError("workers_must_be_positive")


@dataclass
class PathBundle:
    """A batch of simulated paths on a common grid; row i belongs to path path_ids[i]."""

    path_ids: np.ndarray
    grid: np.ndarray
    drift: np.ndarray
    returns: np.ndarray
    wiener_increments: np.ndarray
    expert_draws: np.ndarray
    date_indices: np.ndarray
    schedule: ExpertSchedule
    sigma: float

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.grid)


@dataclass(frozen=True)
class McEstimate:
    regime: Regime
    n_paths: int
    dt: float
    seed: int
    estimate: float
    standard_error: float
    closed_form: float
    z_score: float
    snap_error: float


@dataclass(frozen=True)
class MomentCheck:
    name: str
    t: float
    sample: float
    expected: float
    standard_error: float
    z_score: float


def discretization_allowance(dt: float) -> float:
    """Tolerance added to MC bands for the Euler bias of returns and filter means."""
    return 2.0 * dt


def _z(diff: float, se: float) -> float:
    if se > 0:
        return diff / se
    return 0.0 if diff == 0 else math.copysign(math.inf, diff)


# -----------------------------
# Grid and schedule
# -----------------------------
def time_grid(horizon: float, dt: float) -> np.ndarray:
    """Uniform grid with ceil(T / dt) steps."""
    m = max(int(math.ceil(horizon / dt - 1e-9)), 1)
    return np.linspace(0.0, horizon, m + 1)


def snap_schedule(schedule: ExpertSchedule, grid: np.ndarray) -> Tuple[ExpertSchedule, np.ndarray, float]:
    """Moves each date to the nearest grid point before T. Returns (schedule, indices, max shift)."""
    if schedule.n == 0:
        return schedule, np.empty(0, dtype=np.int64), 0.0
    step = float(grid[1] - grid[0])
    idx = np.clip(np.rint(schedule.dates / step).astype(np.int64), 0, grid.size - 2)
    if np.any(np.diff(idx) <= 0):
        raise SimulationError("dates_collide_after_snap")
    snapped = ExpertSchedule(dates=grid[idx], variances=schedule.variances)
    snap_error = float(np.max(np.abs(grid[idx] - schedule.dates)))
    if snap_error > 0:
        logger.info("expert dates snapped to grid, max shift %.3g", snap_error)
    return snapped, idx, snap_error


def _generators(seed: int, path: int) -> List[np.random.Generator]:
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, path, tag])))
        for tag in (STREAM_INITIAL, STREAM_DRIFT, STREAM_RETURNS, STREAM_EXPERTS)
    ]


def _simulate_batch(
    params: ModelParams,
    schedule: ExpertSchedule,
    idx: np.ndarray,
    grid: np.ndarray,
    seed: int,
    path_ids: np.ndarray,
) -> PathBundle:
    m = grid.size - 1
    n = schedule.n
    p = path_ids.size
    h = float(grid[1] - grid[0])
    mu0 = np.empty(p)
    eta = np.empty((p, m))
    z_w = np.empty((p, m))
    eps = np.empty((p, n))
    for row, path in enumerate(path_ids.tolist()):
        g_init, g_drift, g_ret, g_exp = _generators(seed, path)
        mu0[row] = g_init.standard_normal()
        eta[row] = g_drift.standard_normal(m)
        z_w[row] = g_ret.standard_normal(m)
        eps[row] = g_exp.standard_normal(n)

    # exact OU transition
    decay = math.exp(-params.alpha * h)
    noise_sd = math.sqrt(params.stationary_variance * -math.expm1(-2.0 * params.alpha * h))
    drift = np.empty((p, m + 1))
    drift[:, 0] = params.m0 + math.sqrt(params.nu0) * mu0
    for i in range(m):
        drift[:, i + 1] = params.delta + decay * (drift[:, i] - params.delta) + noise_sd * eta[:, i]

    dw = math.sqrt(h) * z_w
    returns = drift[:, :-1] * h + params.sigma * dw

    gammas = schedule.variances
    finite = np.isfinite(gammas)
    views = drift[:, idx] + np.sqrt(np.where(finite, gammas, 0.0)) * eps
    views[:, ~finite] = np.nan
    return PathBundle(path_ids, grid, drift, returns, dw, views, idx, schedule, params.sigma)


def _batches(n_paths: int, batch_size: int) -> List[np.ndarray]:
    return [np.arange(lo, min(lo + batch_size, n_paths)) for lo in range(0, n_paths, batch_size)]


def simulate_paths(
    params: ModelParams,
    schedule: ExpertSchedule,
    config: SimConfig,
) -> Iterator[PathBundle]:
    """
    Yields batches of paths. Path i draws from Philox streams keyed by
    (seed, i, tag), so a path does not depend on batching or ordering.
    """
    grid = time_grid(params.horizon, config.dt)
    snapped, idx, _ = snap_schedule(schedule, grid)
    for ids in _batches(config.n_paths, config.batch_size):
        yield _simulate_batch(params, snapped, idx, grid, config.seed, ids)


def _collect(
    params: ModelParams,
    schedule: ExpertSchedule,
    config: SimConfig,
    fn: Callable[[PathBundle], np.ndarray],
    width: int,
) -> np.ndarray:
    """Applies fn to every batch and stores its (paths, width) output by path index."""
    grid = time_grid(params.horizon, config.dt)
    snapped, idx, _ = snap_schedule(schedule, grid)
    out = np.empty((config.n_paths, width))

    def job(ids: np.ndarray) -> None:
        bundle = _simulate_batch(params, snapped, idx, grid, config.seed, ids)
        out[ids] = fn(bundle)

    batches = _batches(config.n_paths, config.batch_size)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(job, batches))
    else:
        for ids in batches:
            job(ids)
    return out


# -----------------------------
# Wealth and values
# -----------------------------
def wealth_log_terminal(pi: np.ndarray, bundle: PathBundle, x0: float) -> np.ndarray:
    """log X_T = log x0 + sum (pi mu - sigma^2 pi^2 / 2) dt + sum pi sigma dW."""
    if not x0 > 0:
        raise SimulationError("x0_must_be_positive")
    pi = np.asarray(pi, dtype=float)
    if pi.shape[-1] != bundle.returns.shape[-1]:
        raise SimulationError("strategy_length_mismatch")
    sigma = bundle.sigma
    drift = bundle.drift[..., :-1]
    gain = (pi * drift - 0.5 * sigma**2 * pi**2) * bundle.steps
    return math.log(x0) + np.sum(gain, axis=-1) + np.sum(pi * sigma * bundle.wiener_increments, axis=-1)


def _filter_means(regime: Regime, params: ModelParams, bundle: PathBundle) -> np.ndarray:
    observations = bundle.drift if regime is Regime.F else bundle.returns
    traj = run_filter(regime, params, bundle.schedule, bundle.grid, observations, bundle.expert_draws)
    # E without dates carries no path axis
    return np.broadcast_to(traj.mu_hat, bundle.drift.shape)


def _standard_error(samples: np.ndarray) -> float:
    if samples.size < 2:
        return math.inf
    return float(np.std(samples, ddof=1) / math.sqrt(samples.size))


def mc_values(
    params: ModelParams,
    schedule: ExpertSchedule,
    config: SimConfig,
    x0: float = 1.0,
    regimes: Sequence[Union[str, Regime]] = ALL_REGIMES,
) -> Dict[Regime, McEstimate]:
    """Mean log terminal wealth of the optimal strategy per regime, on common random numbers."""
    regimes = [Regime.parse(r) for r in regimes]
    grid = time_grid(params.horizon, config.dt)
    snapped, _, snap_error = snap_schedule(schedule, grid)

    def per_batch(bundle: PathBundle) -> np.ndarray:
        cols = []
        for r in regimes:
            pi = optimal_strategy(_filter_means(r, params, bundle)[:, :-1], params)
            cols.append(wealth_log_terminal(pi, bundle, x0))
        return np.stack(cols, axis=1)

    logw = _collect(params, schedule, config, per_batch, len(regimes))
    dt = float(grid[1] - grid[0])
    out: Dict[Regime, McEstimate] = {}
    for j, r in enumerate(regimes):
        col = logw[:, j]
        est = float(np.mean(col))
        se = _standard_error(col)
        closed = value(r, x0, params, snapped)
        out[r] = McEstimate(r, config.n_paths, dt, config.seed, est, se, closed, _z(est - closed, se), snap_error)
        logger.info("mc %s estimate=%.5f se=%.5f closed=%.5f", r.value, est, se, closed)
    return out


def mc_value(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: ExpertSchedule,
    config: SimConfig,
    x0: float = 1.0,
) -> McEstimate:
    regime = Regime.parse(regime)
    return mc_values(params, schedule, config, x0, regimes=[regime])[regime]


# -----------------------------
# Moment checks
# -----------------------------
def _grid_indices(grid: np.ndarray, times: Sequence[float]) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > grid[-1] + 1e-12):
        raise SimulationError("check_time_outside_horizon")
    return np.clip(np.rint(times / (grid[1] - grid[0])).astype(np.int64), 0, grid.size - 1)


def _mean_check(name: str, t: float, samples: np.ndarray, expected: float) -> MomentCheck:
    sample = float(np.mean(samples))
    se = _standard_error(samples)
    return MomentCheck(name, t, sample, expected, se, _z(sample - expected, se))


def filter_moment_check(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: ExpertSchedule,
    config: SimConfig,
    t_list: Sequence[float],
) -> List[MomentCheck]:
    """Sample E[mu_hat_t^2] against E[mu_t^2] - gamma_t at the grid points nearest to t_list."""
    regime = Regime.parse(regime)
    grid = time_grid(params.horizon, config.dt)
    snapped, _, _ = snap_schedule(schedule, grid)
    at = _grid_indices(grid, t_list)
    gamma = gamma_trajectory(regime, params, snapped, grid).gamma

    def per_batch(bundle: PathBundle) -> np.ndarray:
        return _filter_means(regime, params, bundle)[:, at] ** 2

    squares = _collect(params, schedule, config, per_batch, at.size)
    checks = []
    for j, i in enumerate(at.tolist()):
        t = float(grid[i])
        expected = float(drift_second_moment(params, t)) - float(gamma[i])
        checks.append(_mean_check(f"filter_second_moment_{regime.value}", t, squares[:, j], expected))
    return checks


def drift_moment_check(params: ModelParams, config: SimConfig, times: Sequence[float]) -> List[MomentCheck]:
    """Mean and variance of the simulated drift at `times`, and its covariance with the first time."""
    grid = time_grid(params.horizon, config.dt)
    at = _grid_indices(grid, times)
    values = _collect(params, ExpertSchedule.empty(), config, lambda b: b.drift[:, at], at.size)
    centred = values - values.mean(axis=0)
    s = float(grid[at[0]])
    checks = []
    for j, i in enumerate(at.tolist()):
        t = float(grid[i])
        checks.append(_mean_check("drift_mean", t, values[:, j], float(drift_mean(params, t))))
        checks.append(_mean_check("drift_variance", t, centred[:, j] ** 2, float(drift_variance(params, t))))
        if j:
            cross = centred[:, 0] * centred[:, j]
            checks.append(_mean_check("drift_covariance", t, cross, float(drift_covariance(params, s, t))))
    return checks


def expert_view_check(params: ModelParams, schedule: ExpertSchedule, config: SimConfig) -> List[MomentCheck]:
    """Z_k - mu_{t_k} has mean 0 and variance Gamma_k (informative dates only)."""
    grid = time_grid(params.horizon, config.dt)
    snapped, _, _ = snap_schedule(schedule, grid)
    n = snapped.n
    if n == 0:
        return []
    errors = _collect(params, schedule, config, lambda b: b.expert_draws - b.drift[:, b.date_indices], n)
    checks = []
    for k, (t, gamma_k) in enumerate(zip(snapped.dates.tolist(), snapped.variances.tolist())):
        if math.isinf(gamma_k):
            continue
        err = errors[:, k]
        checks.append(_mean_check("expert_view_bias", t, err, 0.0))
        checks.append(_mean_check("expert_view_variance", t, err**2, gamma_k))
    return checks
