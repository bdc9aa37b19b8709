from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

from .market_model import ModelParams


logger = logging.getLogger(__name__)

# expert view that carries no information: the Bayesian update is an exact no-op
UNINFORMATIVE = math.inf

# dates closer than this to a grid point are treated as lying on it
GRID_TOL = 1e-12

Value = Union[float, np.ndarray]
VarianceUpdate = Callable[[float, float], float]


class FilterError(ValueError):
    pass


class Regime(str, Enum):
    R = "R"  # returns only
    E = "E"  # expert opinions only
    C = "C"  # returns and expert opinions
    F = "F"  # full information on the drift

    @classmethod
    def parse(cls, value: Union[str, "Regime"]) -> "Regime":
        if isinstance(value, Regime):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise FilterError(f"unknown_regime:{value}")

    @property
    def uses_experts(self) -> bool:
        return self in (Regime.E, Regime.C)

    @property
    def uses_returns(self) -> bool:
        return self in (Regime.R, Regime.C)


ALL_REGIMES: Tuple[Regime, ...] = (Regime.R, Regime.E, Regime.C, Regime.F)


# -----------------------------
# Domain types
# -----------------------------
@dataclass(frozen=True, eq=False)
class ExpertSchedule:
    """
    Information dates t_0 < ... < t_{N-1} with expert variances Gamma_k.

    Gamma_k = UNINFORMATIVE (math.inf) marks a view without information.
    Dates are checked against the horizon by the operations that know T.
    """

    dates: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        dates = np.array(self.dates, dtype=float).reshape(-1)
        variances = np.array(self.variances, dtype=float).reshape(-1)
        if dates.shape != variances.shape:
            raise FilterError("schedule_length_mismatch")
        if dates.size:
            if dates[0] < 0 or not np.isfinite(dates).all():
                raise FilterError("schedule_date_outside_horizon")
            if np.any(np.diff(dates) <= 0):
                raise FilterError("schedule_dates_not_increasing")
            if np.any(np.isnan(variances)) or np.any(variances < 0):
                raise FilterError("expert_variance_negative")
        dates.setflags(write=False)
        variances.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "variances", variances)

    @property
    def n(self) -> int:
        return int(self.dates.size)

    @classmethod
    def empty(cls) -> "ExpertSchedule":
        return cls(dates=np.empty(0), variances=np.empty(0))

    @classmethod
    def equidistant(cls, n: int, horizon: float, gamma: float) -> "ExpertSchedule":
        """t_k = k T / N with constant Gamma, k = 0..N-1 (first update at time 0)."""
        if n < 0:
            raise FilterError("n_dates_negative")
        dates = np.arange(n, dtype=float) * (horizon / n) if n else np.empty(0)
        return cls(dates=dates, variances=np.full(n, float(gamma)))

    def check_horizon(self, horizon: float) -> None:
        if self.n and self.dates[-1] >= horizon:
            raise FilterError("schedule_date_outside_horizon")

    def with_variance(self, gamma: float) -> "ExpertSchedule":
        return ExpertSchedule(dates=self.dates, variances=np.full(self.n, float(gamma)))

    def spacing(self) -> Optional[float]:
        """Common spacing Delta if the dates are k*Delta with one Gamma, else None."""
        if self.n < 2 or self.dates[0] != 0.0:
            return None
        delta = float(self.dates[-1] / (self.n - 1))
        if not np.allclose(np.diff(self.dates), delta, rtol=1e-9, atol=GRID_TOL):
            return None
        if np.any(self.variances != self.variances[0]):
            return None
        return delta


@dataclass(frozen=True)
class FilterState:
    mu_hat: Value
    gamma: float
    time: float = 0.0


@dataclass
class FilterTrajectory:
    """
    Filter output on a time grid.

    At an information date the main slots hold the post-update (right-limit)
    value and the *_minus slots the pre-update (left-limit) value; elsewhere
    both coincide. mu_hat may carry leading path axes.
    """

    regime: Regime
    grid: np.ndarray
    gamma: np.ndarray
    gamma_minus: np.ndarray
    is_information_date: np.ndarray
    mu_hat: Optional[np.ndarray] = None
    mu_hat_minus: Optional[np.ndarray] = None
    convention: str = "right_limit"


# -----------------------------
# Closed-form variance segments
# -----------------------------
def _out(x: np.ndarray) -> Value:
    return float(x) if np.ndim(x) == 0 else x


def riccati_constants(params: ModelParams) -> Tuple[float, float, float]:
    """
    Returns (C0, C0 - alpha sigma^2, 2 C0 / sigma^2).

    The last two are written without the difference of large terms so the
    sigma -> infinity limit stays accurate.
    """
    a, b, s = params.alpha, params.beta, params.sigma
    root = math.hypot(s * a, b)
    c0 = s * root
    gamma_limit = s * b * b / (root + s * a)
    rate = 2.0 * math.hypot(a, b / s)
    return c0, gamma_limit, rate


def gamma_C_segment(gamma_start: Value, params: ModelParams, dt: Value) -> Value:
    """Solution of the Riccati equation after dt, started at gamma_start."""
    gamma_start = np.asarray(gamma_start, dtype=float)
    dt = np.asarray(dt, dtype=float)
    if np.any(gamma_start < 0):
        raise FilterError("gamma_start_negative")
    if np.any(dt < 0):
        raise FilterError("negative_duration")
    c0, gamma_limit, rate = riccati_constants(params)
    c2 = gamma_start - gamma_limit
    c1 = c2 + 2.0 * c0
    e = np.exp(-rate * dt)
    den = c1 - c2 * e
    assert np.all(den > 0), "riccati_denominator_nonpositive"
    # -a s^2 + C0 (C1 + C2 e) / (C1 - C2 e), regrouped
    num = c1 * gamma_limit + c2 * e * (2.0 * c0 - gamma_limit)
    return _out(np.maximum(num / den, 0.0))


def gamma_R_closed(params: ModelParams, t: Value) -> Value:
    return gamma_C_segment(params.nu0, params, t)


def riccati_segment_integral(gamma_start: Value, params: ModelParams, dt: Value) -> Value:
    """int_0^dt of the Riccati solution started at gamma_start."""
    c0, gamma_limit, rate = riccati_constants(params)
    c2 = np.asarray(gamma_start, dtype=float) - gamma_limit
    dt = np.asarray(dt, dtype=float)
    one_minus_e = -np.expm1(-rate * dt)
    return _out(gamma_limit * dt + params.sigma**2 * np.log1p(c2 * one_minus_e / (2.0 * c0)))


def relaxation_segment(gamma_start: Value, params: ModelParams, dt: Value) -> Value:
    """Variance between dates without return observations (linear ODE)."""
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise FilterError("negative_duration")
    s = params.stationary_variance
    return _out(s + np.exp(-2.0 * params.alpha * dt) * (np.asarray(gamma_start, dtype=float) - s))


def relaxation_segment_integral(gamma_start: Value, params: ModelParams, dt: Value) -> Value:
    s = params.stationary_variance
    dt = np.asarray(dt, dtype=float)
    one_minus_e = -np.expm1(-2.0 * params.alpha * dt)
    return _out(s * dt - one_minus_e / (2.0 * params.alpha) * (s - np.asarray(gamma_start, dtype=float)))


def _zero_segment(gamma_start: Value, params: ModelParams, dt: Value) -> Value:
    return _out(np.zeros(np.broadcast(np.asarray(gamma_start), np.asarray(dt)).shape))


def segment_function(regime: Union[str, Regime]) -> Callable[[Value, ModelParams, Value], Value]:
    regime = Regime.parse(regime)
    if regime is Regime.E:
        return relaxation_segment
    if regime is Regime.F:
        return _zero_segment
    return gamma_C_segment


# -----------------------------
# Filter steps
# -----------------------------
def propagate_E(state: FilterState, params: ModelParams, dt: float) -> FilterState:
    if dt < 0:
        raise FilterError("negative_duration")
    e = math.exp(-params.alpha * dt)
    mu_hat = e * state.mu_hat + (1.0 - e) * params.delta
    gamma = relaxation_segment(state.gamma, params, dt)
    return FilterState(mu_hat=mu_hat, gamma=float(gamma), time=state.time + dt)


def bayes_weight(gamma_minus: float, gamma_expert: float) -> float:
    """
    lambda = Gamma / (gamma_- + Gamma), the weight kept on the prior filter.

    Gamma = inf gives 1. gamma_- = Gamma = 0 also gives 1: the state is
    already exact and the view agrees with it.
    """
    if gamma_expert < 0 or math.isnan(gamma_expert):
        raise FilterError("expert_variance_negative")
    if math.isinf(gamma_expert):
        return 1.0
    den = gamma_minus + gamma_expert
    if den == 0.0:
        return 1.0
    return gamma_expert / den


def bayes_variance(gamma_minus: float, gamma_expert: float) -> float:
    return bayes_weight(gamma_minus, gamma_expert) * gamma_minus


def bayes_update(state_minus: FilterState, z: Value, gamma_expert: float) -> FilterState:
    lam = bayes_weight(state_minus.gamma, gamma_expert)
    if lam == 1.0:
        return state_minus
    if lam == 0.0:
        return FilterState(mu_hat=z, gamma=0.0, time=state_minus.time)
    mu_hat = lam * state_minus.mu_hat + (1.0 - lam) * z
    return FilterState(mu_hat=mu_hat, gamma=lam * state_minus.gamma, time=state_minus.time)


def kalman_mean_step(state: FilterState, params: ModelParams, dR: Value, dt: float) -> FilterState:
    """One explicit Euler step of the Kalman mean SDE; gamma follows the closed form."""
    gain = state.gamma / params.sigma**2
    mu_hat = state.mu_hat + (params.alpha * params.delta - (params.alpha + gain) * state.mu_hat) * dt + gain * dR
    gamma = gamma_C_segment(state.gamma, params, dt)
    return FilterState(mu_hat=mu_hat, gamma=float(gamma), time=state.time + dt)


# -----------------------------
# Deterministic variance curves
# -----------------------------
def information_date_variances(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: ExpertSchedule,
    variance_update: VarianceUpdate = bayes_variance,
) -> Tuple[np.ndarray, np.ndarray]:
    """Pre- and post-update variances at every information date (empty for R and F)."""
    regime = Regime.parse(regime)
    if not regime.uses_experts:
        return np.empty(0), np.empty(0)
    schedule.check_horizon(params.horizon)
    seg = segment_function(regime)
    n = schedule.n
    minus = np.empty(n)
    plus = np.empty(n)
    t_prev, g = 0.0, params.nu0
    for k, (t, gamma_expert) in enumerate(zip(schedule.dates.tolist(), schedule.variances.tolist())):
        minus[k] = seg(g, params, t - t_prev)
        plus[k] = variance_update(float(minus[k]), gamma_expert)
        t_prev, g = t, float(plus[k])
    return minus, plus


def _merge_dates(grid: np.ndarray, dates: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if dates.size == 0:
        return grid.copy(), np.zeros(grid.size, dtype=bool)
    times = grid.copy()
    pos = np.searchsorted(grid, dates)
    left = np.clip(pos - 1, 0, grid.size - 1)
    right = np.clip(pos, 0, grid.size - 1)
    near_left = np.abs(grid[left] - dates) <= GRID_TOL
    near_right = (np.abs(grid[right] - dates) <= GRID_TOL) & ~near_left
    times[left[near_left]] = dates[near_left]
    times[right[near_right]] = dates[near_right]
    times = np.union1d(times, dates)
    return times, np.isin(times, dates)


def gamma_trajectory(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: ExpertSchedule,
    grid: Sequence[float],
    variance_update: VarianceUpdate = bayes_variance,
) -> FilterTrajectory:
    """
    Deterministic conditional variance on `grid`, with information dates inserted.

    Conventions: gamma_{0-} = nu0, and a date at t = 0 updates at the origin.
    The schedule is ignored for R and F.
    """
    regime = Regime.parse(regime)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise FilterError("empty_grid")
    if np.any(np.diff(grid) <= 0):
        raise FilterError("grid_not_increasing")
    if grid[0] < 0 or grid[-1] > params.horizon + GRID_TOL:
        raise FilterError("grid_outside_horizon")

    dates = schedule.dates if regime.uses_experts else np.empty(0)
    times, is_date = _merge_dates(grid, dates)

    if regime is Regime.F:
        zeros = np.zeros(times.size)
        return FilterTrajectory(regime, times, zeros, zeros.copy(), is_date)

    minus_k, plus_k = information_date_variances(regime, params, schedule, variance_update)
    seg = segment_function(regime)

    # anchor j = 0 is (0, nu0); anchor j = k + 1 is (t_k, post-update gamma)
    j = np.searchsorted(dates, times, side="right")
    anchor_t = np.concatenate([[0.0], dates])
    anchor_g = np.concatenate([[params.nu0], plus_k])
    gamma = np.asarray(seg(anchor_g[j], params, times - anchor_t[j]), dtype=float)
    gamma_minus = gamma.copy()
    at = np.flatnonzero(is_date)
    gamma[at] = plus_k[j[at] - 1]
    gamma_minus[at] = minus_k[j[at] - 1]
    return FilterTrajectory(regime, times, gamma, gamma_minus, is_date)


def gamma_at(regime: Union[str, Regime], params: ModelParams, schedule: ExpertSchedule, t: float) -> float:
    """Post-update variance at time t."""
    traj = gamma_trajectory(regime, params, schedule, [t])
    return float(traj.gamma[np.searchsorted(traj.grid, t)])


def gamma_ode_oracle(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: ExpertSchedule,
    times: Sequence[float],
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> np.ndarray:
    """
    Integrates the variance ODE numerically (DOP853) between information dates
    and applies the Bayesian jump at each date. Values at dates are post-update.
    """
    regime = Regime.parse(regime)
    times = np.asarray(times, dtype=float).reshape(-1)
    out = np.zeros(times.size)
    if regime is Regime.F:
        return out

    a, b, s = params.alpha, params.beta, params.sigma
    if regime is Regime.E:
        rhs = lambda _t, y: -2.0 * a * y + b * b
    else:
        rhs = lambda _t, y: -(y * y) / (s * s) - 2.0 * a * y + b * b

    dates = schedule.dates.tolist() if regime.uses_experts else []
    gammas = schedule.variances.tolist() if regime.uses_experts else []
    bounds = [0.0] + dates + [params.horizon]
    y = params.nu0
    for k in range(len(bounds) - 1):
        lo, hi = bounds[k], bounds[k + 1]
        if k > 0:
            y = bayes_variance(y, gammas[k - 1])
        last = k == len(bounds) - 2
        mask = (times >= lo) & ((times <= hi) if last else (times < hi))
        if hi <= lo:
            out[mask] = y
            continue
        t_eval = np.union1d(times[mask], [hi])
        sol = solve_ivp(rhs, (lo, hi), [y], method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
        if not sol.success:
            raise FilterError(f"ode_oracle_failed:{sol.message}")
        values = dict(zip(sol.t.tolist(), sol.y[0].tolist()))
        out[mask] = [values[t] for t in times[mask].tolist()]
        y = float(sol.y[0, -1])
    return out


# -----------------------------
# Pathwise filters
# -----------------------------
def run_filter(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: ExpertSchedule,
    grid: Sequence[float],
    observations: Optional[np.ndarray] = None,
    expert_draws: Optional[np.ndarray] = None,
) -> FilterTrajectory:
    """
    Runs the drift filter along observed data on `grid` (covering [0, T]).

    observations: return increments, shape (..., M), for R and C; the drift
    itself at the grid points, shape (..., M + 1), for F; ignored for E.
    expert_draws: views Z_k, shape (..., N), for E and C. Information dates
    must lie on the grid. Leading axes index independent paths.
    """
    regime = Regime.parse(regime)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size < 2:
        raise FilterError("grid_too_short")
    if abs(grid[0]) > GRID_TOL or abs(grid[-1] - params.horizon) > 1e-9:
        raise FilterError("grid_must_cover_horizon")
    m = grid.size - 1

    traj = gamma_trajectory(regime, params, schedule, grid)
    if traj.grid.size != grid.size:
        raise FilterError("information_date_not_on_grid")
    grid = traj.grid

    if regime is Regime.F:
        if observations is None or np.shape(observations)[-1] != m + 1:
            raise FilterError("drift_path_length_mismatch")
        drift = np.array(observations, dtype=float)
        traj.mu_hat = drift
        traj.mu_hat_minus = drift.copy()
        return traj

    draws: Optional[np.ndarray] = None
    batch: Tuple[int, ...] = ()
    if regime.uses_experts:
        if schedule.n:
            if expert_draws is None or np.shape(expert_draws)[-1] != schedule.n:
                raise FilterError("expert_draws_length_mismatch")
            draws = np.asarray(expert_draws, dtype=float)
            batch = draws.shape[:-1]
    if regime.uses_returns:
        if observations is None or np.shape(observations)[-1] != m:
            raise FilterError("observation_length_mismatch")
        observations = np.asarray(observations, dtype=float)
        if draws is not None and draws.shape[:-1] != observations.shape[:-1]:
            raise FilterError("batch_shape_mismatch")
        batch = observations.shape[:-1]

    date_index: Dict[int, int] = {}
    if regime.uses_experts:
        date_index = {int(i): k for k, i in enumerate(np.flatnonzero(traj.is_information_date))}
    logger.debug("run_filter regime=%s steps=%d dates=%d batch=%s", regime.value, m, len(date_index), batch)

    mu_hat = np.empty(batch + (m + 1,))
    mu_hat_minus = np.empty(batch + (m + 1,))
    state = FilterState(mu_hat=np.full(batch, params.m0, dtype=float), gamma=params.nu0, time=0.0)
    for i in range(m + 1):
        state = replace(state, gamma=float(traj.gamma_minus[i]), time=float(grid[i]))
        mu_hat_minus[..., i] = state.mu_hat
        k = date_index.get(i)
        if k is not None:
            state = bayes_update(state, draws[..., k], float(schedule.variances[k]))
        mu_hat[..., i] = state.mu_hat
        if i == m:
            break
        dt = float(grid[i + 1] - grid[i])
        if regime is Regime.E:
            state = propagate_E(state, params, dt)
        else:
            state = kalman_mean_step(replace(state, gamma=float(traj.gamma[i])), params, observations[..., i], dt)

    traj.mu_hat = mu_hat
    traj.mu_hat_minus = mu_hat_minus
    return traj
