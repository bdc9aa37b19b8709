from __future__ import annotations

import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad

from .filtering import (
    ALL_REGIMES,
    GRID_TOL,
    ExpertSchedule,
    Regime,
    Value,
    bayes_variance,
    information_date_variances,
    riccati_constants,
    riccati_segment_integral,
    segment_function,
)
from .market_model import ModelParams


logger = logging.getLogger(__name__)

# dates handled per .tolist() chunk in the O(N) sums
CHUNK = 100_000

ScalarSegment = Callable[[float, float], float]


class ValuationError(ValueError):
    pass


@dataclass
class ValueReport:
    x0: float
    A: float
    B: Dict[Regime, float] = field(default_factory=dict)
    V: Dict[Regime, float] = field(default_factory=dict)
    required_capital: Dict[Regime, float] = field(default_factory=dict)
    efficiency: Dict[Regime, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Table2Row:
    label: str
    values: Dict[Regime, float]
    efficiencies: Dict[Regime, float]


@dataclass(frozen=True)
class EfficiencyPoint:
    sweep: str
    x: float
    regime: Regime
    start: str
    efficiency: float


# -----------------------------
# A and B building blocks
# -----------------------------
def A_term(params: ModelParams) -> float:
    """int_0^T E[mu_t^2] dt."""
    a, T = params.alpha, params.horizon
    s = params.stationary_variance
    gap = params.m0 - params.delta
    return (
        (params.delta**2 + s) * T
        + 2.0 * params.delta * gap * (-math.expm1(-a * T)) / a
        + (gap**2 + params.nu0 - s) * (-math.expm1(-2.0 * a * T)) / (2.0 * a)
    )


def B_R(params: ModelParams) -> float:
    return float(riccati_segment_integral(params.nu0, params, params.horizon))


def _scalar_segments(regime: Regime, params: ModelParams) -> Tuple[ScalarSegment, ScalarSegment]:
    """(step, integral) over one interval as plain float functions for the date loops."""
    if regime is Regime.E:
        s = params.stationary_variance
        two_a = 2.0 * params.alpha

        def step(g: float, dt: float) -> float:
            return s + math.exp(-two_a * dt) * (g - s)

        def integral(g: float, dt: float) -> float:
            return s * dt + math.expm1(-two_a * dt) / two_a * (s - g)

        return step, integral

    c0, g_inf, rate = riccati_constants(params)
    two_c0 = 2.0 * c0
    sig2 = params.sigma**2

    def step(g: float, dt: float) -> float:
        c2 = g - g_inf
        e = math.exp(-rate * dt)
        return max(((c2 + two_c0) * g_inf + c2 * e * (two_c0 - g_inf)) / (c2 + two_c0 - c2 * e), 0.0)

    def integral(g: float, dt: float) -> float:
        return g_inf * dt + sig2 * math.log1p(-(g - g_inf) * math.expm1(-rate * dt) / two_c0)

    return step, integral


def _date_sum(regime: Regime, params: ModelParams, schedule: ExpertSchedule) -> float:
    """
    Sum of closed-form segment integrals over [0, t_0), [t_k, t_{k+1}) with t_N = T.

    For dates k*Delta with one Gamma the recursion settles on its fixed point;
    from then on every interval contributes the same term.
    """
    schedule.check_horizon(params.horizon)
    step, integral = _scalar_segments(regime, params)
    T = params.horizon
    g = params.nu0
    n = schedule.n
    if n == 0:
        return integral(g, T)

    total = 0.0
    t0 = float(schedule.dates[0])
    if t0 > 0:
        total += integral(g, t0)
        g = step(g, t0)

    spacing = schedule.spacing()
    if spacing is not None and abs(T - schedule.dates[-1] - spacing) <= 1e-9 * spacing + GRID_TOL:
        gamma_expert = float(schedule.variances[0])
        # rounding noise of one step
        noise = 8.0 * sys.float_info.epsilon * max(params.stationary_variance, riccati_constants(params)[0])
        for k in range(n):
            g_post = bayes_variance(g, gamma_expert)
            term = integral(g_post, spacing)
            total += term
            g_next = step(g_post, spacing)
            if abs(g_next - g) <= noise:
                total += (n - k - 1) * term
                logger.debug("fixed point after %d of %d dates", k + 1, n)
                break
            g = g_next
        return total

    bounds = np.append(schedule.dates, T)
    for lo in range(0, n, CHUNK):
        hi = min(lo + CHUNK, n)
        dts = np.diff(bounds[lo : hi + 1]).tolist()
        for dt, gamma_expert in zip(dts, schedule.variances[lo:hi].tolist()):
            g_post = bayes_variance(g, gamma_expert)
            total += integral(g_post, dt)
            g = step(g_post, dt)
    return total


def B_E(params: ModelParams, schedule: ExpertSchedule) -> float:
    return _date_sum(Regime.E, params, schedule)


def B_C(params: ModelParams, schedule: ExpertSchedule) -> float:
    return _date_sum(Regime.C, params, schedule)


def B(regime: Union[str, Regime], params: ModelParams, schedule: Optional[ExpertSchedule] = None) -> float:
    regime = Regime.parse(regime)
    schedule = schedule if schedule is not None else ExpertSchedule.empty()
    if regime is Regime.F:
        return 0.0
    if regime is Regime.R:
        return B_R(params)
    if regime is Regime.E:
        return B_E(params, schedule)
    return B_C(params, schedule)


def B_oracle(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: Optional[ExpertSchedule] = None,
    tol: float = 1e-12,
) -> float:
    """Adaptive quadrature of the variance curve, piecewise between information dates."""
    regime = Regime.parse(regime)
    if regime is Regime.F:
        return 0.0
    schedule = schedule if schedule is not None else ExpertSchedule.empty()
    seg = segment_function(regime)
    _, plus = information_date_variances(regime, params, schedule)
    dates = schedule.dates.tolist() if regime.uses_experts else []
    anchors = [(0.0, params.nu0)] + list(zip(dates, plus.tolist()))
    ends = dates + [params.horizon]
    total = 0.0
    for (t_a, g_a), t_b in zip(anchors, ends):
        if t_b <= t_a:
            continue
        value, _ = quad(lambda t: float(seg(g_a, params, t - t_a)), t_a, t_b, epsabs=tol, epsrel=tol, limit=200)
        total += value
    return total


# -----------------------------
# Values and efficiency
# -----------------------------
def value(
    regime: Union[str, Regime],
    x0: float,
    params: ModelParams,
    schedule: Optional[ExpertSchedule] = None,
) -> float:
    """Optimal expected log-utility of terminal wealth: log x0 + (A - B) / (2 sigma^2)."""
    if not x0 > 0:
        raise ValuationError("x0_must_be_positive")
    return math.log(x0) + (A_term(params) - B(regime, params, schedule)) / (2.0 * params.sigma**2)


def efficiency(
    regime: Union[str, Regime],
    params: ModelParams,
    schedule: Optional[ExpertSchedule] = None,
) -> Tuple[float, float]:
    """
    (x0^H, rho^H): the capital with V^H(x0^H) = V^F(1) and its reciprocal.
    """
    scaled = B(regime, params, schedule) / (2.0 * params.sigma**2)
    return math.exp(scaled), math.exp(-scaled)


def optimal_strategy(mu_hat: Value, params: ModelParams) -> Value:
    """pi* = mu_hat / sigma^2."""
    pi = np.asarray(mu_hat, dtype=float) / params.sigma**2
    return float(pi) if np.ndim(pi) == 0 else pi


def value_report(
    params: ModelParams,
    schedule: Optional[ExpertSchedule] = None,
    x0: float = 1.0,
    regimes: Sequence[Union[str, Regime]] = ALL_REGIMES,
) -> ValueReport:
    if not x0 > 0:
        raise ValuationError("x0_must_be_positive")
    report = ValueReport(x0=float(x0), A=A_term(params))
    two_sig2 = 2.0 * params.sigma**2
    for r in regimes:
        r = Regime.parse(r)
        b = B(r, params, schedule)
        report.B[r] = b
        report.V[r] = math.log(x0) + (report.A - b) / two_sig2
        report.required_capital[r] = math.exp(b / two_sig2)
        report.efficiency[r] = math.exp(-b / two_sig2)
    return report


# -----------------------------
# Sweeps
# -----------------------------
def _table2_point(args: Tuple[ModelParams, int, float]) -> Table2Row:
    params, n, gamma_expert = args
    schedule = ExpertSchedule.equidistant(n, params.horizon, gamma_expert)
    report = value_report(params, schedule, regimes=(Regime.E, Regime.C))
    logger.info("table2 N=%d V_E=%.4f V_C=%.4f", n, report.V[Regime.E], report.V[Regime.C])
    return Table2Row(label=str(n), values=dict(report.V), efficiencies=dict(report.efficiency))


def table2_rows(
    params: ModelParams,
    n_list: Sequence[int],
    gamma_expert: float,
    workers: int = 1,
) -> List[Table2Row]:
    """R row, one row per N (E and C on t_k = kT/N), F row."""
    if any(n < 1 for n in n_list):
        raise ValuationError("n_dates_must_be_positive")
    edge = value_report(params, regimes=(Regime.R, Regime.F))
    jobs = [(params, int(n), float(gamma_expert)) for n in n_list]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            middle = list(pool.map(_table2_point, jobs))
    else:
        middle = [_table2_point(j) for j in jobs]
    rows = [Table2Row("R", {Regime.R: edge.V[Regime.R]}, {Regime.R: edge.efficiency[Regime.R]})]
    rows.extend(middle)
    rows.append(Table2Row("F", {Regime.F: edge.V[Regime.F]}, {Regime.F: edge.efficiency[Regime.F]}))
    return rows


SWEEPS = ("n", "sqrt_gamma")


def efficiency_curve(
    params: ModelParams,
    sweep: str,
    values: Sequence[float],
    n_dates: int,
    gamma_expert: float,
    regimes: Sequence[Union[str, Regime]] = ALL_REGIMES,
    known_start: bool = False,
) -> List[EfficiencyPoint]:
    """
    Efficiency against the number of dates (sweep="n", gamma_expert fixed) or
    against sqrt(Gamma) (sweep="sqrt_gamma", n_dates fixed).
    """
    if sweep not in SWEEPS:
        raise ValuationError(f"unknown_sweep:{sweep}")
    base = params.with_known_initial_value(params.m0) if known_start else params
    start = "known" if known_start else "unknown"
    points: List[EfficiencyPoint] = []
    for x in values:
        if sweep == "n":
            schedule = ExpertSchedule.equidistant(int(x), base.horizon, gamma_expert)
        else:
            if x < 0:
                raise ValuationError("sqrt_gamma_negative")
            schedule = ExpertSchedule.equidistant(n_dates, base.horizon, float(x) ** 2)
        for r in regimes:
            r = Regime.parse(r)
            points.append(EfficiencyPoint(sweep, float(x), r, start, efficiency(r, base, schedule)[1]))
    return points
