from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .filtering import (
    ExpertSchedule,
    FilterTrajectory,
    Regime,
    bayes_variance,
    gamma_at,
    gamma_C_segment,
    relaxation_segment,
    riccati_constants,
)
from .market_model import ModelParams


logger = logging.getLogger(__name__)


class EnvelopeError(ValueError):
    pass


@dataclass(frozen=True)
class AsymptoticEnvelope:
    """
    limsup (U) and liminf (L) of the sawtooth variance for dates k*Delta with constant Gamma.

    U is the positive root of a U^2 + b U + c = 0 and L = Gamma U / (Gamma + U).
    For an uninformative Gamma the quadratic degenerates: a, b, c are nan and
    U = L is the fixed point of the between-date dynamics.
    """

    regime: Regime
    delta_spacing: float
    gamma_expert: float
    d: float
    a: float
    b: float
    c: float
    U: float
    L: float


@dataclass(frozen=True)
class ConvergencePoint:
    n: int
    gamma_E: float
    gamma_C: float


def gamma_limit_R(params: ModelParams) -> float:
    """lim gamma^R_t = C0 - alpha sigma^2."""
    return riccati_constants(params)[1]


def monotone_threshold(regime: Union[str, Regime], params: ModelParams) -> float:
    """Between dates gamma decreases above this level and increases below it."""
    regime = Regime.parse(regime)
    if regime is Regime.E:
        return params.stationary_variance
    if regime in (Regime.R, Regime.C):
        return gamma_limit_R(params)
    raise EnvelopeError(f"no_threshold_for_regime:{regime.value}")


def _check_envelope_inputs(regime: Union[str, Regime], spacing: float, gamma_expert: float) -> Regime:
    regime = Regime.parse(regime)
    if not regime.uses_experts:
        raise EnvelopeError(f"envelope_regime_must_be_E_or_C:{regime.value}")
    if not spacing > 0:
        raise EnvelopeError("spacing_must_be_positive")
    if not gamma_expert > 0:
        raise EnvelopeError("gamma_expert_must_be_positive")
    return regime


def envelope(
    regime: Union[str, Regime],
    params: ModelParams,
    spacing: float,
    gamma_expert: float,
) -> AsymptoticEnvelope:
    regime = _check_envelope_inputs(regime, spacing, gamma_expert)
    s = params.stationary_variance
    c0, g_inf, rate = riccati_constants(params)
    if regime is Regime.E:
        one_minus_d = -math.expm1(-2.0 * params.alpha * spacing)
    else:
        one_minus_d = -math.expm1(-rate * spacing)
    d = 1.0 - one_minus_d

    if math.isinf(gamma_expert):
        fixed = s if regime is Regime.E else g_inf
        return AsymptoticEnvelope(regime, spacing, gamma_expert, d, math.nan, math.nan, math.nan, fixed, fixed)

    if regime is Regime.E:
        a = 1.0
    else:
        a_sigma2 = c0 - g_inf
        a = (one_minus_d * (gamma_expert + a_sigma2) + (1.0 + d) * c0) / (2.0 * a_sigma2)
    b = -one_minus_d * (s - gamma_expert)
    c = -one_minus_d * s * gamma_expert
    disc = b * b - 4.0 * a * c
    assert disc > 0, "envelope_discriminant_nonpositive"
    root = math.sqrt(disc)
    # positive root without cancellation
    u = (-b + root) / (2.0 * a) if b < 0 else (2.0 * c) / (-b - root)
    lower = gamma_expert * u / (gamma_expert + u)
    return AsymptoticEnvelope(regime, spacing, gamma_expert, d, a, b, c, u, lower)


def envelope_oracle(
    regime: Union[str, Regime],
    params: ModelParams,
    spacing: float,
    gamma_expert: float,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> Tuple[float, float]:
    """
    Iterates gamma_{k+1-} = G(gamma_k), gamma_k = update(gamma_{k-}) to its
    fixed point and returns (U, L). Independent of the quadratic in envelope().
    """
    regime = _check_envelope_inputs(regime, spacing, gamma_expert)
    seg = relaxation_segment if regime is Regime.E else gamma_C_segment
    u = monotone_threshold(regime, params)
    for _ in range(max_iter):
        u_next = float(seg(bayes_variance(u, gamma_expert), params, spacing))
        if abs(u_next - u) < tol:
            return u_next, bayes_variance(u_next, gamma_expert)
        u = u_next
    raise EnvelopeError("envelope_oracle_no_convergence")


def envelope_table(
    params: ModelParams,
    spacings: Iterable[float],
    gammas: Iterable[float],
    regimes: Sequence[Union[str, Regime]] = (Regime.E, Regime.C),
) -> List[AsymptoticEnvelope]:
    gammas = list(gammas)
    return [envelope(r, params, dlt, g) for r in regimes for dlt in spacings for g in gammas]


def transient_index(traj: FilterTrajectory, env: AsymptoticEnvelope, tol: float = 1e-9) -> Optional[int]:
    """
    First date index k0 from which the whole curve (left and right limits)
    stays inside [L - tol, U + tol]. None if the band is never settled in.
    """
    lo, hi = env.L - tol, env.U + tol
    inside = (traj.gamma >= lo) & (traj.gamma <= hi) & (traj.gamma_minus >= lo) & (traj.gamma_minus <= hi)
    date_pos = np.flatnonzero(traj.is_information_date)
    bad = np.flatnonzero(~inside)
    if bad.size == 0:
        return 0
    later = np.flatnonzero(date_pos > bad[-1])
    return int(later[0]) if later.size else None


def _trend(values: np.ndarray, tol: float) -> str:
    diffs = np.diff(values)
    if diffs.size == 0 or np.all(np.abs(diffs) <= tol):
        return "constant"
    if np.all(diffs <= tol):
        return "decreasing"
    if np.all(diffs >= -tol):
        return "increasing"
    return "mixed"


def sequence_monotonicity(traj: FilterTrajectory, start_index: int = 0, tol: float = 1e-15) -> Tuple[str, str]:
    """Trend of the pre-update and post-update sequences from date index `start_index` on."""
    at = np.flatnonzero(traj.is_information_date)[start_index:]
    return _trend(traj.gamma_minus[at], tol), _trend(traj.gamma[at], tol)


def convergence_study(
    params: ModelParams,
    gamma_expert_bound: float,
    t_eval: float,
    n_list: Sequence[int],
) -> List[ConvergencePoint]:
    """gamma^{E,N}(t_eval) and gamma^{C,N}(t_eval) for equidistant dates t_k = kT/N."""
    if not 0 < t_eval <= params.horizon:
        raise EnvelopeError("t_eval_outside_horizon")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise EnvelopeError("n_list_not_increasing")
    out: List[ConvergencePoint] = []
    for n in n_list:
        schedule = ExpertSchedule.equidistant(int(n), params.horizon, gamma_expert_bound)
        g_e = gamma_at(Regime.E, params, schedule, t_eval)
        g_c = gamma_at(Regime.C, params, schedule, t_eval)
        logger.debug("convergence N=%d gamma_E=%.6g gamma_C=%.6g", n, g_e, g_c)
        out.append(ConvergencePoint(int(n), g_e, g_c))
    return out
