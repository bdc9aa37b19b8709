from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np


Time = Union[float, np.ndarray]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """
    Market model with an Ornstein-Uhlenbeck drift.

      dmu_t = alpha (delta - mu_t) dt + beta dB_t,   mu_0 ~ N(m0, nu0)
      dR_t  = mu_t dt + sigma dW_t

    Units are years. beta = 0 is admitted only for the constant-drift (Merton) case.
    """

    alpha: float
    beta: float
    delta: float
    sigma: float
    m0: float
    nu0: float
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ModelError("alpha_must_be_positive")
        if not self.beta >= 0:
            raise ModelError("beta_must_be_nonnegative")
        if not self.sigma > 0:
            raise ModelError("sigma_must_be_positive")
        if not self.nu0 >= 0:
            raise ModelError("nu0_must_be_nonnegative")
        if not self.horizon > 0:
            raise ModelError("horizon_must_be_positive")
        if not np.isfinite([self.alpha, self.beta, self.delta, self.sigma, self.m0, self.nu0, self.horizon]).all():
            raise ModelError("params_must_be_finite")

    @property
    def stationary_variance(self) -> float:
        return self.beta**2 / (2.0 * self.alpha)

    @classmethod
    def stationary(
        cls,
        alpha: float,
        beta: float,
        delta: float,
        sigma: float,
        horizon: float = 1.0,
    ) -> "ModelParams":
        """Drift and filter prior started from the long-run law N(delta, beta^2 / 2 alpha)."""
        return cls(
            alpha=alpha,
            beta=beta,
            delta=delta,
            sigma=sigma,
            m0=delta,
            nu0=beta**2 / (2.0 * alpha),
            horizon=horizon,
        )

    def with_known_initial_value(self, m0: Optional[float] = None) -> "ModelParams":
        # known start: nu0 = 0, by default at the reversion level
        return replace(self, m0=self.delta if m0 is None else float(m0), nu0=0.0)

    def with_sigma_scaled(self, factor: float) -> "ModelParams":
        return replace(self, sigma=self.sigma * factor)

    def with_horizon(self, horizon: float) -> "ModelParams":
        return replace(self, horizon=float(horizon))


def reference_params(**overrides) -> ModelParams:
    """Default market (T=1, delta=0.05, sigma=0.25, alpha=3, beta=1), stationary start."""
    base = ModelParams.stationary(alpha=3.0, beta=1.0, delta=0.05, sigma=0.25, horizon=1.0)
    return replace(base, **overrides) if overrides else base


def _check_time(t: Time) -> None:
    if np.any(np.asarray(t) < 0):
        raise ModelError("negative_time")


def drift_mean(params: ModelParams, t: Time) -> Time:
    _check_time(t)
    return params.delta + np.exp(-params.alpha * np.asarray(t, dtype=float)) * (params.m0 - params.delta)


def drift_variance(params: ModelParams, t: Time) -> Time:
    _check_time(t)
    s = params.stationary_variance
    return s + np.exp(-2.0 * params.alpha * np.asarray(t, dtype=float)) * (params.nu0 - s)


def drift_covariance(params: ModelParams, s: Time, t: Time) -> Time:
    _check_time(s)
    _check_time(t)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    stat = params.stationary_variance
    return stat * np.exp(-params.alpha * np.abs(t - s)) + np.exp(-params.alpha * (t + s)) * (params.nu0 - stat)


def drift_second_moment(params: ModelParams, t: Time) -> Time:
    """E[mu_t^2] = nu_t + m_t^2."""
    return drift_variance(params, t) + drift_mean(params, t) ** 2
