import math

import numpy as np
import pytest
from scipy.integrate import quad

from src.filtering import ALL_REGIMES, ExpertSchedule, Regime
from src.market_model import ModelParams, drift_second_moment, reference_params
from src.valuation import (
    A_term,
    B,
    B_C,
    B_E,
    B_R,
    B_oracle,
    ValuationError,
    efficiency,
    efficiency_curve,
    optimal_strategy,
    table2_rows,
    value,
    value_report,
)


def equidistant(n, gamma=0.25, horizon=1.0):
    return ExpertSchedule.equidistant(n, horizon, gamma)


class TestBuildingBlocks:
    def test_A_stationary(self):
        assert A_term(reference_params()) == pytest.approx(0.0025 + 1.0 / 6.0)

    @pytest.mark.parametrize(
        "params",
        [
            reference_params().with_known_initial_value(),
            ModelParams(alpha=1.3, beta=0.7, delta=-0.02, sigma=0.3, m0=0.15, nu0=0.4, horizon=2.0),
        ],
    )
    def test_A_matches_quadrature(self, params):
        expected, _ = quad(lambda t: float(drift_second_moment(params, t)), 0.0, params.horizon, epsabs=1e-13, epsrel=1e-13)
        assert A_term(params) == pytest.approx(expected, abs=1e-10)

    def test_B_R_reference(self):
        p = reference_params()
        assert B_R(p) == pytest.approx(B_oracle(Regime.R, p), abs=1e-9)
        assert value(Regime.R, 1.0, p) == pytest.approx(0.3213, abs=5e-4)

    def test_B_without_dates(self):
        p = reference_params()
        assert B_C(p, ExpertSchedule.empty()) == pytest.approx(B_R(p), rel=1e-14)
        # stationary start: the expert-only variance never leaves beta^2 / 2 alpha
        assert B_E(p, ExpertSchedule.empty()) == pytest.approx(1.0 / 6.0)
        assert B(Regime.F, p, equidistant(10)) == 0.0

    def test_uninformative_dates_match_no_dates(self):
        p = reference_params().with_known_initial_value()
        blind = equidistant(20, gamma=math.inf)
        assert B_E(p, blind) == pytest.approx(B_E(p, ExpertSchedule.empty()), rel=1e-12)
        assert B_C(p, blind) == pytest.approx(B_R(p), rel=1e-12)

    @pytest.mark.parametrize(
        "schedule",
        [
            equidistant(50),
            ExpertSchedule(dates=[0.05, 0.3, 0.31, 0.9], variances=[0.1, 0.5, 0.0, math.inf]),
            ExpertSchedule(dates=[0.0, 0.5], variances=[2.0, 0.01]),
        ],
    )
    @pytest.mark.parametrize("regime", [Regime.E, Regime.C])
    def test_B_matches_quadrature(self, schedule, regime):
        p = ModelParams(alpha=2.0, beta=0.8, delta=0.03, sigma=0.2, m0=0.1, nu0=0.3)
        assert B(regime, p, schedule) == pytest.approx(B_oracle(regime, p, schedule), abs=1e-9)

    @pytest.mark.parametrize("regime", [Regime.E, Regime.C])
    def test_fixed_point_shortcut_agrees_with_full_loop(self, regime):
        p = reference_params()
        regular = equidistant(1000)
        variances = np.full(1000, 0.25)
        variances[0] = np.nextafter(0.25, 1.0)
        irregular = ExpertSchedule(dates=regular.dates, variances=variances)
        assert irregular.spacing() is None
        assert B(regime, p, regular) == pytest.approx(B(regime, p, irregular), rel=1e-12)

    def test_schedule_beyond_horizon_rejected(self):
        with pytest.raises(ValueError, match="schedule_date_outside_horizon"):
            B_E(reference_params(), ExpertSchedule(dates=[0.5, 1.0], variances=[1.0, 1.0]))


class TestValues:
    @pytest.mark.parametrize(
        "n, v_e, v_c",
        [(10, 0.5208, 0.6008), (100, 0.9957, 1.0017), (10_000, 1.3134, 1.3134)],
    )
    def test_reference_values(self, n, v_e, v_c):
        p = reference_params()
        assert value(Regime.E, 1.0, p, equidistant(n)) == pytest.approx(v_e, abs=5e-4)
        assert value(Regime.C, 1.0, p, equidistant(n)) == pytest.approx(v_c, abs=5e-4)

    def test_ten_million_dates(self):
        p = reference_params()
        schedule = equidistant(10_000_000)
        assert value(Regime.C, 1.0, p, schedule) == pytest.approx(1.3521, abs=5e-4)
        assert value(Regime.E, 1.0, p, schedule) == pytest.approx(1.3521, abs=5e-4)

    def test_full_information(self):
        assert value(Regime.F, 1.0, reference_params()) == pytest.approx(1.353333, abs=1e-6)

    def test_merton_case(self):
        p = ModelParams(alpha=3.0, beta=0.0, delta=0.05, sigma=0.25, m0=0.05, nu0=0.0)
        for r in ALL_REGIMES:
            assert value(r, 2.0, p, equidistant(10)) == pytest.approx(math.log(2.0) + 0.02, abs=1e-14)

    def test_log_wealth_shift(self):
        p = reference_params()
        s = equidistant(10)
        assert value(Regime.C, 3.0, p, s) - value(Regime.C, 1.0, p, s) == pytest.approx(math.log(3.0))

    @pytest.mark.parametrize(
        "schedule",
        [equidistant(10), equidistant(3, gamma=2.0), ExpertSchedule(dates=[0.2, 0.7], variances=[0.01, 1.0])],
    )
    def test_information_ordering(self, schedule):
        v = value_report(reference_params(), schedule).V
        assert v[Regime.F] >= v[Regime.C]
        assert v[Regime.C] >= max(v[Regime.E], v[Regime.R])

    def test_more_dates_never_hurt(self):
        p = reference_params()
        vals = [value(Regime.C, 1.0, p, equidistant(n)) for n in (1, 2, 4, 8, 16, 32, 64)]
        assert np.all(np.diff(vals) > 0)

    def test_nonpositive_capital_rejected(self):
        with pytest.raises(ValuationError, match="x0_must_be_positive"):
            value(Regime.R, 0.0, reference_params())
        with pytest.raises(ValuationError, match="x0_must_be_positive"):
            value_report(reference_params(), x0=-1.0)


class TestEfficiency:
    def test_reference_efficiencies(self):
        p = reference_params()
        assert 100.0 * efficiency(Regime.R, p)[1] == pytest.approx(35.63, abs=0.05)
        assert 100.0 * efficiency(Regime.C, p, equidistant(1000))[1] == pytest.approx(88.39, abs=0.05)
        assert efficiency(Regime.F, p) == (1.0, 1.0)

    def test_required_capital_reaches_full_information_value(self):
        p = reference_params()
        s = equidistant(10)
        for r in ALL_REGIMES:
            x0, rho = efficiency(r, p, s)
            assert x0 * rho == pytest.approx(1.0)
            assert value(r, x0, p, s) == pytest.approx(value(Regime.F, 1.0, p), abs=1e-12)

    def test_report_is_consistent(self):
        report = value_report(reference_params(), equidistant(10), x0=2.0)
        assert set(report.V) == set(ALL_REGIMES)
        for r in ALL_REGIMES:
            assert report.required_capital[r] * report.efficiency[r] == pytest.approx(1.0)
            assert 0 < report.efficiency[r] <= 1.0

    def test_sweep_over_dates(self):
        points = efficiency_curve(reference_params(), "n", [1, 2, 4, 8, 16], 0, 0.25, regimes=("E", "C", "R"))
        by = {r: [p.efficiency for p in points if p.regime is r] for r in (Regime.E, Regime.C, Regime.R)}
        assert np.all(np.diff(by[Regime.E]) > 0)
        assert np.all(np.diff(by[Regime.C]) > 0)
        assert np.allclose(by[Regime.R], by[Regime.R][0])
        assert all(c >= e for c, e in zip(by[Regime.C], by[Regime.E]))

    def test_sweep_over_reliability(self):
        values = [0.05, 0.1, 0.5, 1.0, 5.0]
        points = efficiency_curve(reference_params(), "sqrt_gamma", values, 20, 0.0, regimes=("E", "C"))
        e = [p.efficiency for p in points if p.regime is Regime.E]
        c = [p.efficiency for p in points if p.regime is Regime.C]
        assert np.all(np.diff(e) < 0) and np.all(np.diff(c) < 0)

    def test_unreliable_experts_reduce_C_to_R(self):
        points = efficiency_curve(reference_params(), "sqrt_gamma", [1e8], 20, 0.0, regimes=("C", "R"))
        c, r = (p.efficiency for p in points)
        assert c == pytest.approx(r, rel=1e-6)

    def test_known_start_raises_efficiency(self):
        p = reference_params()
        args = (p, "sqrt_gamma", [0.1, 0.5, 1.0], 20, 0.0, ("R", "E", "C"))
        unknown = efficiency_curve(*args)
        known = efficiency_curve(*args, known_start=True)
        for u, k in zip(unknown, known):
            assert (u.regime, u.x) == (k.regime, k.x)
            assert k.start == "known" and u.start == "unknown"
            assert k.efficiency >= u.efficiency

    def test_sweep_errors(self):
        with pytest.raises(ValuationError, match="unknown_sweep:gamma"):
            efficiency_curve(reference_params(), "gamma", [1.0], 10, 0.25)
        with pytest.raises(ValuationError, match="sqrt_gamma_negative"):
            efficiency_curve(reference_params(), "sqrt_gamma", [-1.0], 10, 0.25)


class TestTable2:
    def test_row_layout(self):
        rows = table2_rows(reference_params(), [10, 100], 0.25)
        assert [r.label for r in rows] == ["R", "10", "100", "F"]
        assert set(rows[0].values) == {Regime.R}
        assert set(rows[1].values) == {Regime.E, Regime.C}
        assert rows[1].values[Regime.C] == pytest.approx(0.6008, abs=5e-4)
        assert 100.0 * rows[1].efficiencies[Regime.E] == pytest.approx(43.49, abs=0.05)
        assert 100.0 * rows[1].efficiencies[Regime.C] == pytest.approx(47.12, abs=0.05)

    def test_parallel_rows_identical(self):
        p = reference_params()
        serial = table2_rows(p, [10, 1000], 0.25, workers=1)
        parallel = table2_rows(p, [10, 1000], 0.25, workers=2)
        assert serial == parallel

    def test_requires_dates(self):
        with pytest.raises(ValuationError, match="n_dates_must_be_positive"):
            table2_rows(reference_params(), [0, 10], 0.25)


def test_optimal_strategy():
    p = reference_params()
    assert optimal_strategy(0.0, p) == 0.0
    assert optimal_strategy(0.05, p) == pytest.approx(0.8)
    np.testing.assert_allclose(optimal_strategy(np.array([0.05, -0.1]), p), [0.8, -1.6])
