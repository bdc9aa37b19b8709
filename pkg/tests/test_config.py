import math
import os

import pytest
import yaml

from src.config import (
    STATIONARY,
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config,
)
from src.filtering import FilterError
from src.market_model import ModelError, reference_params
from src.montecarlo import SimulationError


ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def test_repo_config_is_the_reference_market():
    cfg = load_config(os.path.join(ROOT, "config.yaml"))
    assert cfg.model_params() == reference_params()
    schedule = cfg.expert_schedule()
    assert schedule.n == 10 and schedule.spacing() == pytest.approx(0.1)
    assert cfg.sim.seed == 20240117


@pytest.mark.parametrize("name", ["long_run_variance.yaml", "single_path.yaml", "reliability_sweep.yaml"])
def test_bundled_configs_load(name):
    cfg = load_config(os.path.join(ROOT, "configs", name))
    assert cfg.expert_schedule().n == cfg.schedule.n_dates


def test_empty_config_uses_defaults():
    cfg = parse_config({})
    assert cfg == ExperimentConfig()
    assert cfg.model.m0 == STATIONARY


def test_dump_round_trip():
    cfg = parse_config(
        {
            "model": {"nu0": 0.0, "m0": 0.1},
            "schedule": {"dates": [0.0, 0.25, 0.5], "variances": [0.1, math.inf, 0.0]},
            "sim": {"seed": 2**63},
        }
    )
    again = parse_config(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert math.isinf(again.expert_schedule().variances[1])


def test_infinite_variance_literal():
    cfg = parse_config(yaml.safe_load("schedule:\n  gamma: .inf\n  n_dates: 3\n"))
    assert math.isinf(cfg.schedule.gamma)


def test_explicit_initial_law():
    cfg = parse_config({"model": {"m0": 0.2, "nu0": "0.01"}})
    p = cfg.model_params()
    assert (p.m0, p.nu0) == (0.2, 0.01)


@pytest.mark.parametrize(
    "raw, reason",
    [
        ({"model": {"gamma": 1.0}}, "unknown_key:model.gamma"),
        ({"plots": {}}, "unknown_key:plots"),
        ({"model": {"alpha": "fast"}}, "bad_value:model.alpha"),
        ({"model": {"m0": "somewhere"}}, "bad_value:model.m0"),
        ({"output": {"svg": "yes"}}, "bad_value:output.svg"),
        ({"sim": {"n_paths": 10.5}}, "bad_value:sim.n_paths"),
        ({"model": [1.0]}, "section_not_a_mapping:model"),
        ({"schedule": {"equidistant": False}}, "schedule_needs_dates_when_not_equidistant"),
    ],
)
def test_rejected_configs(raw, reason):
    with pytest.raises(ConfigError, match=reason):
        parse_config(raw)


@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_nonpositive_alpha_with_stationary_start(alpha):
    with pytest.raises(ModelError, match="alpha_must_be_positive"):
        parse_config({"model": {"alpha": alpha}})
    with pytest.raises(ModelError, match="alpha_must_be_positive"):
        parse_config({"model": {"alpha": alpha, "m0": 0.1, "nu0": 0.2}})


def test_stationary_literal_resolves_after_validation():
    p = parse_config({"model": {"alpha": 2.0, "beta": 1.0}}).model_params()
    assert p.nu0 == pytest.approx(0.25)


def test_domain_errors_surface():
    with pytest.raises(FilterError, match="schedule_date_outside_horizon"):
        parse_config({"schedule": {"dates": [0.5, 1.0]}})
    with pytest.raises(SimulationError, match="dt_must_be_positive"):
        parse_config({"sim": {"dt": 0.0}})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="config_unreadable"):
        load_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="config_not_yaml"):
        load_config(str(bad))
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="config_not_a_mapping"):
        load_config(str(scalar))


def test_cli_overrides():
    cfg = apply_overrides(parse_config({}), out="elsewhere", seed=5, svg=True, workers=3)
    assert cfg.output.dir == "elsewhere" and cfg.output.svg
    assert (cfg.sim.seed, cfg.sim.workers) == (5, 3)
    assert apply_overrides(cfg) == cfg
    with pytest.raises(SimulationError, match="workers_must_be_positive"):
        apply_overrides(cfg, workers=0)
