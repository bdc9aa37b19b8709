from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Union

import yaml

from .filtering import ExpertSchedule
from .market_model import ModelParams
from .montecarlo import DEFAULT_SEED, SimConfig


STATIONARY = "stationary"

Number = Union[float, str]


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    alpha: float = 3.0
    beta: float = 1.0
    delta: float = 0.05
    sigma: float = 0.25
    # "stationary" resolves to delta resp. beta^2 / (2 alpha)
    m0: Number = STATIONARY
    nu0: Number = STATIONARY
    horizon: float = 1.0


@dataclass
class ScheduleConfig:
    n_dates: int = 10
    equidistant: bool = True
    gamma: float = 0.25
    dates: Optional[List[float]] = None
    variances: Optional[List[float]] = None


@dataclass
class SimSection:
    n_paths: int = 10_000
    dt: float = 1e-3
    seed: int = DEFAULT_SEED
    batch_size: int = 1_000
    workers: int = 1


@dataclass
class OutputConfig:
    dir: str = "out"
    csv: bool = True
    svg: bool = False


@dataclass
class LoggingConfig:
    level: str = "INFO"


@dataclass
class VarianceConfig:
    regimes: List[str] = field(default_factory=lambda: ["R", "E", "C", "F"])
    step: float = 1e-3
    envelope_tol: float = 1e-9
    # optional (Delta, Gamma) product exported as envelope_grid.csv
    grid_spacings: List[float] = field(default_factory=list)
    grid_gammas: List[float] = field(default_factory=list)


@dataclass
class Table2Config:
    n_list: List[int] = field(default_factory=lambda: [10, 100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000])


@dataclass
class SweepConfig:
    kind: str = "n"
    values: List[float] = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000])
    known_start: bool = True
    regimes: List[str] = field(default_factory=lambda: ["R", "E", "C", "F"])


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sim: SimSection = field(default_factory=SimSection)
    output: OutputConfig = field(default_factory=OutputConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    variance: VarianceConfig = field(default_factory=VarianceConfig)
    table2: Table2Config = field(default_factory=Table2Config)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def model_params(self) -> ModelParams:
        m = self.model
        m0 = m.delta if m.m0 == STATIONARY else float(m.m0)
        if m.nu0 != STATIONARY:
            return ModelParams(m.alpha, m.beta, m.delta, m.sigma, m0, float(m.nu0), m.horizon)
        # alpha is checked before the stationary variance divides by it
        params = ModelParams(m.alpha, m.beta, m.delta, m.sigma, m0, 0.0, m.horizon)
        return replace(params, nu0=params.stationary_variance)

    def expert_schedule(self) -> ExpertSchedule:
        s = self.schedule
        if s.dates is not None:
            variances = s.variances if s.variances is not None else [s.gamma] * len(s.dates)
            return ExpertSchedule(dates=s.dates, variances=variances)
        if not s.equidistant:
            raise ConfigError("schedule_needs_dates_when_not_equidistant")
        return ExpertSchedule.equidistant(s.n_dates, self.model.horizon, s.gamma)

    def sim_config(self) -> SimConfig:
        return SimConfig(**asdict(self.sim))


_SECTIONS = {f.name: f for f in fields(ExperimentConfig)}


def _number(section: str, key: str, value: Any, allow_stationary: bool = False) -> Number:
    if allow_stationary and isinstance(value, str) and value.strip().lower() == STATIONARY:
        return STATIONARY
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad_value:{section}.{key}")


def _coerce(section: str, key: str, default: Any, value: Any) -> Any:
    if section == "model" and key in ("m0", "nu0"):
        return _number(section, key, value, allow_stationary=True)
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"bad_value:{section}.{key}")
        return value
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"bad_value:{section}.{key}")
        return int(value)
    if isinstance(default, float):
        return float(_number(section, key, value))
    if isinstance(default, str):
        return str(value)
    if key in ("dates", "variances", "values", "grid_spacings", "grid_gammas"):
        return [float(_number(section, key, v)) for v in value]
    if key == "n_list":
        return [int(v) for v in value]
    if key == "regimes":
        return [str(v).upper() for v in value]
    return value


def _section(name: str, raw: Any) -> Any:
    cls = _SECTIONS[name].default_factory  # type: ignore[misc]
    base = cls()
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section_not_a_mapping:{name}")
    known = {f.name for f in fields(base)}
    updates: Dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown_key:{name}.{key}")
        updates[key] = _coerce(name, key, getattr(base, key), value)
    return replace(base, **updates)


def parse_config(raw: Optional[Dict[str, Any]]) -> ExperimentConfig:
    raw = raw or {}
    for name in raw:
        if name not in _SECTIONS:
            raise ConfigError(f"unknown_key:{name}")
    cfg = ExperimentConfig(**{name: _section(name, raw.get(name)) for name in _SECTIONS})
    # referenced types validate themselves
    cfg.model_params()
    cfg.expert_schedule().check_horizon(cfg.model.horizon)
    cfg.sim_config()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(asdict(cfg), sort_keys=True, default_flow_style=False)


def load_config(path: str = "config.yaml") -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw: Dict[str, Any] = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"config_unreadable:{path}:{e.strerror}")
    except yaml.YAMLError:
        raise ConfigError(f"config_not_yaml:{path}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config_not_a_mapping:{path}")
    return parse_config(raw)


def apply_overrides(
    cfg: ExperimentConfig,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    svg: Optional[bool] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    """CLI flags take precedence over the file."""
    if out is not None:
        cfg = replace(cfg, output=replace(cfg.output, dir=out))
    if svg:
        cfg = replace(cfg, output=replace(cfg.output, svg=True))
    if seed is not None:
        cfg = replace(cfg, sim=replace(cfg.sim, seed=int(seed)))
    if workers is not None:
        cfg = replace(cfg, sim=replace(cfg.sim, workers=int(workers)))
    cfg.sim_config()
    return cfg
