from __future__ import annotations

import argparse
import json
import logging
import math
import os
from dataclasses import replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from . import reporting
from .config import ExperimentConfig, apply_overrides, dump_config, load_config
from .filtering import Regime, VarianceUpdate, bayes_variance, gamma_trajectory, run_filter
from .integrity import write_manifest
from .montecarlo import mc_values, simulate_paths, snap_schedule, time_grid
from .run_context import build_run_context, configure_logging, encode_run_context
from .validation import run_validation
from .valuation import efficiency_curve, table2_rows, value_report
from .variance_analysis import envelope, envelope_table, transient_index


logger = logging.getLogger(__name__)

METADATA_NAME = "run_metadata.json"


# -----------------------------
# CLI plumbing
# -----------------------------
def base_parser(description: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--config", default="config.yaml", help="YAML experiment config")
    parser.add_argument("--out", default=None, help="Output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, default=None, help="Monte Carlo seed, unsigned 64-bit")
    parser.add_argument("--svg", action="store_true", help="Also write SVG charts")
    parser.add_argument("--workers", type=int, default=None, help="Process/thread pool size")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, out=args.out, seed=args.seed, svg=args.svg, workers=args.workers)
    except ValueError as e:
        raise SystemExit(f"[ERR] {e}")
    configure_logging(cfg.logging.level)
    return cfg


def _finish(cfg: ExperimentConfig, command: str, paths: List[str], extra: Optional[Dict[str, Any]] = None) -> List[str]:
    out_dir = cfg.output.dir
    ctx = build_run_context(command=command, seed=cfg.sim.seed, config_text=dump_config(cfg), extra=extra)
    meta = reporting.write_text(encode_run_context(ctx), os.path.join(out_dir, METADATA_NAME))
    manifest = write_manifest(out_dir, paths)
    return paths + [meta, manifest]


def _grid(horizon: float, step: float) -> np.ndarray:
    return np.linspace(0.0, horizon, max(int(round(horizon / step)), 1) + 1)


# -----------------------------
# Commands
# -----------------------------
def cmd_variance(cfg: ExperimentConfig) -> List[str]:
    """Variance curves per regime with envelope bounds."""
    params = cfg.model_params()
    schedule = cfg.expert_schedule()
    grid = _grid(params.horizon, cfg.variance.step)
    out = cfg.output.dir
    regimes = [Regime.parse(r) for r in cfg.variance.regimes]

    trajectories = {r: gamma_trajectory(r, params, schedule, grid) for r in regimes}
    paths = [
        reporting.write_csv(reporting.trajectory_frame(t), os.path.join(out, f"variance_{r.value}.csv"))
        for r, t in trajectories.items()
    ]

    envelopes = []
    extra: Dict[str, Any] = {}
    spacing = schedule.spacing()
    gamma_expert = float(schedule.variances[0]) if schedule.n else math.inf
    if spacing is not None and gamma_expert > 0:
        for r in (Regime.E, Regime.C):
            env = envelope(r, params, spacing, gamma_expert)
            envelopes.append(env)
            if r in trajectories:
                extra[f"transient_index_{r.value}"] = transient_index(trajectories[r], env, cfg.variance.envelope_tol)
        paths.append(reporting.write_csv(reporting.envelope_frame(envelopes), os.path.join(out, "envelope.csv")))

    if cfg.variance.grid_spacings and cfg.variance.grid_gammas:
        table = envelope_table(params, cfg.variance.grid_spacings, cfg.variance.grid_gammas)
        paths.append(reporting.write_csv(reporting.envelope_frame(table), os.path.join(out, "envelope_grid.csv")))

    if cfg.output.svg:
        hlines = {f"U^{e.regime.value}": e.U for e in envelopes}
        hlines.update({f"L^{e.regime.value}": e.L for e in envelopes})
        reporting.plot_lines(
            os.path.join(out, "variance.svg"),
            {f"gamma^{r.value}": t.grid for r, t in trajectories.items()},
            {f"gamma^{r.value}": t.gamma for r, t in trajectories.items()},
            "Conditional variance",
            "t",
            "gamma",
            hlines=hlines,
        )
    return _finish(cfg, "variance", paths, extra)


def cmd_table2(cfg: ExperimentConfig) -> List[str]:
    params = cfg.model_params()
    rows = table2_rows(params, cfg.table2.n_list, cfg.schedule.gamma, workers=cfg.sim.workers)
    out = cfg.output.dir
    paths = [
        reporting.write_csv(reporting.table2_frame(rows), os.path.join(out, "table2.csv")),
        reporting.write_text(reporting.render_table2(rows), os.path.join(out, "table2.txt")),
    ]
    return _finish(cfg, "table2", paths)


def cmd_efficiency_sweep(cfg: ExperimentConfig) -> List[str]:
    params = cfg.model_params()
    sweep = cfg.sweep
    points = efficiency_curve(params, sweep.kind, sweep.values, cfg.schedule.n_dates, cfg.schedule.gamma, sweep.regimes)
    if sweep.known_start:
        points += efficiency_curve(
            params, sweep.kind, sweep.values, cfg.schedule.n_dates, cfg.schedule.gamma, sweep.regimes, known_start=True
        )
    out = cfg.output.dir
    frame = reporting.efficiency_frame(points)
    paths = [reporting.write_csv(frame, os.path.join(out, f"efficiency_{sweep.kind}.csv"))]
    if cfg.output.svg:
        series, xs = {}, {}
        for (regime, start), part in frame.groupby(["regime", "start"], sort=True):
            name = f"{regime} ({start})"
            series[name] = part["efficiency_percent"].to_numpy()
            xs[name] = part["x"].to_numpy()
        xlabel = "N" if sweep.kind == "n" else "sqrt(Gamma)"
        reporting.plot_lines(os.path.join(out, f"efficiency_{sweep.kind}.svg"), xs, series, "Efficiency", xlabel, "%")
    return _finish(cfg, "efficiency_sweep", paths)


def _simulated_panels(cfg: ExperimentConfig, start: str) -> Tuple[pd.DataFrame, pd.DataFrame, float]:
    params = cfg.model_params()
    if start == "known":
        params = params.with_known_initial_value(params.m0)
    schedule = cfg.expert_schedule()
    sim = replace(cfg.sim_config(), n_paths=1, batch_size=1, workers=1)
    bundle = next(simulate_paths(params, schedule, sim))
    _, _, snap_error = snap_schedule(schedule, bundle.grid)

    columns: Dict[str, np.ndarray] = {
        "time": bundle.grid,
        "cumulative_return": np.concatenate([[0.0], np.cumsum(bundle.returns[0])]),
        "cumulative_drift": np.concatenate([[0.0], np.cumsum(bundle.drift[0, :-1] * np.diff(bundle.grid))]),
        "drift": bundle.drift[0],
    }
    for r in (Regime.R, Regime.E, Regime.C):
        traj = run_filter(r, params, bundle.schedule, bundle.grid, bundle.returns, bundle.expert_draws)
        columns[f"mu_hat_{r.value}"] = np.broadcast_to(traj.mu_hat, bundle.drift.shape)[0]
        columns[f"gamma_{r.value}"] = traj.gamma
    panels = pd.DataFrame(columns)
    views = pd.DataFrame(
        {
            "date": bundle.schedule.dates,
            "view": bundle.expert_draws[0],
            "gamma_expert": bundle.schedule.variances,
        },
        columns=["date", "view", "gamma_expert"],
    )
    return panels, views, snap_error


def cmd_simulate(cfg: ExperimentConfig) -> List[str]:
    """One path with returns, drift, filters and variances, for unknown and known initial drift."""
    out = cfg.output.dir
    paths: List[str] = []
    snap = 0.0
    for start in ("unknown", "known"):
        panels, views, snap = _simulated_panels(cfg, start)
        paths.append(reporting.write_csv(panels, os.path.join(out, f"simulate_{start}.csv")))
        paths.append(reporting.write_csv(views, os.path.join(out, f"expert_views_{start}.csv")))
        if cfg.output.svg:
            t = panels["time"].to_numpy()
            returns = ["cumulative_return", "cumulative_drift"]
            reporting.plot_lines(
                os.path.join(out, f"returns_{start}.svg"),
                {n: t for n in returns},
                {n: panels[n].to_numpy() for n in returns},
                "Returns",
                "t",
                "R",
            )
            names = ["drift", "mu_hat_R", "mu_hat_E", "mu_hat_C"]
            reporting.plot_lines(
                os.path.join(out, f"filters_{start}.svg"),
                {n: t for n in names},
                {n: panels[n].to_numpy() for n in names},
                "Drift and filters",
                "t",
                "mu",
                markers={"views": (views["date"].to_numpy(), views["view"].to_numpy())},
            )
            gammas = ["gamma_R", "gamma_E", "gamma_C"]
            reporting.plot_lines(
                os.path.join(out, f"variances_{start}.svg"),
                {n: t for n in gammas},
                {n: panels[n].to_numpy() for n in gammas},
                "Conditional variances",
                "t",
                "gamma",
            )
    return _finish(cfg, "simulate", paths, {"snap_error": snap})


def cmd_value(cfg: ExperimentConfig, x0: float = 1.0, monte_carlo: bool = False) -> List[str]:
    params = cfg.model_params()
    schedule = cfg.expert_schedule()
    out = cfg.output.dir
    report = value_report(params, schedule, x0=x0)
    paths = [reporting.write_csv(reporting.value_report_frame(report), os.path.join(out, "value.csv"))]
    extra: Dict[str, Any] = {"x0": x0}
    if monte_carlo:
        estimates = mc_values(params, schedule, cfg.sim_config(), x0)
        paths.append(reporting.write_csv(reporting.mc_frame(estimates.values()), os.path.join(out, "value_mc.csv")))
        extra["snap_error"] = max(e.snap_error for e in estimates.values())
        extra["mc_steps"] = int(time_grid(params.horizon, cfg.sim.dt).size - 1)
    return _finish(cfg, "value", paths, extra)


def cmd_validate(
    cfg: ExperimentConfig,
    variance_update: VarianceUpdate = bayes_variance,
    include_monte_carlo: bool = True,
) -> Tuple[List[str], bool]:
    """Runs the oracle suite; the flag is False if any check breached its tolerance."""
    market = (cfg.model_params(), cfg.expert_schedule())
    logger.info("validate: configured market used for dominance and Monte Carlo checks, reference markets for the rest")
    report = run_validation(
        cfg.sim_config(), variance_update, include_monte_carlo, workers=cfg.sim.workers, market=market
    )
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    path = reporting.write_text(text, os.path.join(cfg.output.dir, "validation.json"))
    for c in report.failures():
        logger.error("[BREACH] %s observed=%.6g tolerance=%.6g %s", c.name, c.observed, c.tolerance, c.detail)
    return _finish(cfg, "validate", [path], {"passed": report.passed}), report.passed


def run_command(fn: Callable[..., Any], cfg: ExperimentConfig, **kwargs: Any) -> Any:
    """Calls a command and turns library errors into SystemExit('[ERR] ...')."""
    try:
        return fn(cfg, **kwargs)
    except (ValueError, OSError) as e:
        raise SystemExit(f"[ERR] {e}")
