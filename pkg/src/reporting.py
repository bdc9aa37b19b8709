from __future__ import annotations

import logging
import os
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .filtering import FilterTrajectory, Regime
from .montecarlo import McEstimate
from .valuation import EfficiencyPoint, Table2Row, ValueReport
from .variance_analysis import AsymptoticEnvelope


logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6g"
SVG_SALT = "drift-filter-report"

TRAJECTORY_COLUMNS = ["time", "regime", "gamma_minus", "gamma", "mu_hat_minus", "mu_hat", "is_information_date"]


class ReportError(OSError):
    pass


def write_csv(df: pd.DataFrame, path: str) -> str:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e.strerror}")
    logger.info("wrote %s (%d rows)", path, len(df))
    return path


def write_text(text: str, path: str) -> str:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e.strerror}")
    return path


# -----------------------------
# Frames
# -----------------------------
def trajectory_frame(traj: FilterTrajectory) -> pd.DataFrame:
    n = traj.grid.size
    mu = np.full(n, np.nan) if traj.mu_hat is None else np.asarray(traj.mu_hat, dtype=float).reshape(-1, n)[0]
    mu_minus = np.full(n, np.nan) if traj.mu_hat_minus is None else np.asarray(traj.mu_hat_minus).reshape(-1, n)[0]
    return pd.DataFrame(
        {
            "time": traj.grid,
            "regime": traj.regime.value,
            "gamma_minus": traj.gamma_minus,
            "gamma": traj.gamma,
            "mu_hat_minus": mu_minus,
            "mu_hat": mu,
            "is_information_date": traj.is_information_date.astype(int),
        },
        columns=TRAJECTORY_COLUMNS,
    )


def envelope_frame(envelopes: Iterable[AsymptoticEnvelope]) -> pd.DataFrame:
    rows = [
        {"regime": e.regime.value, "delta_spacing": e.delta_spacing, "gamma_expert": e.gamma_expert, "U": e.U, "L": e.L}
        for e in envelopes
    ]
    return pd.DataFrame(rows, columns=["regime", "delta_spacing", "gamma_expert", "U", "L"])



def value_report_frame(report: ValueReport) -> pd.DataFrame:
    rows = [
        {
            "regime": r.value,
            "A": report.A,
            "B": report.B[r],
            "V": report.V[r],
            "x0_required": report.required_capital[r],
            "efficiency_percent": 100.0 * report.efficiency[r],
        }
        for r in report.V
    ]
    return pd.DataFrame(rows, columns=["regime", "A", "B", "V", "x0_required", "efficiency_percent"])


def mc_frame(estimates: Iterable[McEstimate]) -> pd.DataFrame:
    cols = ["regime", "n_paths", "dt", "seed", "estimate", "standard_error", "closed_form", "z_score"]
    rows = [{**{k: getattr(e, k) for k in cols}, "regime": e.regime.value} for e in estimates]
    return pd.DataFrame(rows, columns=cols)



def table2_frame(rows: Sequence[Table2Row]) -> pd.DataFrame:
    out = [
        {"label": row.label, "regime": r.value, "value": v, "efficiency_percent": 100.0 * row.efficiencies[r]}
        for row in rows
        for r, v in row.values.items()
    ]
    return pd.DataFrame(out, columns=["label", "regime", "value", "efficiency_percent"])


def efficiency_frame(points: Iterable[EfficiencyPoint]) -> pd.DataFrame:
    rows = [
        {"sweep": p.sweep, "x": p.x, "regime": p.regime.value, "start": p.start, "efficiency_percent": 100.0 * p.efficiency}
        for p in points
    ]
    return pd.DataFrame(rows, columns=["sweep", "x", "regime", "start", "efficiency_percent"])


def render_table2(rows: Sequence[Table2Row]) -> str:
    """
    Fixed-width table: V with 4 decimals, efficiency in % with 2.
    Single-regime rows (R, F) fill the first value and efficiency columns.
    """
    line = "{:>10}  {:>8}  {:>8}  {:>8}  {:>8}\n"
    text = line.format("N", "V^E", "V^C", "rho^E %", "rho^C %")
    for row in rows:
        if len(row.values) == 1:
            (r, v), = row.values.items()
            text += line.format(row.label, f"{v:.4f}", "", f"{100.0 * row.efficiencies[r]:.2f}", "")
        else:
            v_e, v_c = row.values[Regime.E], row.values[Regime.C]
            e_e, e_c = row.efficiencies[Regime.E], row.efficiencies[Regime.C]
            text += line.format(row.label, f"{v_e:.4f}", f"{v_c:.4f}", f"{100.0 * e_e:.2f}", f"{100.0 * e_c:.2f}")
    return text


# -----------------------------
# SVG
# -----------------------------
def plot_lines(
    path: str,
    x: Mapping[str, np.ndarray],
    series: Mapping[str, np.ndarray],
    title: str,
    xlabel: str,
    ylabel: str,
    hlines: Optional[Dict[str, float]] = None,
    markers: Optional[Dict[str, Tuple[Sequence[float], Sequence[float]]]] = None,
) -> str:
    """
    Line chart over CSV data. x maps each series name to its abscissa.
    hlines are drawn dashed, markers as points given by (x, y) pairs.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = SVG_SALT
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for name, y in series.items():
        ax.plot(x[name], y, linewidth=1.4, label=name)
    for name, level in (hlines or {}).items():
        ax.axhline(level, linestyle="--", linewidth=1.0, color="grey", label=name)
    for name, pts in (markers or {}).items():
        xs, ys = pts
        ax.plot(xs, ys, linestyle="none", marker="o", markersize=4, label=name)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.25)
    ax.legend(fontsize=8)
    fig.tight_layout()
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e.strerror}")
    finally:
        plt.close(fig)
    return path
