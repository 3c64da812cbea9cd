"""Render publication figures from the documented CSV schemas.

Inputs are plain CSV files: the path file written by the simulator
(columns path_id, stage, phase, t, X, S, mpr, pi_0.., residual) and the
study file written by the convergence lab (columns spec_id, N, t, metric,
value).  Rendering is deterministic: no timestamps or other volatile
metadata are embedded, so identical input bytes give identical image
bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

PATH_COLUMNS = ("path_id", "stage", "phase", "t", "X", "S", "mpr", "residual")
STUDY_COLUMNS = ("spec_id", "N", "t", "metric", "value")

_SAVE_KW = {"dpi": 150, "metadata": {"Software": "pcefigs"}}


class SchemaError(ValueError):
    """Input CSV does not match the documented schema."""


def _read_csv(path, required) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: file is empty") from exc
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
    if frame.empty:
        raise SchemaError(f"{path}: no data rows")
    return frame


def load_path_frame(paths_csv, path_id: int) -> pd.DataFrame:
    """Rows of one path, in row order, with the strategy columns attached."""
    frame = _read_csv(paths_csv, PATH_COLUMNS)
    sel = frame[frame["path_id"] == path_id].reset_index(drop=True)
    if sel.empty:
        known = sorted(frame["path_id"].unique())
        raise SchemaError(
            f"{paths_csv}: no rows for path_id {path_id}; "
            f"available ids {known[0]}..{known[-1]}"
        )
    return sel


def _strategy_columns(frame: pd.DataFrame) -> list:
    cols = [c for c in frame.columns if c.startswith("pi_")]
    if not cols:
        raise SchemaError("no strategy columns (pi_*) present")
    return cols


def _with_jump_breaks(frame: pd.DataFrame, column: str) -> np.ndarray:
    """Series values with NaN at jump rows, so lines break at releases."""
    vals = frame[column].to_numpy(float).copy()
    vals[(frame["phase"] == "jump").to_numpy()] = np.nan
    return vals


def render_figure_one(paths_csv, path_id: int, out) -> str:
    """Three panels for one simulated path: agent strategies, factor and
    price, and the market price of risk.  Release times are drawn with
    separate left/right markers so both sides of each discontinuity are
    visible."""
    frame = load_path_frame(paths_csv, path_id)
    pi_cols = _strategy_columns(frame)
    t = frame["t"].to_numpy(float)
    jump_rows = np.flatnonzero((frame["phase"] == "jump").to_numpy())

    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6))

    ax = axes[0]
    for col in pi_cols:
        vals = _with_jump_breaks(frame, col)
        line, = ax.plot(t, vals, lw=1.2, label=col)
        for r in jump_rows:
            ax.plot(t[r], frame[col].iloc[r - 1], marker="o", mfc="none",
                    color=line.get_color(), ms=6)
            ax.plot(t[r], frame[col].iloc[r + 1], marker="o",
                    color=line.get_color(), ms=4)
    ax.set_title("strategies")
    ax.set_xlabel("t")
    ax.legend(fontsize=7)

    ax = axes[1]
    ax.plot(t, _with_jump_breaks(frame, "X"), lw=1.0, label="factor")
    s_vals = _with_jump_breaks(frame, "S")
    line, = ax.plot(t, s_vals, lw=1.2, label="price")
    for r in jump_rows:
        ax.plot(t[r], frame["S"].iloc[r - 1], marker="o", mfc="none",
                color=line.get_color(), ms=6)
        ax.plot(t[r], frame["S"].iloc[r + 1], marker="o",
                color=line.get_color(), ms=4)
    ax.set_title("factor and price")
    ax.set_xlabel("t")
    ax.legend(fontsize=7)

    ax = axes[2]
    ax.plot(t, frame["mpr"].to_numpy(float), lw=1.2)
    ax.set_title("market price of risk")
    ax.set_xlabel("t")

    fig.suptitle(f"path {path_id}")
    fig.tight_layout()
    fig.savefig(out, **_SAVE_KW)
    plt.close(fig)
    return str(out)


def render_convergence(study_csv, out) -> str:
    """Error-versus-level curves, one line per metric, log-scale values."""
    frame = _read_csv(study_csv, STUDY_COLUMNS)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for metric, group in frame.groupby("metric"):
        levels = sorted(group["N"].unique())
        vals = [group.loc[group["N"] == n, "value"].abs().max()
                for n in levels]
        ax.plot(levels, vals, marker="o", label=metric)
    ax.set_yscale("log")
    ax.set_xlabel("refinement level N")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, **_SAVE_KW)
    plt.close(fig)
    return str(out)
