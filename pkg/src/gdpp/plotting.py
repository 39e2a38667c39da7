"""Static SVG figures: scene trajectories and training curves.

Colors: ground truth black, ego plan red, neighbor predictions in magenta
shades (darker for more probable modes). Output is byte-deterministic.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scenario import ScenarioFrame  # noqa: E402

GT_COLOR = "black"
PLAN_COLOR = "red"
MAP_COLOR = "0.8"
MAGENTA_SHADES = ("#8b008b", "#c71585", "#ff00ff", "#ff77ff", "#ffb3ff")


def _save(fig, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "gdpp", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_scene(frame: ScenarioFrame, path, plan: np.ndarray | None = None,
               predictions: np.ndarray | None = None, probs: Sequence[float] | None = None) -> None:
    """Draw lanes, histories, logged futures and optional model outputs.

    ``plan`` is [N, >=2] (ego poses), ``predictions`` is [X, K, N, >=2] and
    ``probs`` orders the modes for shading.
    """
    fig, ax = plt.subplots(figsize=(6, 6))
    seen = set()
    for local in frame.maps:
        for lane in local.lanes:
            if lane.lane_id in seen:
                continue
            seen.add(lane.lane_id)
            wp = lane.waypoints
            ax.plot(wp[:, 0], wp[:, 1], color=MAP_COLOR, lw=0.8, ls="--")
            for base in (3, 6):
                ax.plot(wp[:, base], wp[:, base + 1], color=MAP_COLOR, lw=0.8)
        for cw in local.crosswalks:
            ax.plot(cw.points[:, 0], cw.points[:, 1], color=MAP_COLOR, lw=3)
    for a, agent in enumerate(frame.agents):
        hist = agent.states
        ax.plot(hist[:, 0], hist[:, 1], color="0.5", lw=1)
        fut = frame.gt_futures[a]
        if len(fut):
            ax.plot(fut[:, 0], fut[:, 1], color=GT_COLOR, lw=1.5, label="ground truth" if a == 0 else None)
        ax.plot(hist[-1, 0], hist[-1, 1], "o", color="tab:blue" if a == 0 else "0.3", ms=4)
    if predictions is not None:
        order = np.argsort(-np.asarray(probs)) if probs is not None else np.arange(len(predictions))
        for rank, mode in enumerate(order):
            color = MAGENTA_SHADES[min(rank, len(MAGENTA_SHADES) - 1)]
            for k, traj in enumerate(predictions[mode]):
                ax.plot(traj[:, 0], traj[:, 1], color=color, lw=1,
                        label=f"prediction mode {mode}" if k == 0 else None)
    if plan is not None:
        ax.plot(plan[:, 0], plan[:, 1], color=PLAN_COLOR, lw=2, label="plan")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="upper left", fontsize=7)
    _save(fig, path)


def read_csv_columns(path) -> dict[str, list[float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    out: dict[str, list[float]] = {}
    for name in rows[0]:
        try:
            out[name] = [float(r[name]) for r in rows]
        except (TypeError, ValueError):
            continue
    return out


def plot_curves(csv_path, path, x: str = "step") -> None:
    """Plot every numeric column of a log CSV against ``x`` on a log scale."""
    cols = read_csv_columns(csv_path)
    if x not in cols:
        raise ValueError(f"{csv_path}: no numeric column {x!r}")
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in cols.items():
        if name == x:
            continue
        vals = np.asarray(values)
        ax.plot(cols[x], np.where(vals > 0, vals, np.nan), label=name, lw=1)
    ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    _save(fig, path)


def default_output(path_in) -> Path:
    return Path(path_in).with_suffix(".svg")
