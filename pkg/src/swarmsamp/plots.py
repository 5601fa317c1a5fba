"""Matplotlib figure rendering for the report path.

Every export directory gets figures next to its delimited files: trajectory
overlays on the field, the training curve, and per-sweep metric plots. The
Agg backend keeps rendering headless, and PNG metadata is pinned so repeated
runs produce identical bytes.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .export import ROBOT_COLORS, trajectory_cells
from .metrics import EpisodeLog, MetricsReport, aggregate_reports

_SAVE_KW = dict(dpi=120, metadata={"Software": "swarmsamp"})


def _color(i: int):
    r, g, b = ROBOT_COLORS[i % len(ROBOT_COLORS)]
    return (r / 255.0, g / 255.0, b / 255.0)


def trajectory_figure(log: EpisodeLog, path: str, title: Optional[str] = None):
    """Field heatmap with one path per robot; circles mark deployment cells
    and triangles the stop cells."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(np.clip(log.map0, 0.0, None), cmap="viridis", origin="upper",
              interpolation="nearest")
    for i in range(log.n):
        cells = trajectory_cells(log, i)
        color = _color(i)
        ax.plot(cells[:, 1], cells[:, 0], "-", color=color, linewidth=1.2,
                label=f"robot {i}")
        ax.plot(cells[0, 1], cells[0, 0], "o", color=color, markersize=6,
                markeredgecolor="white")
        ax.plot(cells[-1, 1], cells[-1, 0], "^", color=color, markersize=7,
                markeredgecolor="white")
    ax.set_xlabel("x2")
    ax.set_ylabel("x1")
    if title:
        ax.set_title(title)
    if log.n <= 10:
        ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def training_curve_figure(curve: np.ndarray, path: str):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curve[:, 0], curve[:, 1], color="tab:blue", linewidth=1.5,
            label="mean centralized return")
    ax.fill_between(curve[:, 0], curve[:, 1] - curve[:, 2], curve[:, 1] + curve[:, 2],
                    color="tab:blue", alpha=0.2, label="robot std")
    ax.set_xlabel("epoch")
    ax.set_ylabel("centralized return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _grouped(rows: Sequence[dict], setting_col: str):
    groups: dict = {}
    for row in rows:
        groups.setdefault(row["setting"][setting_col], []).append(row["report"])
    xs = sorted(groups)
    aggs = [aggregate_reports(groups[x]) for x in xs]
    return xs, aggs


def _metric_series(aggs, name):
    means = np.array([a[name]["mean"] for a in aggs])
    cis = np.array([a[name]["ci95"] for a in aggs])
    return means, cis


def sweep_figure(rows: Sequence[dict], setting_col: str, metric_names: Sequence[str],
                 path: str, xlabel: Optional[str] = None):
    """One panel per metric: mean with 95% confidence bars against the swept
    setting."""
    xs, aggs = _grouped(rows, setting_col)
    fig, axes = plt.subplots(1, len(metric_names),
                             figsize=(4 * len(metric_names), 3.5), squeeze=False)
    for ax, name in zip(axes[0], metric_names):
        means, cis = _metric_series(aggs, name)
        ax.errorbar(xs, means, yerr=cis, fmt="o-", capsize=3, color="tab:blue")
        ax.set_xlabel(xlabel or setting_col)
        ax.set_ylabel(name.replace("_", " "))
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def failure_figure(rows: Sequence[dict], path: str):
    """Final discounted reward and overlap percentage per failure scenario."""
    labels = {1: "no failure", 2: "comm out", 3: "comm+filter out", 4: "global comm"}
    xs, aggs = _grouped(rows, "scenario")
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, name in zip(axes, ("discounted_reward_mean", "avg_overlap_percent")):
        means, cis = _metric_series(aggs, name)
        ax.bar([labels.get(x, str(x)) for x in xs], means, yerr=cis, capsize=4,
               color="tab:blue", alpha=0.8)
        ax.set_ylabel(name.replace("_", " "))
        ax.tick_params(axis="x", labelrotation=20)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_report_figures(rows: Sequence[dict], out_dir: str, kind: str,
                          max_trajectory_figures: int = 4) -> list[str]:
    """Standard figure set for an export directory; returns created paths."""
    os.makedirs(out_dir, exist_ok=True)
    created = []
    for idx, row in enumerate(rows[:max_trajectory_figures]):
        path = os.path.join(out_dir, f"trajectories_{idx:03d}.png")
        setting = ", ".join(f"{k}={v}" for k, v in row.get("setting", {}).items())
        trajectory_figure(row["log"], path, title=setting or None)
        created.append(path)

    if kind == "sweep-comm":
        path = os.path.join(out_dir, "comm_radius_metrics.png")
        sweep_figure(rows, "radius_percent",
                     ("discounted_reward_mean", "avg_pairwise_overlap", "comm_volume"),
                     path, xlabel="communication radius (% of diagonal)")
        created.append(path)
    elif kind == "sweep-team":
        path = os.path.join(out_dir, "team_size_metrics.png")
        sweep_figure(rows, "team_size",
                     ("discounted_reward_std", "coverage"),
                     path, xlabel="team size")
        created.append(path)
    elif kind == "failure":
        path = os.path.join(out_dir, "failure_metrics.png")
        failure_figure(rows, path)
        created.append(path)
    return created
