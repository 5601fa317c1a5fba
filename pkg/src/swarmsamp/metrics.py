"""Evaluation metrics computed from completed episode logs.

All metrics are pure functions of the log, so recomputation is exact; dead
robots contribute whatever partial trajectory they managed before failing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation, MetricUndefined


@dataclass
class EpisodeLog:
    """Everything one episode produced.

    positions[i, t] is robot i's cell at time t (t = 0 is the start);
    actions/rewards/overrides/neighbor_counts cover the H steps, with -1
    marking steps a dead robot did not take. map0 is the pristine field
    before start-cell consumption.
    """

    positions: np.ndarray          # (n, H+1, 2) int
    actions: np.ndarray            # (n, H) int
    rewards: np.ndarray            # (n, H) float
    alive: np.ndarray              # (n, H+1) bool, status entering each step
    neighbor_counts: np.ndarray    # (n, H) int
    overrides: np.ndarray          # (n, H) bool
    map0: np.ndarray               # (h, w) float
    consumed_value: float
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    comm_events: list = field(default_factory=list)     # (receiver, sender, t)
    field_snapshots: list = field(default_factory=list)  # (t, values) for dynamic fields

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]


def discounted_accumulated_reward(log: EpisodeLog, discount: float):
    """Per-robot discounted sums D_i = sum_t discount^t * R_{i,t} (t from 1);
    returns (mean over robots, population std over robots)."""
    horizon = log.horizon
    weights = discount ** np.arange(1, horizon + 1)
    per_robot = log.rewards @ weights if horizon else np.zeros(log.n)
    return float(per_robot.mean()), float(per_robot.std())


def _visited_cells(log: EpisodeLog, i: int) -> set:
    """Unique cells of robot i's trajectory while it was alive."""
    cells = set()
    for t in range(log.positions.shape[1]):
        if log.alive[i, t]:
            cells.add((int(log.positions[i, t, 0]), int(log.positions[i, t, 1])))
    return cells


def _steps_traveled(log: EpisodeLog, i: int) -> int:
    return int(log.alive[i, 1:].sum())


def pairwise_overlap(log: EpisodeLog):
    """Average over robot pairs of shared unique trajectory cells, plus that
    average as a percentage of the (mean) steps traveled per robot."""
    n = log.n
    if n < 2:
        raise MetricUndefined("pairwise overlap needs at least 2 robots")
    cells = [_visited_cells(log, i) for i in range(n)]
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += len(cells[i] & cells[j])
    average = total / (n * (n - 1) / 2)
    steps = np.mean([_steps_traveled(log, i) for i in range(n)])
    percentage = 100.0 * average / steps if steps > 0 else 0.0
    return float(average), float(percentage)


def coverage(log: EpisodeLog) -> float:
    """Collected positive reward over the best reward reachable in the budget.

    The budget bound is min(total map mass, mass of the n*H highest cells);
    no plan can beat either, so the ratio never exceeds 1 by construction and
    is clipped against float noise. An empty map counts as fully covered.
    """
    collected = float(np.clip(log.rewards, 0.0, None).sum())
    mass = np.clip(log.map0, 0.0, None).ravel()
    budget_cells = min(log.n * log.horizon, mass.size)
    top = np.sort(mass)[::-1][:budget_cells].sum()
    denom = min(mass.sum(), top)
    if denom <= 0:
        return 1.0
    return float(np.clip(collected / denom, 0.0, 1.0))


def communication_volume(log: EpisodeLog) -> float:
    """Mean over robots of their total neighbor-link count across the run."""
    return float(log.neighbor_counts.sum() / log.n)


@dataclass
class MetricsReport:
    discounted_reward_mean: float
    discounted_reward_std: float
    avg_pairwise_overlap: Optional[float]
    avg_overlap_percent: Optional[float]
    coverage: float
    comm_volume: float

    FIELDS = ("discounted_reward_mean", "discounted_reward_std",
              "avg_pairwise_overlap", "avg_overlap_percent",
              "coverage", "comm_volume")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def compute_report(log: EpisodeLog, discount: float) -> MetricsReport:
    mean, std = discounted_accumulated_reward(log, discount)
    if log.n >= 2:
        overlap, pct = pairwise_overlap(log)
    else:
        overlap, pct = None, None
    return MetricsReport(mean, std, overlap, pct, coverage(log),
                         communication_volume(log))


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Per-metric mean, sample std, and 95% confidence half-width over trials."""
    if not reports:
        raise ContractViolation("no reports to aggregate")
    out = {}
    for name in MetricsReport.FIELDS:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not vals:
            continue
        arr = np.array(vals, dtype=np.float64)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out[name] = {
            "mean": float(arr.mean()),
            "std": std,
            "ci95": 1.96 * std / np.sqrt(len(arr)),
            "trials": len(arr),
        }
    return out
