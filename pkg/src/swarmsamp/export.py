"""File outputs: delimited trajectory/metric tables, JSON summaries, PPM
heatmaps, and a JSON round-trip for raw episode logs.

All writers are bit-stable: floats are rendered with repr (shortest
round-trip), dict keys are sorted, and nothing timestamped goes into a file.
"""

from __future__ import annotations

import json
import os
from typing import Optional, Sequence

import numpy as np

from .metrics import EpisodeLog, MetricsReport, aggregate_reports

# Distinct robot colors for heatmap overlays, cycled for large teams.
ROBOT_COLORS = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212),
]

TRAJECTORY_HEADER = ["episode", "robot", "t", "x1", "x2",
                     "action", "reward", "override", "n_neighbors"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trajectories_csv(logs: Sequence[EpisodeLog], path: str):
    """One row per robot per time index. Row t=0 holds only the start
    position; row t >= 1 holds the action taken at step t-1, the reward it
    earned, whether the override chose it, and how many neighbors were in
    communication range when it was chosen."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRAJECTORY_HEADER) + "\n")
        for ep, log in enumerate(logs):
            for i in range(log.n):
                fh.write(",".join([str(ep), str(i), "0",
                                   str(int(log.positions[i, 0, 0])),
                                   str(int(log.positions[i, 0, 1])),
                                   "", "", "", ""]) + "\n")
                for t in range(1, log.horizon + 1):
                    acted = log.actions[i, t - 1] >= 0
                    fh.write(",".join([
                        str(ep), str(i), str(t),
                        str(int(log.positions[i, t, 0])),
                        str(int(log.positions[i, t, 1])),
                        str(int(log.actions[i, t - 1])) if acted else "",
                        _fmt(log.rewards[i, t - 1]) if acted else "",
                        _fmt(bool(log.overrides[i, t - 1])) if acted else "",
                        str(int(log.neighbor_counts[i, t - 1])) if acted else "",
                    ]) + "\n")


def write_metrics_csv(rows: Sequence[dict], path: str,
                      setting_cols: Sequence[str] = ()):
    """One row per episode; sweep rows carry their setting columns first."""
    header = list(setting_cols) + ["episode"] + list(MetricsReport.FIELDS)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            setting = row.get("setting", {})
            cells = [_fmt(setting.get(c)) for c in setting_cols]
            cells.append(str(row["trial"]))
            cells.extend(_fmt(v) for v in row["report"].as_row())
            fh.write(",".join(cells) + "\n")


def write_summary_json(rows: Sequence[dict], path: str,
                       setting_cols: Sequence[str] = (), extra: Optional[dict] = None):
    """Aggregate mean / std / 95% CI per metric, grouped by sweep setting."""
    groups: dict[tuple, list] = {}
    for row in rows:
        key = tuple(row.get("setting", {}).get(c) for c in setting_cols)
        groups.setdefault(key, []).append(row["report"])
    summary = []
    for key in sorted(groups, key=lambda k: tuple(-1 if v is None else v for v in k)):
        entry = {c: key[idx] for idx, c in enumerate(setting_cols)}
        entry["metrics"] = aggregate_reports(groups[key])
        summary.append(entry)
    payload = {"settings": summary}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def heatmap_rgb(map_values: np.ndarray,
                trajectories: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """Grey-scale field image with per-robot colored trajectory cells."""
    grey = np.rint(255.0 * np.clip(map_values, 0.0, 1.0)).astype(np.uint8)
    rgb = np.stack([grey, grey, grey], axis=-1)
    if trajectories:
        for i, cells in enumerate(trajectories):
            color = ROBOT_COLORS[i % len(ROBOT_COLORS)]
            for r, c in np.asarray(cells, dtype=np.int64):
                rgb[r, c] = color
    return rgb


def write_heatmap_ppm(map_values: np.ndarray, path: str,
                      trajectories: Optional[Sequence[np.ndarray]] = None):
    """Binary P6 PPM; grey intensity is round(255 * cell value)."""
    rgb = heatmap_rgb(map_values, trajectories)
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def write_training_curve_csv(curve: np.ndarray, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,mean_centralized_return,robot_std\n")
        for epoch, mean, std in curve:
            fh.write(f"{int(epoch)},{_fmt(mean)},{_fmt(std)}\n")


def write_features_csv(features: np.ndarray, path: str):
    """Debug dump: one row per (robot, t) with the raw feature vector."""
    n, horizon, d = features.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("robot,t," + ",".join(f"f{k}" for k in range(d)) + "\n")
        for i in range(n):
            for t in range(horizon):
                fh.write(f"{i},{t}," + ",".join(_fmt(v) for v in features[i, t]) + "\n")


def _log_to_dict(log: EpisodeLog) -> dict:
    return {
        "positions": log.positions.tolist(),
        "actions": log.actions.tolist(),
        "rewards": log.rewards.tolist(),
        "alive": log.alive.astype(int).tolist(),
        "neighbor_counts": log.neighbor_counts.tolist(),
        "overrides": log.overrides.astype(int).tolist(),
        "map0": log.map0.tolist(),
        "consumed_value": log.consumed_value,
        "config": log.config,
        "warnings": list(log.warnings),
        "comm_events": [list(e) for e in log.comm_events],
        "field_snapshots": [[t, values.tolist()] for t, values in log.field_snapshots],
    }


def _log_from_dict(data: dict) -> EpisodeLog:
    return EpisodeLog(
        np.array(data["positions"], dtype=np.int64),
        np.array(data["actions"], dtype=np.int64),
        np.array(data["rewards"], dtype=np.float64),
        np.array(data["alive"], dtype=bool),
        np.array(data["neighbor_counts"], dtype=np.int64),
        np.array(data["overrides"], dtype=bool),
        np.array(data["map0"], dtype=np.float64),
        data["consumed_value"],
        data.get("config", {}),
        data.get("warnings", []),
        [tuple(e) for e in data.get("comm_events", [])],
        [(t, np.array(v, dtype=np.float64)) for t, v in data.get("field_snapshots", [])],
    )


def save_episode_logs(rows: Sequence[dict], path: str):
    """Persist raw logs (with their sweep settings) for later re-export."""
    payload = [{"setting": row.get("setting", {}), "trial": row["trial"],
                "log": _log_to_dict(row["log"])} for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_episode_logs(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return [{"setting": item.get("setting", {}), "trial": item["trial"],
             "log": _log_from_dict(item["log"])} for item in payload]


def trajectory_cells(log: EpisodeLog, robot: int) -> np.ndarray:
    """Cells robot visited while alive, in time order."""
    keep = log.alive[robot, :]
    return log.positions[robot][keep]


def export_bundle(rows: Sequence[dict], out_dir: str,
                  setting_cols: Sequence[str] = (), discount: float = 0.9,
                  heatmaps: bool = True) -> list[str]:
    """Write the standard artifact set for a batch of episodes; returns the
    list of created paths."""
    os.makedirs(out_dir, exist_ok=True)
    created = []

    path = os.path.join(out_dir, "trajectories.csv")
    write_trajectories_csv([row["log"] for row in rows], path)
    created.append(path)

    path = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(rows, path, setting_cols)
    created.append(path)

    path = os.path.join(out_dir, "summary.json")
    write_summary_json(rows, path, setting_cols)
    created.append(path)

    path = os.path.join(out_dir, "episodes.json")
    save_episode_logs(rows, path)
    created.append(path)

    if heatmaps:
        for idx, row in enumerate(rows):
            log = row["log"]
            path = os.path.join(out_dir, f"heatmap_{idx:03d}.ppm")
            write_heatmap_ppm(log.map0, path,
                              [trajectory_cells(log, i) for i in range(log.n)])
            created.append(path)
    return created
