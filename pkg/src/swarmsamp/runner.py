"""Episode execution and the experiment harness.

The engine wires the modules together, one simulation step at a time:
observe (all robots, snapshotted) -> agent_step (all robots) -> world step.
Failure injection, dynamic fields, and periodic prior refreshes hook into the
same loop, so every experiment kind shares one code path. Episodes are fully
deterministic functions of their seed key: each robot owns an RNG stream
derived from it, and stream consumption order is fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import agent as ag
from . import env
from .config import TrainConfig
from .env import GaussianFieldSpec, RewardMap, WorldState
from .errors import ContractViolation
from .features import BLOCKS_PER_SIDE, LEVELS, feature_length
from .metrics import EpisodeLog, MetricsReport, compute_report
from .policy import PolicyController, PolicyParams, sample_action

logger = logging.getLogger(__name__)

_SALT_ROBOT = 7
_SALT_STARTS = 11
_SALT_FIELD = 31
_SALT_TRIAL = 41


@dataclass
class FailureSpec:
    """What breaks and when: scenario 2 kills communication at `step`,
    scenario 3 additionally freezes the position filters, scenario 4 grants
    global communication for the whole run (the benchmark), and `kill` lists
    robots that die outright at `step`."""

    scenario: int = 1
    step: int = 0
    kill: tuple[int, ...] = ()


@dataclass
class BaselinePolicy:
    """Stand-in action sources for comparisons: 'random' or 'greedy'."""

    kind: str = "greedy"


class RandomController:
    def select(self, view, rng, mode):
        dist = np.where(view.feasible, 1.0, 0.0)
        return sample_action(dist / dist.sum(), rng)


class GreedyController:
    """Head for the highest-valued reward-belief cell within the coarsest
    feature window; ties resolve toward the nearest cell, then row-major."""

    WINDOW_HALF = (BLOCKS_PER_SIDE * 3 ** (LEVELS - 1)) // 2

    def select(self, view, rng, mode):
        r, c = view.position
        h, w = view.reward_belief.shape
        r0, r1 = max(r - self.WINDOW_HALF, 0), min(r + self.WINDOW_HALF + 1, h)
        c0, c1 = max(c - self.WINDOW_HALF, 0), min(c + self.WINDOW_HALF + 1, w)
        window = view.reward_belief[r0:r1, c0:c1]
        peak = window.max()
        cand = np.argwhere(window == peak)
        d2 = (cand[:, 0] + r0 - r) ** 2 + (cand[:, 1] + c0 - c) ** 2
        order = np.lexsort((cand[:, 1], cand[:, 0], d2))
        target = cand[order[0]] + (r0, c0)

        moves = np.array([r, c]) + env.ACTION_OFFSETS
        dist = np.hypot(moves[:, 0] - target[0], moves[:, 1] - target[1])
        dist = np.where(view.feasible, dist, np.inf)
        return int(np.argmin(dist))


def make_controller(policy) -> object:
    if isinstance(policy, PolicyParams):
        if policy.d != feature_length():
            raise ContractViolation(
                f"policy input size {policy.d} != feature length {feature_length()}")
        return PolicyController(policy)
    if isinstance(policy, BaselinePolicy):
        if policy.kind == "random":
            return RandomController()
        if policy.kind == "greedy":
            return GreedyController()
        raise ContractViolation(f"unknown baseline kind {policy.kind!r}")
    if hasattr(policy, "select"):
        return policy
    raise ContractViolation(f"not an action source: {policy!r}")


@dataclass
class TrainData:
    """Per-episode training record, one slot per (robot, step)."""

    features: np.ndarray
    feasible: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    overrides: np.ndarray


def _seed_key(seed) -> tuple:
    return (int(seed),) if np.isscalar(seed) else tuple(int(s) for s in seed)


def corner_starts(n: int, h: int, w: int) -> np.ndarray:
    """Distinct cells row-major from the upper-left corner."""
    if n > h * w:
        raise ContractViolation("more robots than cells")
    return np.array([(i // w, i % w) for i in range(n)], dtype=np.int64)


def downsample_prior(values: np.ndarray) -> np.ndarray:
    """Factor-2 block mean then nearest-neighbor upsample back to full size;
    models the low-resolution field snapshot an outside observer provides."""
    h, w = values.shape
    r_idx = np.arange(0, h, 2)
    c_idx = np.arange(0, w, 2)
    sums = np.add.reduceat(np.add.reduceat(values, r_idx, axis=0), c_idx, axis=1)
    r_cnt = np.diff(np.append(r_idx, h))
    c_cnt = np.diff(np.append(c_idx, w))
    small = sums / np.outer(r_cnt, c_cnt)
    return np.repeat(np.repeat(small, 2, axis=0), 2, axis=1)[:h, :w]


def run_episode(cfg: TrainConfig, policy, reward_map: RewardMap,
                failure: Optional[FailureSpec] = None, seed=0, *,
                starts: Optional[np.ndarray] = None, mode: str = "argmax",
                field_spec: Optional[GaussianFieldSpec] = None,
                field_seed=None, refresh_period: Optional[int] = None,
                collect: bool = False):
    """Execute one episode; returns EpisodeLog (plus TrainData when collect).

    The world and every agent are rebuilt from scratch, so identical inputs
    reproduce identical logs byte for byte.
    """
    cfg.validate()
    controller = make_controller(policy)
    key = _seed_key(seed)
    n, horizon = cfg.robots, cfg.horizon
    h, w = reward_map.h, reward_map.w
    sim = replace(cfg.sim)

    if starts is None:
        rng = np.random.default_rng([*key, _SALT_STARTS])
        flat = rng.choice(h * w, size=n, replace=False)
        starts = np.stack([flat // w, flat % w], axis=1).astype(np.int64)
    else:
        starts = np.array(starts, dtype=np.int64)
        if starts.shape != (n, 2):
            raise ContractViolation(f"starts must be ({n}, 2)")

    rngs = [np.random.default_rng([*key, _SALT_ROBOT, i]) for i in range(n)]
    world = env.make_world(reward_map, starts)
    consumed = np.zeros((h, w), dtype=bool)
    consumed[starts[:, 0], starts[:, 1]] = True
    agents = [ag.init_agent(i, starts, reward_map.values, sim) for i in range(n)]

    positions = np.zeros((n, horizon + 1, 2), dtype=np.int64)
    positions[:, 0] = starts
    actions_log = np.full((n, horizon), -1, dtype=np.int64)
    rewards_log = np.zeros((n, horizon))
    alive_log = np.ones((n, horizon + 1), dtype=bool)
    neigh_log = np.zeros((n, horizon), dtype=np.int64)
    override_log = np.zeros((n, horizon), dtype=bool)
    warnings: list[str] = []
    comm_events: list[tuple[int, int, int]] = []
    field_snapshots: list[tuple[int, np.ndarray]] = []

    feats_log = masks_log = None
    if collect:
        feats_log = np.zeros((n, horizon, feature_length()))
        masks_log = np.zeros((n, horizon, env.N_ACTIONS), dtype=bool)

    global_comm = failure is not None and failure.scenario == 4

    for t in range(horizon):
        if failure is not None and t == failure.step:
            if failure.scenario == 2:
                sim.comm_enabled = False
            elif failure.scenario == 3:
                sim.comm_enabled = False
                for a in agents:
                    a.estimation_enabled = False
            for i in failure.kill:
                world.alive[i] = False
                agents[i].alive = False

        if field_spec is not None and field_spec.drift > 0 and t > 0:
            fseed = field_seed if field_seed is not None else [*key, _SALT_FIELD]
            evolved = env.evolve_field(world.map, field_spec, fseed, t)
            evolved.values[consumed] = evolved.consumed_value
            world.map = evolved

        if refresh_period and t > 0 and t % refresh_period == 0:
            snapshot = downsample_prior(np.clip(world.map.values, 0.0, None))
            for a in agents:
                if a.alive:
                    ag.reset_reward_prior(a, snapshot)
            field_snapshots.append((t, world.map.values.copy()))

        observations: list[Optional[ag.Observation]] = [None] * n
        for i in range(n):
            if world.alive[i]:
                observations[i] = ag.observe(world, i, sim, rngs[i],
                                             agents[i].teammate_estimates(),
                                             global_comm=global_comm)

        joint: list[Optional[int]] = [None] * n
        for i in range(n):
            obs = observations[i]
            if obs is None:
                continue
            neigh_log[i, t] = len(obs.neighbors)
            received = {j: list(agents[j].buffers.own) for j in obs.neighbors}
            for j in obs.neighbors:
                comm_events.append((i, j, t))
            info = ag.agent_step(agents[i], obs, received, controller, rngs[i], mode)
            joint[i] = info.action
            actions_log[i, t] = info.action
            override_log[i, t] = info.override
            if collect:
                feats_log[i, t] = info.features
                masks_log[i, t] = info.feasible

        world, rewards, step_warnings = env.step(world, joint, sim.collision_penalty)
        warnings.extend(step_warnings)
        rewards_log[:, t] = rewards
        positions[:, t + 1] = world.positions
        alive_log[:, t + 1] = world.alive
        for i in range(n):
            if world.alive[i]:
                consumed[world.positions[i, 0], world.positions[i, 1]] = True
                ag.record_move(agents[i], world.positions[i])

    snapshot_cfg = {
        "robots": n, "horizon": horizon, "discount": cfg.discount,
        "sim": asdict(sim), "mode": mode, "seed": list(key),
        "failure": asdict(failure) if failure else None,
    }
    log = EpisodeLog(positions, actions_log, rewards_log, alive_log, neigh_log,
                     override_log, reward_map.values.copy(), reward_map.consumed_value,
                     snapshot_cfg, warnings, comm_events, field_snapshots)
    if collect:
        return log, TrainData(feats_log, masks_log, actions_log.copy(),
                              rewards_log.copy(), override_log.copy())
    return log


def training_rollout(cfg: TrainConfig, params: PolicyParams, reward_map: RewardMap,
                     starts: np.ndarray, seed_key) -> TrainData:
    """One sampled-action episode for the trainer (fixed starts, shared map)."""
    _, data = run_episode(cfg, params, reward_map, None, seed_key,
                          starts=starts, mode="sample", collect=True)
    return data


def evaluate(cfg: TrainConfig, policy, reward_map: RewardMap, trials: int, seed=0,
             *, starts: Optional[np.ndarray] = None, mode: str = "argmax",
             failure: Optional[FailureSpec] = None):
    """Run `trials` independent episodes; returns (logs, reports)."""
    key = _seed_key(seed)
    logs, reports = [], []
    for trial in range(trials):
        log = run_episode(cfg, policy, reward_map, failure,
                          [*key, _SALT_TRIAL, trial], starts=starts, mode=mode)
        logs.append(log)
        reports.append(compute_report(log, cfg.discount))
    return logs, reports


def resample_map(reward_map: RewardMap, factor: float) -> RewardMap:
    """Bilinear resample on cell centers by `factor` per side (ceil), then
    re-normalize the peak to 1."""
    h, w = reward_map.h, reward_map.w
    nh, nw = math.ceil(h * factor), math.ceil(w * factor)
    src_r = np.linspace(0, h - 1, nh) if nh > 1 else np.zeros(1)
    src_c = np.linspace(0, w - 1, nw) if nw > 1 else np.zeros(1)
    r0 = np.clip(np.floor(src_r).astype(int), 0, h - 2) if h > 1 else np.zeros(nh, int)
    c0 = np.clip(np.floor(src_c).astype(int), 0, w - 2) if w > 1 else np.zeros(nw, int)
    fr = (src_r - r0) if h > 1 else np.zeros(nh)
    fc = (src_c - c0) if w > 1 else np.zeros(nw)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    v = reward_map.values
    top = v[np.ix_(r0, c0)] * (1 - fc) + v[np.ix_(r0, c1)] * fc
    bot = v[np.ix_(r1, c0)] * (1 - fc) + v[np.ix_(r1, c1)] * fc
    out = top * (1 - fr[:, None]) + bot * fr[:, None]
    peak = out.max()
    if peak > 0:
        out /= peak
    return RewardMap(out, reward_map.consumed_value)


def team_size_for_map(base_side: int, n: int, n_train: int) -> int:
    """Map side that keeps robot density constant when the team scales."""
    return math.ceil(base_side * math.sqrt(n / n_train))


def sweep_team_size(cfg: TrainConfig, policy, base_map: RewardMap, trials: int,
                    team_sizes: Sequence[int], seed=0, mode: str = "argmax"):
    """Scale the team and the map together; robots start in the upper-left
    corner so every size faces the same deployment."""
    key = _seed_key(seed)
    rows = []
    for n in team_sizes:
        factor = math.sqrt(n / cfg.robots)
        scaled = resample_map(base_map, factor)
        sized_cfg = replace(cfg, robots=n, sim=replace(cfg.sim))
        starts = corner_starts(n, scaled.h, scaled.w)
        logs, reports = evaluate(sized_cfg, policy, scaled, trials,
                                 [*key, n], starts=starts, mode=mode)
        for trial, (log, report) in enumerate(zip(logs, reports)):
            rows.append({"setting": {"team_size": n, "map_side": scaled.h},
                         "trial": trial, "log": log, "report": report})
    return rows


def max_distance(h: int, w: int) -> float:
    """Largest distance between two cell centers in the region."""
    return math.hypot(h - 1, w - 1)


def sweep_comm_radius(cfg: TrainConfig, policy, reward_map: RewardMap, trials: int,
                      percents: Sequence[float], seed=0, mode: str = "argmax"):
    """Vary the sensing/communication radius as a percentage of the region
    diagonal; both radii move together."""
    key = _seed_key(seed)
    dmax = max_distance(reward_map.h, reward_map.w)
    starts = corner_starts(cfg.robots, reward_map.h, reward_map.w)
    rows = []
    for p_idx, pct in enumerate(percents):
        radius = float(math.floor(pct / 100.0 * dmax + 0.5))
        sim = replace(cfg.sim, sense_radius=radius, comm_radius=radius,
                      collision_range=min(cfg.sim.collision_range, radius))
        pct_cfg = replace(cfg, sim=sim)
        logs, reports = evaluate(pct_cfg, policy, reward_map, trials,
                                 [*key, p_idx], starts=starts, mode=mode)
        for trial, (log, report) in enumerate(zip(logs, reports)):
            rows.append({"setting": {"radius_percent": pct, "radius_cells": radius},
                         "trial": trial, "log": log, "report": report})
    return rows


def run_failure_suite(cfg: TrainConfig, policy, reward_map: RewardMap, trials: int,
                      failure_step: int, seed=0, mode: str = "argmax",
                      kill: tuple[int, ...] = (), scenarios=(1, 2, 3, 4)):
    """The four communication-failure scenarios (optionally with robot kills),
    with matched seeds across scenarios so rows compare like for like."""
    key = _seed_key(seed)
    starts = corner_starts(cfg.robots, reward_map.h, reward_map.w)
    rows = []
    for scenario in scenarios:
        failure = FailureSpec(scenario, failure_step, tuple(kill))
        logs, reports = evaluate(cfg, policy, reward_map, trials, key,
                                 starts=starts, mode=mode, failure=failure)
        for trial, (log, report) in enumerate(zip(logs, reports)):
            rows.append({"setting": {"scenario": scenario,
                                     "killed": len(kill)},
                         "trial": trial, "log": log, "report": report})
    return rows


def run_online_adaptation(cfg: TrainConfig, policy, field_spec: GaussianFieldSpec,
                          h: int, w: int, refresh_period: int, seed=0,
                          mode: str = "argmax", trials: int = 1):
    """Dynamic-field episodes with a periodic low-resolution prior refresh."""
    key = _seed_key(seed)
    fseed = [*key, _SALT_FIELD]
    base = env.generate_gaussian_map(field_spec, h, w, seed=fseed,
                                     consumed_value=cfg.sim.consumed_value)
    rows = []
    for trial in range(trials):
        log = run_episode(cfg, policy, base, None, [*key, _SALT_TRIAL, trial],
                          mode=mode, field_spec=field_spec, field_seed=fseed,
                          refresh_period=refresh_period)
        rows.append({"setting": {"refresh_period": refresh_period,
                                 "drift": field_spec.drift},
                     "trial": trial, "log": log,
                     "report": compute_report(log, cfg.discount)})
    return rows
