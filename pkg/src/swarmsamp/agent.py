"""Decentralized per-robot controller: observe, filter, communicate, decide.

One agent step runs the full local pipeline: advance every teammate filter
(random-walk predict + detection correct), fold in communicated trajectory
histories, recompute the reward belief over the history window, aggregate
features, query the action source, and finally let the potential-field
override preempt the chosen action when a teammate estimate is too close.
Agents never touch the world; all their knowledge flows through Observation
and the communicated histories.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import belief as bf
from .belief import HistoryBuffer, Observation
from .config import SimConfig
from .env import UNIT_OFFSETS, WorldState, feasible_mask
from .errors import ContractViolation
from .features import aggregate


@dataclass
class ActionView:
    """What an action source may look at when choosing a move."""

    features: np.ndarray
    feasible: np.ndarray
    reward_belief: np.ndarray
    position: tuple[int, int]


@dataclass
class StepInfo:
    action: int
    override: bool
    features: np.ndarray
    feasible: np.ndarray


@dataclass
class AgentState:
    agent_id: int
    position: tuple[int, int]
    shape: tuple[int, int]
    sim: SimConfig
    buffers: HistoryBuffer
    reward_hist: deque                 # oldest entry = belief from before the window
    alive: bool = True
    estimation_enabled: bool = True
    steps_taken: int = 0

    @property
    def reward_belief(self) -> np.ndarray:
        return self.reward_hist[-1]

    def teammate_estimates(self) -> dict[int, tuple[int, int]]:
        return {j: t.argmax_cell() for j, t in self.buffers.tracks.items()}


def init_agent(agent_id: int, starts: np.ndarray, prior_values: np.ndarray,
               sim: SimConfig) -> AgentState:
    """Fresh agent at episode start; initial teammate positions are known."""
    h, w = prior_values.shape
    teammate_starts = {j: tuple(starts[j]) for j in range(len(starts)) if j != agent_id}
    buffers = HistoryBuffer.create(h, w, starts[agent_id], teammate_starts, sim.history_len)
    hist = deque(maxlen=sim.history_len)
    hist.append(np.array(prior_values, dtype=np.float64))
    return AgentState(agent_id, tuple(int(v) for v in starts[agent_id]), (h, w),
                      sim, buffers, hist, estimation_enabled=sim.estimation_enabled)


def observe(world: WorldState, agent_id: int, sim: SimConfig,
            rng: np.random.Generator,
            prev_estimates: Optional[dict[int, tuple[int, int]]] = None,
            global_comm: bool = False) -> Observation:
    """Sense teammates and list communication partners.

    Within the sensing disc the true cell is missed with probability
    false_negative and every other cell fires with probability false_positive;
    when noise yields several candidate cells, the one nearest the previous
    belief peak is kept so each teammate grid holds at most one detection.
    A teammate beyond the disc can still produce a false detection. Dead
    robots stay detectable (the platform is still there) but never count as
    communication partners.
    """
    if not world.alive[agent_id]:
        raise ContractViolation(f"robot {agent_id} is dead and cannot observe")
    h, w = world.map.h, world.map.w
    pos = tuple(int(v) for v in world.positions[agent_id])
    radius = sim.sense_radius

    in_range_cells = None
    if radius > 0:
        cells = bf.disc_offsets(radius) + pos
        keep = ((cells[:, 0] >= 0) & (cells[:, 0] < h)
                & (cells[:, 1] >= 0) & (cells[:, 1] < w))
        in_range_cells = cells[keep]

    detections: dict[int, Optional[tuple[int, int]]] = {}
    neighbors = []
    for j in range(world.n):
        if j == agent_id:
            continue
        tpos = tuple(int(v) for v in world.positions[j])
        dist = math.hypot(pos[0] - tpos[0], pos[1] - tpos[1])

        candidates = []
        if radius > 0:
            visible = dist <= radius
            if visible and rng.random() >= sim.false_negative:
                candidates.append(tpos)
            if sim.false_positive > 0.0:
                pool = in_range_cells
                if visible:
                    keep = ~((pool[:, 0] == tpos[0]) & (pool[:, 1] == tpos[1]))
                    pool = pool[keep]
                k = rng.binomial(len(pool), sim.false_positive)
                if k > 0:
                    picks = rng.choice(len(pool), size=k, replace=False)
                    candidates.extend(map(tuple, pool[picks].tolist()))

        if len(candidates) > 1:
            anchor = (prev_estimates or {}).get(j, pos)
            detections[j] = min(
                candidates,
                key=lambda c: ((c[0] - anchor[0]) ** 2 + (c[1] - anchor[1]) ** 2,
                               c[0], c[1]))
        else:
            detections[j] = candidates[0] if candidates else None

        if world.alive[j]:
            if global_comm:
                neighbors.append(j)
            elif sim.comm_enabled and sim.comm_radius > 0 and dist <= sim.comm_radius:
                neighbors.append(j)

    return Observation(agent_id, pos, radius, (h, w), detections, tuple(neighbors))


def repulsive_action(position, estimates: dict[int, tuple[int, int]],
                     collision_range: float, gain: float,
                     feasible: np.ndarray, rng: np.random.Generator) -> Optional[int]:
    """Potential-field override against the closest estimated teammate.

    Active when the closest estimate is within collision_range: the repulsion
    vector gain*(1/d - 1/range)*(1/d^2)*away is quantized to the feasible
    action with the best cosine alignment (ties to the lowest index). Two
    robots on the same cell cannot be pushed apart, so that case scatters with
    a uniformly random feasible action. A non-positive range disables the
    override entirely.
    """
    if collision_range <= 0 or not estimates:
        return None
    best_j = None
    best_d2 = None
    for j in sorted(estimates):
        er, ec = estimates[j]
        d2 = (position[0] - er) ** 2 + (position[1] - ec) ** 2
        if best_d2 is None or d2 < best_d2:
            best_d2, best_j = d2, j
    d = math.sqrt(best_d2)
    if d > collision_range:
        return None
    idx = np.flatnonzero(feasible)
    if d == 0.0:
        return int(idx[rng.integers(len(idx))])
    er, ec = estimates[best_j]
    away = np.array([position[0] - er, position[1] - ec]) / d
    force = gain * (1.0 / d - 1.0 / collision_range) * (1.0 / (d * d)) * away
    scores = UNIT_OFFSETS @ force
    scores = np.where(feasible, scores, -np.inf)
    return int(np.argmax(scores))


def _refresh_reward_belief(agent: AgentState):
    """Windowed recomputation: discount the pre-window belief by the summed
    teammate mass of the window and zero out the agent's own recent cells."""
    h, w = agent.shape
    base = agent.reward_hist[0]
    mass = agent.buffers.teammate_mass(h, w)
    agent.reward_hist.append(bf.apply_consumption(base, mass, agent.buffers.own))


def reset_reward_prior(agent: AgentState, prior_values: np.ndarray):
    """Replace the belief base with a fresh prior (e.g. a low-res field
    snapshot); the next step's refresh re-applies the window's consumption."""
    agent.reward_hist.clear()
    agent.reward_hist.append(np.array(prior_values, dtype=np.float64))


def agent_step(agent: AgentState, obs: Observation,
               received: dict[int, list], controller,
               rng: np.random.Generator, mode: str = "sample") -> StepInfo:
    """Run one decision cycle and return the chosen action plus step data.

    Mutates `agent`: teammate tracks advance (or freeze when estimation is
    disabled), merges overwrite communicated windows, and the reward belief
    history slides forward. The returned StepInfo carries the training-side
    record (features, mask, override flag).
    """
    if not agent.alive:
        raise ContractViolation(f"robot {agent.agent_id} is dead")
    h, w = agent.shape
    sim = agent.sim

    # At the very first step the tracks already hold the known initial
    # positions; the teammates have not moved, so there is nothing to filter.
    first = agent.steps_taken == 0
    agent.steps_taken += 1
    if not first and agent.buffers.tracks:
        if agent.estimation_enabled:
            tracks = list(agent.buffers.tracks.items())
            stacked = np.stack([track.current for _, track in tracks])
            priors = bf.action_update(stacked)
            posts = bf.sensor_update_batch(priors, obs.in_range_mask(),
                                           [obs.detections.get(j) for j, _ in tracks],
                                           sim.false_positive, sim.false_negative)
            for idx, (_, track) in enumerate(tracks):
                track.append(posts[idx])
        else:
            for track in agent.buffers.tracks.values():
                track.freeze_step()

    for j, trajectory in sorted(received.items()):
        bf.merge_history(agent.buffers, j, trajectory)

    _refresh_reward_belief(agent)

    feats = aggregate(agent.reward_belief,
                      agent.buffers.current_teammate_mass(h, w), agent.position)
    feasible = feasible_mask(agent.position, h, w)
    view = ActionView(feats, feasible, agent.reward_belief, agent.position)
    action = controller.select(view, rng, mode)

    override = repulsive_action(agent.position, agent.teammate_estimates(),
                                sim.collision_range, sim.repulsion_gain, feasible, rng)
    if override is not None:
        action = override
    return StepInfo(action, override is not None, feats, feasible)


def record_move(agent: AgentState, new_position):
    """Append the agent's post-step position to its own trajectory."""
    agent.position = tuple(int(v) for v in new_position)
    agent.buffers.own.append(agent.position)
