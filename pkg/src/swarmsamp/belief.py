"""Per-agent estimation: teammate position filters and the reward-map belief.

A teammate's position belief is a probability grid advanced by a uniform
8-neighbor random walk (the tracker knows nothing about the teammate's
policy) and corrected by a Bernoulli detection model with false-positive and
false-negative rates. Communicated trajectory histories overwrite the last
`l` grids with exact positions. The reward-map belief discounts, over the
last `l` steps, every cell a teammate probably consumed:

    new_belief = base_belief * max(0, 1 - sum over window of teammate mass)

with the agent's own visited cells forced to zero.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ContractViolation

logger = logging.getLogger(__name__)

MASS_TOL = 1e-6       # input normalization guard
NORM_TOL = 1e-9       # guaranteed after every update

_degree_cache: dict[tuple[int, int], np.ndarray] = {}
_disc_cache: dict[tuple[int, int, float], np.ndarray] = {}

_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _shift_add(out, src, dr, dc):
    h, w = out.shape[-2], out.shape[-1]
    rs_dst = slice(max(dr, 0), h + min(dr, 0))
    cs_dst = slice(max(dc, 0), w + min(dc, 0))
    rs_src = slice(max(-dr, 0), h + min(-dr, 0))
    cs_src = slice(max(-dc, 0), w + min(-dc, 0))
    out[..., rs_dst, cs_dst] += src[..., rs_src, cs_src]


def degree_grid(h: int, w: int) -> np.ndarray:
    """Number of in-bounds 8-neighbors per cell."""
    key = (h, w)
    grid = _degree_cache.get(key)
    if grid is None:
        grid = np.zeros((h, w))
        ones = np.ones((h, w))
        for dr, dc in _OFFSETS:
            _shift_add(grid, ones, dr, dc)
        _degree_cache[key] = grid
    return grid


def _check_normalized(belief: np.ndarray):
    mass = belief.sum(axis=(-2, -1))
    if np.any(np.abs(mass - 1.0) > MASS_TOL) or np.any(belief < -1e-15):
        raise ContractViolation("belief grid is not a normalized distribution")


def action_update(belief: np.ndarray) -> np.ndarray:
    """One random-walk step: each cell's mass splits evenly over its in-bounds
    8-neighbors (no self-transition). Boundary cells renormalize over the
    valid subset. Accepts stacked grids shaped (..., h, w).

    The scatter over 8 offsets is computed as a zero-padded 3x3 box sum minus
    the center, which is the same linear map with fewer passes.
    """
    belief = np.asarray(belief, dtype=np.float64)
    _check_normalized(belief)
    h, w = belief.shape[-2], belief.shape[-1]
    if h == 1 and w == 1:
        return belief.copy()   # no neighbors to move to
    share = belief / degree_grid(h, w)
    padded = np.zeros(belief.shape[:-2] + (h + 2, w + 2))
    padded[..., 1:-1, 1:-1] = share
    vert = padded[..., :-2, :] + padded[..., 1:-1, :] + padded[..., 2:, :]
    out = vert[..., :, :-2] + vert[..., :, 1:-1] + vert[..., :, 2:]
    out -= share
    out /= out.sum(axis=(-2, -1), keepdims=True)
    return out


@dataclass
class Observation:
    """What one robot senses in one step.

    `detections[j]` is the single cell where teammate j was detected, or None.
    Formally the observation is a {0,1} occupancy grid per teammate that is
    zero everywhere outside the sensing disc; with at most one detection the
    cell (or its absence) carries the same information.
    """

    observer: int
    position: tuple[int, int]
    radius: float
    shape: tuple[int, int]
    detections: dict[int, Optional[tuple[int, int]]] = dc_field(default_factory=dict)
    neighbors: tuple[int, ...] = ()

    def in_range_mask(self) -> np.ndarray:
        return disc_mask(self.shape[0], self.shape[1], self.position, self.radius)

    def occupancy_grid(self, teammate: int) -> np.ndarray:
        grid = np.zeros(self.shape, dtype=np.int8)
        cell = self.detections.get(teammate)
        if cell is not None:
            grid[cell] = 1
        return grid


def disc_mask(h: int, w: int, center, radius: float) -> np.ndarray:
    """Boolean mask of cells whose center lies within `radius` of `center`.

    A zero radius yields an empty mask: it models a sensor that is off.
    """
    if radius <= 0:
        return np.zeros((h, w), dtype=bool)
    key = (h, w, float(radius))
    big = _disc_cache.get(key)
    if big is None:
        rr, cc = np.indices((2 * h - 1, 2 * w - 1))
        big = (rr - (h - 1)) ** 2 + (cc - (w - 1)) ** 2 <= radius * radius
        _disc_cache[key] = big
    r, c = int(center[0]), int(center[1])
    return big[h - 1 - r: 2 * h - 1 - r, w - 1 - c: 2 * w - 1 - c]


_disc_offsets_cache: dict[float, np.ndarray] = {}


def disc_offsets(radius: float) -> np.ndarray:
    """(K, 2) integer offsets of the cells within `radius` of the origin."""
    key = float(radius)
    offs = _disc_offsets_cache.get(key)
    if offs is None:
        reach = int(radius)
        rr, cc = np.indices((2 * reach + 1, 2 * reach + 1))
        rr = rr - reach
        cc = cc - reach
        keep = rr * rr + cc * cc <= radius * radius
        offs = np.stack([rr[keep], cc[keep]], axis=1)
        _disc_offsets_cache[key] = offs
    return offs


def _sensor_posterior(belief, in_range, detected, p_fp, p_fn):
    """Bayes correction for one teammate grid.

    Likelihood ratios are taken against the out-of-range hypothesis, with the
    common factor (1 - p_fp)^(#observed-empty cells) divided out so p_fp = 0
    stays well defined:
        detection at d:  w(d) = 1 - p_fn, w(empty in-range) = p_fp*p_fn/(1-p_fp),
                         w(out of range) = p_fp
        no detection:    w(empty in-range) = p_fn/(1-p_fp), w(out of range) = 1
    """
    if detected is not None:
        weights = np.where(in_range, p_fp * p_fn / (1.0 - p_fp), p_fp)
        weights[detected] = 1.0 - p_fn
    else:
        weights = np.where(in_range, p_fn / (1.0 - p_fp), 1.0)
    post = belief * weights
    z = post.sum()
    if z <= 0.0:
        logger.warning("sensor update produced a zero normalizer; resetting to prior")
        return belief.copy()
    return post / z


def sensor_update(belief: np.ndarray, obs: Observation, teammate: int,
                  p_fp: float, p_fn: float) -> np.ndarray:
    """Posterior over a teammate's position given one observation grid."""
    if not (0.0 <= p_fp < 0.5 and 0.0 <= p_fn < 0.5):
        raise ContractViolation("sensor error rates must lie in [0, 0.5)")
    belief = np.asarray(belief, dtype=np.float64)
    _check_normalized(belief)
    detected = obs.detections.get(teammate)
    in_range = obs.in_range_mask()
    if not in_range.any():
        return belief.copy()   # sensor off or empty footprint: uninformative
    if detected is not None and not in_range[detected]:
        raise ContractViolation("detection reported outside the sensing disc")
    return _sensor_posterior(belief, in_range, detected, p_fp, p_fn)


def sensor_update_batch(beliefs: np.ndarray, in_range: np.ndarray,
                        detections: Sequence[Optional[tuple[int, int]]],
                        p_fp: float, p_fn: float) -> np.ndarray:
    """Vectorized form of sensor_update for stacked grids that share one
    sensing footprint; `detections[k]` is grid k's detected cell or None.
    Rows whose posterior normalizer vanishes reset to their prior.
    """
    if not in_range.any():
        return beliefs.copy()
    no_det = np.where(in_range, p_fn / (1.0 - p_fp), 1.0)
    det_base = np.where(in_range, p_fp * p_fn / (1.0 - p_fp), p_fp)
    weights = np.empty_like(beliefs)
    for k, det in enumerate(detections):
        if det is None:
            weights[k] = no_det
        else:
            weights[k] = det_base
            weights[k][det] = 1.0 - p_fn
    post = beliefs * weights
    z = post.sum(axis=(1, 2))
    bad = z <= 0.0
    if bad.any():
        logger.warning("sensor update produced a zero normalizer; resetting to prior")
        z = np.where(bad, 1.0, z)
    post /= z[:, None, None]
    post[bad] = beliefs[bad]
    return post


def point_mass(h: int, w: int, cell) -> np.ndarray:
    grid = np.zeros((h, w))
    grid[int(cell[0]), int(cell[1])] = 1.0
    return grid


Entry = Union[np.ndarray, tuple[int, int]]


class TeammateTrack:
    """Rolling window of one teammate's belief grids plus their running sum.

    Entries are dense grids or bare (r, c) cells for exact (communicated)
    positions; keeping cells sparse makes the reward-belief window sum an
    O(h*w) update per step instead of O(l*h*w).
    """

    def __init__(self, h: int, w: int, init_cell, history_len: int):
        self.h, self.w = h, w
        self.maxlen = history_len
        self.entries: deque[Entry] = deque(maxlen=history_len)
        self.window_sum = np.zeros((h, w))
        self.current = point_mass(h, w, init_cell)
        self._push(tuple(int(v) for v in init_cell))

    def _add(self, entry: Entry, sign: float):
        if isinstance(entry, tuple):
            self.window_sum[entry] += sign
        else:
            if sign > 0:
                self.window_sum += entry
            else:
                self.window_sum -= entry

    def _push(self, entry: Entry):
        if len(self.entries) == self.maxlen:
            self._add(self.entries[0], -1.0)
        self.entries.append(entry)
        self._add(entry, +1.0)

    def append(self, belief: np.ndarray):
        self._push(belief)
        self.current = belief

    def freeze_step(self):
        """Carry the current belief forward unchanged (estimation disabled)."""
        last = self.entries[-1]
        self._push(last)

    def merge(self, cells: Sequence[tuple[int, int]]):
        """Overwrite the most recent entries with communicated exact positions.

        Entries that already hold the same exact cell (the common case under
        steady communication) are left untouched, so a merge usually costs one
        dense subtraction for the step's freshly filtered grid.
        """
        cells = [c if type(c) is tuple else (int(c[0]), int(c[1])) for c in cells]
        if len(cells) > self.maxlen:
            logger.warning("communicated trajectory longer than history window; truncating")
            cells = cells[-self.maxlen:]
        count = min(len(cells), len(self.entries))
        replaced = [self.entries.pop() for _ in range(count)][::-1]
        for old, new in zip(replaced, cells[len(cells) - count:]):
            if not (isinstance(old, tuple) and old == new):
                self._add(old, -1.0)
                self.window_sum[new] += 1.0
            self.entries.append(new)
        # communicated history older than anything we held extends the window
        for cell in reversed(cells[:len(cells) - count]):
            self.entries.appendleft(cell)
            self.window_sum[cell] += 1.0
        self.current = point_mass(self.h, self.w, cells[-1])

    def argmax_cell(self) -> tuple[int, int]:
        last = self.entries[-1]
        if isinstance(last, tuple):
            return last
        idx = int(np.argmax(last))
        return (idx // self.w, idx % self.w)


@dataclass
class HistoryBuffer:
    """Everything one agent remembers: its own trajectory and teammate tracks."""

    own: deque
    tracks: dict[int, TeammateTrack]

    @classmethod
    def create(cls, h, w, own_start, teammate_starts: dict, history_len: int):
        own = deque(maxlen=history_len)
        own.append((int(own_start[0]), int(own_start[1])))
        tracks = {j: TeammateTrack(h, w, cell, history_len)
                  for j, cell in sorted(teammate_starts.items())}
        return cls(own, tracks)

    def teammate_mass(self, h, w) -> np.ndarray:
        """Sum over teammates of the window sums (used by the reward belief)."""
        total = np.zeros((h, w))
        for track in self.tracks.values():
            total += track.window_sum
        return total

    def current_teammate_mass(self, h, w) -> np.ndarray:
        total = np.zeros((h, w))
        for track in self.tracks.values():
            total += track.current
        return total


def merge_history(buffers: HistoryBuffer, neighbor: int,
                  trajectory: Sequence[tuple[int, int]]) -> HistoryBuffer:
    """Fold a neighbor's communicated trajectory into its track (in place)."""
    if neighbor not in buffers.tracks:
        raise ContractViolation(f"unknown neighbor id {neighbor}")
    buffers.tracks[neighbor].merge(trajectory)
    return buffers


def apply_consumption(base: np.ndarray, teammate_mass: np.ndarray,
                      own_cells) -> np.ndarray:
    """Discount `base` by the windowed teammate mass and zero own visits."""
    out = base * np.clip(1.0 - teammate_mass, 0.0, None)
    for cell in own_cells:
        out[int(cell[0]), int(cell[1])] = 0.0
    return out


def update_reward_belief(prev: np.ndarray,
                         teammate_grids: Sequence[Sequence[np.ndarray]],
                         own_positions: Sequence[tuple[int, int]]) -> np.ndarray:
    """Reference form of the reward-belief update over an explicit window.

    `teammate_grids` holds, per teammate, the belief grids for the last `l`
    steps; `prev` is the reward belief from before that window.
    """
    prev = np.asarray(prev, dtype=np.float64)
    total = np.zeros_like(prev)
    for grids in teammate_grids:
        for grid in grids:
            grid = np.asarray(grid, dtype=np.float64)
            if grid.shape != prev.shape:
                raise ContractViolation("teammate grid shape mismatch")
            total += grid
    return apply_consumption(prev, total, own_positions)
