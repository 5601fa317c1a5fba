"""Ground-truth grid world: reward field, robot motion, and consumption.

Cells are addressed (row, col); arrays are indexed [row, col]. Robots move on
the 8-connected grid and collect the value of every cell they enter; a visited
cell is overwritten with a configurable negative sentinel so revisits cost
rather than pay. When several robots enter one cell at the same step, the
cell's value is split evenly and each of them takes the collision penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, MapFormatError

# 8-connected action offsets in fixed order: row-major over (dr, dc) with
# (0, 0) excluded. The ordering is part of the checkpoint contract.
ACTION_OFFSETS = np.array(
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    dtype=np.int64,
)
N_ACTIONS = 8
UNIT_OFFSETS = ACTION_OFFSETS / np.linalg.norm(ACTION_OFFSETS, axis=1, keepdims=True)

# RNG stream salts; never reuse across purposes.
_SALT_MEANS = 101
_SALT_DRIFT = 202


def feasible_mask(pos, h: int, w: int) -> np.ndarray:
    """Boolean mask over the 8 actions that keep a robot at `pos` on the grid."""
    r, c = int(pos[0]), int(pos[1])
    nr = r + ACTION_OFFSETS[:, 0]
    nc = c + ACTION_OFFSETS[:, 1]
    return (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)


@dataclass
class RewardMap:
    """Per-cell reward values plus the sentinel written into consumed cells."""

    values: np.ndarray
    consumed_value: float = -0.1

    def __post_init__(self):
        # Takes ownership of an already-float64 buffer without copying.
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ContractViolation("reward map must be a non-empty 2-D array")
        if self.consumed_value >= 0:
            raise ContractViolation("consumed_value must be negative")

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "RewardMap":
        return RewardMap(self.values.copy(), self.consumed_value)

    def remaining_mass(self) -> float:
        """Sum of collectable (non-negative) value still on the map."""
        return float(np.clip(self.values, 0.0, None).sum())


@dataclass
class GaussianComponent:
    mean: Optional[tuple[float, float]]   # None requests a seeded random mean
    cov: np.ndarray                        # 2x2 SPD
    weight: float

    def __post_init__(self):
        self.cov = np.array(self.cov, dtype=np.float64)
        if self.cov.shape != (2, 2):
            raise ContractViolation("covariance must be 2x2")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ContractViolation("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(self.cov) <= 0):
            raise ContractViolation("covariance must be positive definite")
        if self.weight <= 0:
            raise ContractViolation("component weight must be positive")


@dataclass
class GaussianFieldSpec:
    components: list[GaussianComponent] = field(default_factory=list)
    drift: float = 0.0                     # per-step random-walk magnitude for the means

    def __post_init__(self):
        if self.drift < 0:
            raise ContractViolation("drift must be non-negative")


def field_spec_from_config(components, drift: float = 0.0) -> GaussianFieldSpec:
    """Build a GaussianFieldSpec from config tuples ((mr, mc)|None, (rr, rc, cc), w)."""
    comps = []
    for mean, (rr, rc, cc), weight in components:
        comps.append(GaussianComponent(mean, np.array([[rr, rc], [rc, cc]]), weight))
    return GaussianFieldSpec(comps, drift)


def _seed_list(seed) -> list[int]:
    return [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]


def _resolved_means(spec: GaussianFieldSpec, h: int, w: int, seed) -> list[np.ndarray]:
    """Concrete component means; random ones are drawn from the seeded stream."""
    rng = None
    means = []
    for comp in spec.components:
        if comp.mean is None:
            if rng is None:
                rng = np.random.default_rng([*_seed_list(seed), _SALT_MEANS])
            means.append(np.array([rng.uniform(0, h - 1), rng.uniform(0, w - 1)]))
        else:
            means.append(np.asarray(comp.mean, dtype=np.float64))
    return means


def _mixture_values(spec, means, h, w) -> np.ndarray:
    rows, cols = np.indices((h, w), dtype=np.float64)
    values = np.zeros((h, w))
    for comp, mean in zip(spec.components, means):
        inv = np.linalg.inv(comp.cov)
        det = np.linalg.det(comp.cov)
        dr = rows - mean[0]
        dc = cols - mean[1]
        quad = inv[0, 0] * dr * dr + 2.0 * inv[0, 1] * dr * dc + inv[1, 1] * dc * dc
        values += comp.weight / (2.0 * math.pi * math.sqrt(det)) * np.exp(-0.5 * quad)
    peak = values.max()
    if peak > 0:
        values /= peak
    return values


def generate_gaussian_map(spec: GaussianFieldSpec, h: int, w: int, seed=0,
                          consumed_value: float = -0.1) -> RewardMap:
    """Evaluate the mixture at cell centers and max-normalize the peak to 1.0.

    An empty component list yields an all-zero map. The seed only matters for
    components with randomized means.
    """
    if h < 1 or w < 1:
        raise ContractViolation("map dimensions must be >= 1")
    means = _resolved_means(spec, h, w, seed)
    return RewardMap(_mixture_values(spec, means, h, w), consumed_value)


def evolve_field(current: RewardMap, spec: GaussianFieldSpec, seed, t: int) -> RewardMap:
    """Regenerate the field with component means random-walked for t steps.

    Each walk step displaces every mean by an independent step of magnitude at
    most `spec.drift` (uniform direction and radius), clamped inside the grid.
    The full walk is replayed from the seed, so equal (seed, t) give equal maps.
    """
    h, w = current.h, current.w
    means = _resolved_means(spec, h, w, seed)
    if spec.drift > 0:
        for step_idx in range(1, t + 1):
            rng = np.random.default_rng([*_seed_list(seed), _SALT_DRIFT, step_idx])
            for mean in means:
                angle = rng.uniform(0.0, 2.0 * math.pi)
                radius = rng.uniform(0.0, spec.drift)
                mean[0] = min(max(mean[0] + radius * math.cos(angle), 0.0), h - 1)
                mean[1] = min(max(mean[1] + radius * math.sin(angle), 0.0), w - 1)
    return RewardMap(_mixture_values(spec, means, h, w), current.consumed_value)


def _load_csv(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    width = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        toks = line.split(",")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise MapFormatError(f"{path}: line {lineno}: expected {width} columns, got {len(toks)}")
        vals = []
        for tok in toks:
            try:
                vals.append(float(tok))
            except ValueError:
                raise MapFormatError(f"{path}: line {lineno}: non-numeric token {tok.strip()!r}") from None
        rows.append(vals)
    if not rows:
        raise MapFormatError(f"{path}: empty CSV map")
    return np.array(rows, dtype=np.float64)


def _load_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(data):
            if data[pos:pos + 1].isspace():
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MapFormatError(f"{path}: byte {start}: truncated PGM header")
        return data[start:pos], start

    magic, off = next_token()
    if magic != b"P5":
        raise MapFormatError(f"{path}: byte {off}: unsupported format {magic.decode('ascii', 'replace')!r} (want binary P5)")
    dims = []
    for _ in range(3):
        tok, off = next_token()
        try:
            dims.append(int(tok))
        except ValueError:
            raise MapFormatError(f"{path}: byte {off}: bad header token {tok!r}") from None
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise MapFormatError(f"{path}: byte {off}: non-positive dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise MapFormatError(f"{path}: byte {off}: maxval {maxval} unsupported (8-bit only)")
    pos += 1  # single whitespace after maxval
    need = width * height
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise MapFormatError(f"{path}: byte {pos}: raster has {len(raster)} bytes, expected {need}")
    return np.frombuffer(raster, dtype=np.uint8).astype(np.float64).reshape(height, width)


def load_map(path: str, format: Optional[str] = None, consumed_value: float = -0.1) -> RewardMap:
    """Load a reward map from CSV or binary 8-bit PGM (P5).

    Values are normalized to [0, 1] by dividing by the file's maximum; an
    all-zero file stays zero. CSV rows are stored in file order (the top row
    of the file is the top row of the array).
    """
    if format is None:
        format = "pgm" if path.lower().endswith(".pgm") else "csv"
    if format == "csv":
        values = _load_csv(path)
    elif format == "pgm":
        values = _load_pgm(path)
    else:
        raise MapFormatError(f"{path}: unsupported format {format!r}")
    if not np.all(np.isfinite(values)):
        raise MapFormatError(f"{path}: map contains non-finite values")
    if np.any(values < 0):
        raise MapFormatError(f"{path}: map contains negative values")
    peak = values.max()
    if peak > 0:
        values = values / peak
    return RewardMap(values, consumed_value)


@dataclass
class WorldState:
    """Single source of truth for one episode: map, positions, time, liveness."""

    map: RewardMap
    positions: np.ndarray          # (n, 2) int64
    t: int = 0
    alive: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=np.int64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ContractViolation("positions must be an (n, 2) array")
        if self.alive is None:
            self.alive = np.ones(len(self.positions), dtype=bool)
        else:
            self.alive = np.array(self.alive, dtype=bool)
        h, w = self.map.h, self.map.w
        live = self.positions[self.alive]
        if live.size and (live.min() < 0 or live[:, 0].max() >= h or live[:, 1].max() >= w):
            raise ContractViolation("alive robot position out of bounds")

    @property
    def n(self) -> int:
        return len(self.positions)


def make_world(reward_map: RewardMap, starts, consume_starts: bool = True) -> WorldState:
    """Place robots and (by default) consume the cells they start on.

    Placement consumes without paying reward: a robot standing on a cell has
    already sampled it before the mission clock starts.
    """
    world = WorldState(reward_map.copy(), starts)
    if consume_starts:
        for r, c in world.positions:
            world.map.values[r, c] = world.map.consumed_value
    return world


def step(world: WorldState, actions: Sequence[Optional[int]],
         collision_penalty: float = -2.0):
    """Advance one time step; returns (new_world, rewards, warnings).

    Off-grid moves are clamped per axis so the transition stays total for any
    action source. Robot i earns F(cell)/c + collision_penalty * [c >= 2]
    where c counts the alive robots that ended up in its cell; all cells
    entered by alive robots are then overwritten with consumed_value. Dead
    robots keep their position, earn nothing, and consume nothing; an action
    supplied for a dead robot is ignored with a warning.
    """
    n = world.n
    if len(actions) != n:
        raise ContractViolation(f"expected {n} actions, got {len(actions)}")
    h, w = world.map.h, world.map.w
    warnings = []
    new_pos = world.positions.copy()
    for i in range(n):
        a = actions[i]
        if not world.alive[i]:
            if a is not None:
                warnings.append(f"t={world.t}: action for dead robot {i} ignored")
            continue
        if a is None:
            raise ContractViolation(f"robot {i} is alive but has no action")
        if not 0 <= int(a) < N_ACTIONS:
            raise ContractViolation(f"robot {i}: action index {a} out of range")
        dr, dc = ACTION_OFFSETS[int(a)]
        new_pos[i, 0] = min(max(world.positions[i, 0] + dr, 0), h - 1)
        new_pos[i, 1] = min(max(world.positions[i, 1] + dc, 0), w - 1)

    counts: dict[tuple[int, int], int] = {}
    for i in range(n):
        if world.alive[i]:
            cell = (int(new_pos[i, 0]), int(new_pos[i, 1]))
            counts[cell] = counts.get(cell, 0) + 1

    values = world.map.values.copy()
    rewards = np.zeros(n)
    for i in range(n):
        if not world.alive[i]:
            continue
        cell = (int(new_pos[i, 0]), int(new_pos[i, 1]))
        c = counts[cell]
        rewards[i] = values[cell] / c + (collision_penalty if c >= 2 else 0.0)
    for cell in counts:
        values[cell] = world.map.consumed_value

    new_world = WorldState(RewardMap(values, world.map.consumed_value),
                           new_pos, world.t + 1, world.alive.copy())
    return new_world, rewards, warnings
