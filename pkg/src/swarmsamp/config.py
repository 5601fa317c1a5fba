"""Configuration dataclasses and the INI config-file loader.

One config file reproduces a full experiment: [train] and [sim] hold the
training and simulation knobs, [map]/[field] describe the reward field, and
[experiment] selects the scenario sweep parameters. Every value has a default
matching the standard training setup (5 robots, 30x30 field, horizon 200,
batch 40, discount 0.9, radii 10/2, collision penalty -2, history length 50).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation


@dataclass
class SimConfig:
    sense_radius: float = 10.0
    comm_radius: float = 10.0
    collision_range: float = 2.0      # repulsive override activates at or below this distance
    repulsion_gain: float = 1.0
    history_len: int = 50
    false_positive: float = 0.05
    false_negative: float = 0.05
    collision_penalty: float = -2.0
    consumed_value: float = -0.1
    comm_enabled: bool = True
    estimation_enabled: bool = True

    def validate(self):
        if self.sense_radius < 0 or self.comm_radius < 0:
            raise ContractViolation("radii must be non-negative")
        if self.collision_range > max(self.sense_radius, self.comm_radius):
            raise ContractViolation("collision_range must not exceed the sensing/communication radius")
        if not (0.0 <= self.false_positive < 0.5 and 0.0 <= self.false_negative < 0.5):
            raise ContractViolation("sensor error rates must lie in [0, 0.5)")
        if self.history_len < 1:
            raise ContractViolation("history_len must be >= 1")
        if self.collision_penalty > 0:
            raise ContractViolation("collision_penalty must be <= 0")
        return self


@dataclass
class TrainConfig:
    robots: int = 5
    horizon: int = 200
    discount: float = 0.9
    batch_size: int = 40              # trajectories per robot per batch
    learning_rate: float = 1e-3
    epochs: int = 1500
    seed: int = 0
    checkpoint_every: int = 0         # 0 disables periodic checkpoints
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self):
        if self.robots < 1:
            raise ContractViolation("robots must be >= 1")
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        if self.batch_size < 2:
            raise ContractViolation("batch_size must be >= 2 (the baseline needs a batch)")
        if not (0.0 <= self.discount < 1.0):
            raise ContractViolation("discount must lie in [0, 1)")
        self.sim.validate()
        return self


@dataclass
class MapSpec:
    source: str = "gaussian"          # gaussian | csv | pgm
    path: Optional[str] = None
    height: int = 30
    width: int = 30


@dataclass
class ExperimentSpec:
    kind: str = "eval"
    trials: int = 40
    failure_step: int = 20
    failure_scenario: int = 1         # 1 none, 2 comm out, 3 comm+estimation out, 4 global comm
    kill_robots: tuple[int, ...] = ()
    team_sizes: tuple[int, ...] = (2, 5, 10, 15, 20)
    radius_percents: tuple[float, ...] = (0, 10, 20, 30, 40, 60, 80, 100)
    refresh_period: int = 100

    def validate(self, horizon: int):
        if self.trials < 1:
            raise ContractViolation("trials must be >= 1")
        if not 0 <= self.failure_step < horizon:
            raise ContractViolation("failure_step must lie in [0, horizon)")
        if self.failure_scenario not in (1, 2, 3, 4):
            raise ContractViolation("failure_scenario must be 1..4")
        if any(not 0 <= p <= 100 for p in self.radius_percents):
            raise ContractViolation("radius percentages must lie in [0, 100]")
        if any(n < 2 for n in self.team_sizes):
            raise ContractViolation("team sizes must be >= 2")
        if self.refresh_period < 1:
            raise ContractViolation("refresh_period must be >= 1")
        return self


# Default synthetic field: two anisotropic bumps on a 30x30 grid.
DEFAULT_FIELD_COMPONENTS = (
    ((8.0, 8.0), (12.0, 0.0, 12.0), 1.0),
    ((21.0, 20.0), (16.0, -4.0, 20.0), 0.8),
)


@dataclass
class AppConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    map: MapSpec = field(default_factory=MapSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    # field components as ((mean_r, mean_c) | None, (cov_rr, cov_rc, cov_cc), weight)
    field_components: tuple = DEFAULT_FIELD_COMPONENTS
    field_drift: float = 0.0

    def validate(self):
        self.train.validate()
        self.experiment.validate(self.train.horizon)
        return self


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ContractViolation(f"not a boolean: {s!r}")


def _parse_component(text: str):
    """One field component per line: 'mean_r mean_c cov_rr cov_rc cov_cc weight'.

    The literal token 'random' in place of the mean pair requests a seeded
    uniform-random mean.
    """
    toks = text.split()
    if toks and toks[0].lower() == "random":
        if len(toks) != 5:
            raise ContractViolation(f"random component needs 4 numbers, got: {text!r}")
        nums = [float(t) for t in toks[1:]]
        return (None, (nums[0], nums[1], nums[2]), nums[3])
    if len(toks) != 6:
        raise ContractViolation(f"component needs 6 numbers, got: {text!r}")
    nums = [float(t) for t in toks]
    return ((nums[0], nums[1]), (nums[2], nums[3], nums[4]), nums[5])


def load_config(path: Optional[str] = None) -> AppConfig:
    """Load an AppConfig from an INI file; omitted keys keep their defaults."""
    cfg = AppConfig()
    if path is None:
        return cfg.validate()

    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)

    if parser.has_section("train"):
        t = parser["train"]
        tr = cfg.train
        tr.robots = t.getint("robots", tr.robots)
        tr.horizon = t.getint("horizon", tr.horizon)
        tr.discount = t.getfloat("discount", tr.discount)
        tr.batch_size = t.getint("batch_trajectories", tr.batch_size)
        tr.learning_rate = t.getfloat("learning_rate", tr.learning_rate)
        tr.epochs = t.getint("epochs", tr.epochs)
        tr.seed = t.getint("seed", tr.seed)
        tr.checkpoint_every = t.getint("checkpoint_every", tr.checkpoint_every)

    if parser.has_section("sim"):
        s = parser["sim"]
        sm = cfg.train.sim
        sm.sense_radius = s.getfloat("sense_radius", sm.sense_radius)
        sm.comm_radius = s.getfloat("comm_radius", sm.comm_radius)
        sm.collision_range = s.getfloat("collision_range", sm.collision_range)
        sm.repulsion_gain = s.getfloat("repulsion_gain", sm.repulsion_gain)
        sm.history_len = s.getint("history_len", sm.history_len)
        sm.false_positive = s.getfloat("false_positive", sm.false_positive)
        sm.false_negative = s.getfloat("false_negative", sm.false_negative)
        sm.collision_penalty = s.getfloat("collision_penalty", sm.collision_penalty)
        sm.consumed_value = s.getfloat("consumed_value", sm.consumed_value)
        if "comm_enabled" in s:
            sm.comm_enabled = _parse_bool(s["comm_enabled"])
        if "estimation_enabled" in s:
            sm.estimation_enabled = _parse_bool(s["estimation_enabled"])

    if parser.has_section("map"):
        m = parser["map"]
        cfg.map.source = m.get("source", cfg.map.source).strip().lower()
        p = m.get("path", "").strip()
        cfg.map.path = p or None
        cfg.map.height = m.getint("height", cfg.map.height)
        cfg.map.width = m.getint("width", cfg.map.width)
        if cfg.map.source not in ("gaussian", "csv", "pgm"):
            raise ContractViolation(f"unknown map source {cfg.map.source!r}")

    if parser.has_section("field"):
        f = parser["field"]
        cfg.field_drift = f.getfloat("drift", cfg.field_drift)
        comps = []
        for key in sorted(k for k in f.keys() if k.startswith("component")):
            comps.append(_parse_component(f[key]))
        if comps:
            cfg.field_components = tuple(comps)

    if parser.has_section("experiment"):
        e = parser["experiment"]
        ex = cfg.experiment
        ex.kind = e.get("kind", ex.kind).strip().lower()
        ex.trials = e.getint("trials", ex.trials)
        ex.failure_step = e.getint("failure_step", ex.failure_step)
        ex.failure_scenario = e.getint("failure_scenario", ex.failure_scenario)
        if "kill_robots" in e:
            toks = e["kill_robots"].replace(",", " ").split()
            ex.kill_robots = tuple(int(t) for t in toks)
        if "team_sizes" in e:
            ex.team_sizes = tuple(int(t) for t in e["team_sizes"].replace(",", " ").split())
        if "radius_percents" in e:
            ex.radius_percents = tuple(float(t) for t in e["radius_percents"].replace(",", " ").split())
        ex.refresh_period = e.getint("refresh_period", ex.refresh_period)

    return cfg.validate()
