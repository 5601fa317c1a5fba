"""Decentralized multi-robot adaptive sampling: simulator, trainer, harness."""

from .config import AppConfig, ExperimentSpec, MapSpec, SimConfig, TrainConfig, load_config
from .env import (ACTION_OFFSETS, GaussianComponent, GaussianFieldSpec, RewardMap,
                  WorldState, evolve_field, generate_gaussian_map, load_map, step)
from .learn import TrainResult, centralized_return, compute_returns, train
from .metrics import EpisodeLog, MetricsReport, compute_report
from .policy import PolicyParams, forward, init_params, load_checkpoint, save_checkpoint
from .runner import (BaselinePolicy, FailureSpec, evaluate, run_episode,
                     run_failure_suite, run_online_adaptation,
                     sweep_comm_radius, sweep_team_size)

__version__ = "0.1.0"
