"""Policy-gradient training: returns, baselines, Adam, and the epoch loop.

Training is centralized-reward, decentralized-execution: every robot runs the
same parameters on its own local beliefs, while the update maximizes the
team-averaged discounted return. The gradient estimator is the classic
score-function form with a per-robot, per-timestep mean-return baseline:

    grad = 1/(N*M) * sum_i sum_m sum_t (G[i,m,t] - b[i,t]) * grad log pi(a|s)

Steps whose action came from the collision override are excluded from the
gradient sum (the policy did not choose them) but their rewards still flow
into the returns.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import TrainConfig
from .env import RewardMap
from .errors import ContractViolation, NonFiniteGradient, TrainingDiverged
from .policy import (PolicyParams, init_params, save_checkpoint,
                     weighted_log_prob_grad_batch, zeros_params)

logger = logging.getLogger(__name__)

_SALT_STARTS = 11
_SALT_INIT = 23


def compute_returns(rewards, discount: float) -> np.ndarray:
    """Discounted reward-to-go: G[t] = r[t] + discount * G[t+1], G[H] = 0.

    rewards[t] is the reward received after the action taken at step t.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def compute_baseline(returns_over_batch) -> np.ndarray:
    """Mean return across the batch trajectories, per (robot, t).

    Accepts (M, H) for one robot or (N, M, H); averages over the M axis.
    """
    arr = np.asarray(returns_over_batch, dtype=np.float64)
    return arr.mean(axis=-2)


def centralized_return(reward_seqs, discount: float) -> float:
    """Team-averaged discounted episode return, discounting from step 1."""
    arr = np.asarray(reward_seqs, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolation("expected (n_robots, horizon) rewards")
    horizon = arr.shape[1]
    weights = discount ** np.arange(1, horizon + 1)
    return float((arr.sum(axis=0) @ weights) / arr.shape[0])


@dataclass
class AdamState:
    m: PolicyParams
    v: PolicyParams

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "AdamState":
        return cls(zeros_params(params.d, params.hidden, params.n_actions),
                   zeros_params(params.d, params.hidden, params.n_actions))


def adam_step(params: PolicyParams, grad: PolicyParams, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1):
    """One bias-corrected Adam step in the ascent direction (t is 1-based)."""
    new_blocks, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.blocks(), grad.blocks(),
                          state.m.blocks(), state.v.blocks()):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or infinity")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_blocks.append(p + lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return PolicyParams(*new_blocks), AdamState(PolicyParams(*new_m), PolicyParams(*new_v))


@dataclass
class RolloutBatch:
    """One training batch: M trajectories for each of the N robots."""

    features: np.ndarray      # (N, M, H, D)
    feasible: np.ndarray      # (N, M, H, A) bool
    actions: np.ndarray       # (N, M, H) int
    rewards: np.ndarray       # (N, M, H)
    overrides: np.ndarray     # (N, M, H) bool

    @property
    def shape(self):
        return self.rewards.shape

    def returns(self, discount: float) -> np.ndarray:
        n, m, horizon = self.shape
        out = np.empty((n, m, horizon))
        for i in range(n):
            for k in range(m):
                out[i, k] = compute_returns(self.rewards[i, k], discount)
        return out


def policy_gradient(params: PolicyParams, batch: RolloutBatch,
                    discount: float) -> PolicyParams:
    """Baseline-corrected score-function gradient averaged over the batch."""
    n, m, horizon = batch.shape
    returns = batch.returns(discount)
    baseline = compute_baseline(returns)              # (N, H)
    advantages = returns - baseline[:, None, :]
    coeffs = advantages / (n * m)
    # Steps the policy did not choose carry no score: collision overrides and
    # steps a dead robot never took (action -1).
    coeffs = np.where(batch.overrides | (batch.actions < 0), 0.0, coeffs)

    feats = batch.features.reshape(-1, batch.features.shape[-1])
    feas = batch.feasible.reshape(-1, batch.feasible.shape[-1])
    acts = np.clip(batch.actions.reshape(-1), 0, None)
    feas = feas.copy()
    feas[~feas.any(axis=1)] = True                    # placeholder rows stay numerically sane
    return weighted_log_prob_grad_batch(params, feats, feas, acts, coeffs.reshape(-1))


def reinforce_update(params: PolicyParams, batch: RolloutBatch, discount: float,
                     lr: float, state: AdamState, step: int):
    """One policy improvement step; returns (params, adam_state)."""
    grad = policy_gradient(params, batch, discount)
    return adam_step(params, grad, state, lr, t=step)


@dataclass
class TrainResult:
    params: PolicyParams
    curve: np.ndarray                       # (epochs, 3): epoch, mean return, robot std
    checkpoints: list[str] = field(default_factory=list)


def _rollout_task(args):
    # Module-level so ProcessPoolExecutor can pickle it.
    from .runner import training_rollout
    cfg, map_values, consumed_value, starts, params, seed_key = args
    reward_map = RewardMap(map_values, consumed_value)
    return training_rollout(cfg, params, reward_map, starts, seed_key)


def sample_starts(rng: np.random.Generator, n: int, h: int, w: int) -> np.ndarray:
    """Fresh random start cells, all distinct."""
    flat = rng.choice(h * w, size=n, replace=False)
    return np.stack([flat // w, flat % w], axis=1).astype(np.int64)


def train(cfg: TrainConfig, reward_map: RewardMap, out_dir: Optional[str] = None,
          jobs: int = 1, initial_params: Optional[PolicyParams] = None) -> TrainResult:
    """Run the full training loop on one map.

    Every epoch draws fresh start cells, rolls out `batch_size` episodes with
    sampled actions (each episode runs the complete per-agent pipeline), and
    applies one REINFORCE-with-baseline update. Fully deterministic for a
    fixed seed: every rollout owns an RNG stream keyed by (seed, epoch,
    trajectory), and gradient accumulation order is fixed.
    """
    cfg.validate()
    from .runner import training_rollout  # deferred: runner imports policy/agent

    params = initial_params.copy() if initial_params is not None else \
        init_params(np.random.default_rng([cfg.seed, _SALT_INIT]))
    state = AdamState.zeros_like(params)
    curve = []
    checkpoints = []

    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            start_rng = np.random.default_rng([cfg.seed, _SALT_STARTS, epoch])
            starts = sample_starts(start_rng, cfg.robots, reward_map.h, reward_map.w)

            if pool is not None:
                tasks = [(cfg, reward_map.values, reward_map.consumed_value,
                          starts, params, (cfg.seed, epoch, m))
                         for m in range(cfg.batch_size)]
                rollouts = list(pool.map(_rollout_task, tasks, chunksize=4))
            else:
                rollouts = [training_rollout(cfg, params, reward_map, starts,
                                             (cfg.seed, epoch, m))
                            for m in range(cfg.batch_size)]

            batch = RolloutBatch(
                features=np.stack([r.features for r in rollouts], axis=1),
                feasible=np.stack([r.feasible for r in rollouts], axis=1),
                actions=np.stack([r.actions for r in rollouts], axis=1),
                rewards=np.stack([r.rewards for r in rollouts], axis=1),
                overrides=np.stack([r.overrides for r in rollouts], axis=1),
            )

            mean_return = float(np.mean([centralized_return(r.rewards, cfg.discount)
                                         for r in rollouts]))
            per_robot = np.array([
                [float(np.sum(r.rewards[i] * cfg.discount ** np.arange(1, cfg.horizon + 1)))
                 for r in rollouts]
                for i in range(cfg.robots)])
            robot_std = float(np.std(per_robot.mean(axis=1)))
            curve.append((epoch, mean_return, robot_std))

            try:
                params, state = reinforce_update(params, batch, cfg.discount,
                                                 cfg.learning_rate, state, epoch + 1)
            except NonFiniteGradient as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", params) from exc
            if not params.all_finite():
                raise TrainingDiverged(f"epoch {epoch}: parameters became non-finite", params)

            logger.info("epoch %d: mean return %.4f (robot std %.4f) in %.2fs",
                        epoch, mean_return, robot_std, time.perf_counter() - t0)

            if out_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                path = os.path.join(out_dir, f"policy_epoch{epoch + 1:05d}.ckpt")
                save_checkpoint(params, path)
                checkpoints.append(path)
    finally:
        if pool is not None:
            pool.shutdown()

    return TrainResult(params, np.array(curve, dtype=np.float64).reshape(-1, 3), checkpoints)
