"""Stochastic control policy: a two-hidden-layer tanh network over the
aggregated features with a masked softmax over the 8 move actions, plus exact
score-function gradients for the policy-gradient update.

Action indices follow env.ACTION_OFFSETS; that ordering is baked into saved
checkpoints, so it must never change.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import N_ACTIONS
from .errors import CheckpointError, ContractViolation
from .features import feature_length

HIDDEN = 128

PARAM_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")

CKPT_MAGIC = "MARLAS-CKPT 1"


@dataclass
class PolicyParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_actions(self) -> int:
        return self.w3.shape[0]

    def blocks(self):
        return tuple(getattr(self, name) for name in PARAM_FIELDS)

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(b.copy() for b in self.blocks()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks())


def zeros_params(d: Optional[int] = None, hidden: int = HIDDEN,
                 n_actions: int = N_ACTIONS) -> PolicyParams:
    d = feature_length() if d is None else d
    return PolicyParams(
        np.zeros((hidden, d)), np.zeros(hidden),
        np.zeros((hidden, hidden)), np.zeros(hidden),
        np.zeros((n_actions, hidden)), np.zeros(n_actions),
    )


def init_params(rng: np.random.Generator, d: Optional[int] = None,
                hidden: int = HIDDEN, n_actions: int = N_ACTIONS) -> PolicyParams:
    """Uniform Glorot weights, zero biases."""
    d = feature_length() if d is None else d

    def glorot(fan_out, fan_in):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    return PolicyParams(
        glorot(hidden, d), np.zeros(hidden),
        glorot(hidden, hidden), np.zeros(hidden),
        glorot(n_actions, hidden), np.zeros(n_actions),
    )


def _forward_raw(params: PolicyParams, feats: np.ndarray):
    h1 = np.tanh(feats @ params.w1.T + params.b1)
    h2 = np.tanh(h1 @ params.w2.T + params.b2)
    logits = h2 @ params.w3.T + params.b3
    return h1, h2, logits


def _masked_softmax(logits: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    masked = np.where(feasible, logits, -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    probs = np.where(feasible, np.exp(shifted), 0.0)
    return probs / probs.sum(axis=-1, keepdims=True)


def forward(params: PolicyParams, feats: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Action distribution; infeasible actions get probability exactly 0."""
    feasible = np.asarray(feasible, dtype=bool)
    if not feasible.any():
        raise ContractViolation("no feasible action")
    if feats.shape[-1] != params.d:
        raise ContractViolation(f"feature length {feats.shape[-1]} != policy input {params.d}")
    _, _, logits = _forward_raw(params, np.asarray(feats, dtype=np.float64))
    return _masked_softmax(logits, feasible)


def sample_action(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over the fixed action order using one uniform."""
    cdf = np.cumsum(dist)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, len(dist) - 1)


def argmax_action(dist: np.ndarray) -> int:
    """Most likely action; ties break toward the lowest index."""
    return int(np.argmax(dist))


def log_prob_grad(params: PolicyParams, feats: np.ndarray,
                  feasible: np.ndarray, action: int) -> PolicyParams:
    """Exact gradient of log pi(action | feats) with the params' shape."""
    feasible = np.asarray(feasible, dtype=bool)
    if not feasible[action]:
        raise ContractViolation(f"action {action} is infeasible under the mask")
    feats = np.asarray(feats, dtype=np.float64)
    h1, h2, logits = _forward_raw(params, feats)
    probs = _masked_softmax(logits, feasible)

    dlogits = -probs
    dlogits[action] += 1.0
    gw3 = np.outer(dlogits, h2)
    gb3 = dlogits
    dh2 = params.w3.T @ dlogits
    dz2 = dh2 * (1.0 - h2 * h2)
    gw2 = np.outer(dz2, h1)
    gb2 = dz2
    dh1 = params.w2.T @ dz2
    dz1 = dh1 * (1.0 - h1 * h1)
    gw1 = np.outer(dz1, feats)
    gb1 = dz1
    return PolicyParams(gw1, gb1, gw2, gb2, gw3, gb3)


def weighted_log_prob_grad_batch(params: PolicyParams, feats: np.ndarray,
                                 feasible: np.ndarray, actions: np.ndarray,
                                 coeffs: np.ndarray) -> PolicyParams:
    """Sum over samples of coeff * grad log pi(action | feats), batched.

    feats (B, D), feasible (B, A) bool, actions (B,), coeffs (B,). Samples are
    reduced in array order, so callers fix the order for reproducibility.
    """
    feats = np.asarray(feats, dtype=np.float64)
    h1, h2, logits = _forward_raw(params, feats)
    probs = _masked_softmax(logits, feasible)

    dlogits = -probs
    dlogits[np.arange(len(actions)), actions] += 1.0
    dlogits *= coeffs[:, None]
    gw3 = dlogits.T @ h2
    gb3 = dlogits.sum(axis=0)
    dz2 = (dlogits @ params.w3) * (1.0 - h2 * h2)
    gw2 = dz2.T @ h1
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.w2) * (1.0 - h1 * h1)
    gw1 = dz1.T @ feats
    gb1 = dz1.sum(axis=0)
    return PolicyParams(gw1, gb1, gw2, gb2, gw3, gb3)


def save_checkpoint(params: PolicyParams, path: str):
    """Binary checkpoint: magic line, shape line, then the parameter blocks
    in declaration order as little-endian float64.
    """
    header = f"{CKPT_MAGIC}\n{params.d} {params.hidden} {params.hidden} {params.n_actions}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for block in params.blocks():
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_checkpoint(path: str, expect_d: Optional[int] = None) -> PolicyParams:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", "replace").strip()
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        try:
            d, hidden1, hidden2, n_actions = (int(t) for t in fh.readline().split())
        except ValueError:
            raise CheckpointError(f"{path}: malformed shape line") from None
        if hidden1 != hidden2:
            raise CheckpointError(f"{path}: hidden sizes {hidden1} != {hidden2}")
        if expect_d is not None and d != expect_d:
            raise CheckpointError(f"{path}: checkpoint input size {d}, expected {expect_d}")
        if n_actions != N_ACTIONS:
            raise CheckpointError(f"{path}: action count {n_actions}, expected {N_ACTIONS}")
        shapes = [(hidden1, d), (hidden1,), (hidden1, hidden1), (hidden1,),
                  (n_actions, hidden1), (n_actions,)]
        blocks = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated parameter block")
            blocks.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after parameter blocks")
    return PolicyParams(*blocks)


class PolicyController:
    """Action source backed by the network; samples in training, argmaxes in
    deployment."""

    def __init__(self, params: PolicyParams):
        self.params = params

    def select(self, view, rng: np.random.Generator, mode: str) -> int:
        dist = forward(self.params, view.features, view.feasible)
        if mode == "sample":
            return sample_action(dist, rng)
        return argmax_action(dist)
