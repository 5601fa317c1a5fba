"""Egocentric multiresolution aggregation of belief maps.

Two channels (reward belief, summed teammate belief) are each compressed into
three 5x5 levels centered on the robot. Level k tiles a (5*3^k) x (5*3^k)
window with square blocks of side 3^k; a block's feature is the sum of its
in-bounds cells, so out-of-bounds area contributes zero. The output length is
constant regardless of map size, which is what lets one policy run on maps of
any scale.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation

LEVELS = 3
BLOCKS_PER_SIDE = 5
CHANNELS = 2
FEATURES_PER_CHANNEL = LEVELS * BLOCKS_PER_SIDE * BLOCKS_PER_SIDE


def feature_length() -> int:
    return CHANNELS * FEATURES_PER_CHANNEL


def _integral(grid: np.ndarray) -> np.ndarray:
    sat = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1))
    np.cumsum(np.cumsum(grid, axis=0), axis=1, out=sat[1:, 1:])
    return sat


# Per-level block boundaries relative to the robot cell: level k has 5 blocks
# of side 3^k per axis, so block b spans [b*side - (side-1)/2, ...+side).
_SIDES = 3 ** np.arange(LEVELS)
_OFF_LO = np.arange(-2, 3)[None, :] * _SIDES[:, None] - (_SIDES[:, None] - 1) // 2
_OFF_HI = _OFF_LO + _SIDES[:, None]


def _block_sums(sat: np.ndarray, r: int, c: int) -> np.ndarray:
    """(levels, 5, 5) block sums via the summed-area table; boundaries are
    clamped so out-of-bounds area contributes zero."""
    h, w = sat.shape[0] - 1, sat.shape[1] - 1
    r_lo = np.minimum(np.maximum(r + _OFF_LO, 0), h)[:, :, None]
    r_hi = np.minimum(np.maximum(r + _OFF_HI, 0), h)[:, :, None]
    c_lo = np.minimum(np.maximum(c + _OFF_LO, 0), w)[:, None, :]
    c_hi = np.minimum(np.maximum(c + _OFF_HI, 0), w)[:, None, :]
    return sat[r_hi, c_hi] - sat[r_lo, c_hi] - sat[r_hi, c_lo] + sat[r_lo, c_lo]


def aggregate(reward_belief: np.ndarray, teammate_mass: np.ndarray, pos) -> np.ndarray:
    """Fixed-length feature vector for one robot at `pos` (row, col).

    Channel order: reward belief then teammate mass; within a channel, levels
    fine to coarse; within a level, blocks row-major.
    """
    reward_belief = np.asarray(reward_belief, dtype=np.float64)
    teammate_mass = np.asarray(teammate_mass, dtype=np.float64)
    if reward_belief.shape != teammate_mass.shape:
        raise ContractViolation("channel shapes differ")
    h, w = reward_belief.shape
    r, c = int(pos[0]), int(pos[1])
    if not (0 <= r < h and 0 <= c < w):
        raise ContractViolation("robot position out of bounds")

    out = np.empty(feature_length())
    out[:FEATURES_PER_CHANNEL] = _block_sums(_integral(reward_belief), r, c).ravel()
    out[FEATURES_PER_CHANNEL:] = _block_sums(_integral(teammate_mass), r, c).ravel()
    return out
