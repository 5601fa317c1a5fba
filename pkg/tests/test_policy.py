import numpy as np
import pytest

from swarmsamp.errors import CheckpointError, ContractViolation
from swarmsamp.policy import (PARAM_FIELDS, PolicyParams, argmax_action, forward,
                              init_params, load_checkpoint, log_prob_grad,
                              sample_action, save_checkpoint,
                              weighted_log_prob_grad_batch, zeros_params)


def small_params(rng, d=10, hidden=12):
    return init_params(rng, d=d, hidden=hidden)


def finite_difference_grad(params, feats, feasible, action, step=1e-5):
    """Independent oracle: central differences of log pi over every coordinate."""
    grad_blocks = []
    for name in PARAM_FIELDS:
        block = getattr(params, name)
        g = np.zeros_like(block)
        it = np.nditer(block, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            for sign in (+1, -1):
                p = params.copy()
                getattr(p, name)[idx] += sign * step
                logp = np.log(forward(p, feats, feasible)[action])
                g[idx] += sign * logp
            g[idx] /= 2 * step
        grad_blocks.append(g)
    return PolicyParams(*grad_blocks)


class TestForward:
    def test_zero_params_uniform(self):
        params = zeros_params(d=10, hidden=12)
        dist = forward(params, np.ones(10), np.ones(8, dtype=bool))
        np.testing.assert_allclose(dist, 1 / 8)

    def test_zero_params_masked_uniform(self):
        params = zeros_params(d=10, hidden=12)
        mask = np.zeros(8, dtype=bool)
        mask[[4, 6, 7]] = True   # a corner cell's feasible set
        dist = forward(params, np.ones(10), mask)
        np.testing.assert_allclose(dist[mask], 1 / 3)
        assert np.all(dist[~mask] == 0.0)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(0)
        params = small_params(rng)
        feats = rng.normal(size=10)
        mask = np.ones(8, dtype=bool)
        a = forward(params, feats, mask)
        shifted = params.copy()
        shifted.b3 += 5.0
        b = forward(shifted, feats, mask)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            params = small_params(rng)
            mask = np.zeros(8, dtype=bool)
            mask[rng.choice(8, size=rng.integers(1, 9), replace=False)] = True
            dist = forward(params, rng.normal(size=10), mask)
            assert dist.sum() == pytest.approx(1.0)
            assert np.all(dist[~mask] == 0.0)

    def test_all_infeasible_rejected(self):
        params = zeros_params(d=10, hidden=12)
        with pytest.raises(ContractViolation):
            forward(params, np.ones(10), np.zeros(8, dtype=bool))


class TestSampling:
    def test_point_mass_distribution(self):
        dist = np.zeros(8)
        dist[4] = 1.0
        rng = np.random.default_rng(0)
        assert sample_action(dist, rng) == 4
        assert argmax_action(dist) == 4

    def test_inverse_cdf_at_high_draw(self):
        class FixedRng:
            def random(self):
                return 0.99

        dist = np.full(8, 1 / 8)
        assert sample_action(dist, FixedRng()) == 7

    def test_argmax_ties_break_low(self):
        dist = np.array([0.1, 0.0, 0.3, 0.1, 0.1, 0.3, 0.05, 0.05])
        assert argmax_action(dist) == 2

    def test_sampling_respects_mask_zero_prob(self):
        dist = np.array([0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(3)
        draws = {sample_action(dist, rng) for _ in range(200)}
        assert draws <= {1, 3}


class TestLogProbGrad:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        for case in range(3):   # the full 100-case sweep runs in acceptance
            params = small_params(rng)
            feats = rng.normal(size=10)
            mask = np.ones(8, dtype=bool)
            if case % 2:
                mask[rng.choice(8, size=3, replace=False)] = False
            feasible_idx = np.flatnonzero(mask)
            action = int(feasible_idx[rng.integers(len(feasible_idx))])
            analytic = log_prob_grad(params, feats, mask, action)
            numeric = finite_difference_grad(params, feats, mask, action)
            for a, n in zip(analytic.blocks(), numeric.blocks()):
                denom = np.maximum(np.abs(n), 1e-6)
                assert np.max(np.abs(a - n) / denom) < 1e-4

    def test_expected_score_is_zero(self):
        rng = np.random.default_rng(7)
        params = small_params(rng)
        feats = rng.normal(size=10)
        mask = np.ones(8, dtype=bool)
        mask[2] = False
        dist = forward(params, feats, mask)
        total = [np.zeros_like(b) for b in params.blocks()]
        for a in np.flatnonzero(mask):
            g = log_prob_grad(params, feats, mask, int(a))
            for acc, block in zip(total, g.blocks()):
                acc += dist[a] * block
        for acc in total:
            assert np.max(np.abs(acc)) < 1e-8

    def test_zero_params_bias_gradient_is_centered_onehot(self):
        params = zeros_params(d=10, hidden=12)
        mask = np.ones(8, dtype=bool)
        g = log_prob_grad(params, np.ones(10), mask, 3)
        expected = -np.full(8, 1 / 8)
        expected[3] += 1.0
        np.testing.assert_allclose(g.b3, expected, atol=1e-12)

    def test_infeasible_action_rejected(self):
        params = zeros_params(d=10, hidden=12)
        mask = np.ones(8, dtype=bool)
        mask[5] = False
        with pytest.raises(ContractViolation):
            log_prob_grad(params, np.ones(10), mask, 5)

    def test_batch_equals_sum_of_singles(self):
        rng = np.random.default_rng(9)
        params = small_params(rng)
        B = 6
        feats = rng.normal(size=(B, 10))
        masks = np.ones((B, 8), dtype=bool)
        masks[2, [0, 1]] = False
        actions = np.array([0, 3, 7, 2, 5, 4])
        coeffs = rng.normal(size=B)
        batch = weighted_log_prob_grad_batch(params, feats, masks, actions, coeffs)
        manual = [np.zeros_like(b) for b in params.blocks()]
        for k in range(B):
            g = log_prob_grad(params, feats[k], masks[k], int(actions[k]))
            for acc, block in zip(manual, g.blocks()):
                acc += coeffs[k] * block
        for a, m in zip(batch.blocks(), manual):
            np.testing.assert_allclose(a, m, atol=1e-10)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        params = init_params(rng)
        path = str(tmp_path / "p.ckpt")
        save_checkpoint(params, path)
        loaded = load_checkpoint(path, expect_d=params.d)
        for a, b in zip(params.blocks(), loaded.blocks()):
            np.testing.assert_array_equal(a, b)

    def test_header_format(self, tmp_path):
        params = zeros_params(d=10, hidden=12)
        path = str(tmp_path / "p.ckpt")
        save_checkpoint(params, path)
        with open(path, "rb") as fh:
            assert fh.readline() == b"MARLAS-CKPT 1\n"
            assert fh.readline() == b"10 12 12 8\n"

    def test_shape_mismatch_rejected(self, tmp_path):
        params = zeros_params(d=10, hidden=12)
        path = str(tmp_path / "p.ckpt")
        save_checkpoint(params, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expect_d=150)

    def test_truncated_file_rejected(self, tmp_path):
        params = zeros_params(d=10, hidden=12)
        path = str(tmp_path / "p.ckpt")
        save_checkpoint(params, path)
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-16])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "p.ckpt")
        open(path, "wb").write(b"NOPE 9\n10 12 12 8\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
