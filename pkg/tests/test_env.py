import numpy as np
import pytest

from swarmsamp.env import (ACTION_OFFSETS, GaussianComponent, GaussianFieldSpec,
                           RewardMap, WorldState, evolve_field, feasible_mask,
                           generate_gaussian_map, load_map, make_world, step)
from swarmsamp.errors import ContractViolation, MapFormatError


def iso(var=4.0):
    return np.array([[var, 0.0], [0.0, var]])


class TestGaussianMap:
    def test_peak_at_mean_after_normalization(self):
        spec = GaussianFieldSpec([GaussianComponent((5.0, 5.0), iso(), 1.0)])
        m = generate_gaussian_map(spec, 12, 12, seed=0)
        assert np.unravel_index(np.argmax(m.values), m.values.shape) == (5, 5)
        assert m.values[5, 5] == pytest.approx(1.0)

    def test_empty_component_list_is_all_zero(self):
        m = generate_gaussian_map(GaussianFieldSpec([]), 4, 6, seed=0)
        assert m.values.shape == (4, 6)
        assert np.all(m.values == 0.0)

    def test_weights_scale_out_in_normalization(self):
        comp = GaussianComponent((3.0, 4.0), iso(2.0), 1.0)
        twin = GaussianFieldSpec([comp, GaussianComponent((3.0, 4.0), iso(2.0), 1.0)])
        heavy = GaussianFieldSpec([GaussianComponent((3.0, 4.0), iso(2.0), 2.0)])
        a = generate_gaussian_map(twin, 9, 9, seed=1).values
        b = generate_gaussian_map(heavy, 9, 9, seed=1).values
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_non_spd_covariance_rejected(self):
        with pytest.raises(ContractViolation):
            GaussianComponent((1.0, 1.0), np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0)
        with pytest.raises(ContractViolation):
            GaussianComponent((1.0, 1.0), np.array([[1.0, 0.5], [0.4, 1.0]]), 1.0)

    def test_random_means_deterministic_per_seed(self):
        spec = GaussianFieldSpec([GaussianComponent(None, iso(), 1.0)])
        a = generate_gaussian_map(spec, 10, 10, seed=7).values
        b = generate_gaussian_map(spec, 10, 10, seed=7).values
        c = generate_gaussian_map(spec, 10, 10, seed=8).values
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestEvolveField:
    def spec(self, drift):
        return GaussianFieldSpec([GaussianComponent((2.0, 2.0), iso(), 1.0)], drift)

    def test_zero_drift_matches_regeneration(self):
        base = generate_gaussian_map(self.spec(0.0), 8, 8, seed=3)
        out = evolve_field(base, self.spec(0.0), seed=3, t=10)
        np.testing.assert_array_equal(out.values, base.values)

    def test_means_stay_in_bounds_under_large_drift(self):
        corner = GaussianFieldSpec([GaussianComponent((0.0, 0.0), iso(1.0), 1.0)], 50.0)
        base = generate_gaussian_map(corner, 6, 6, seed=0)
        for t in range(1, 6):
            out = evolve_field(base, corner, seed=0, t=t)
            peak = np.unravel_index(np.argmax(out.values), out.values.shape)
            assert 0 <= peak[0] < 6 and 0 <= peak[1] < 6

    def test_deterministic_given_seed_and_t(self):
        s = self.spec(1.5)
        base = generate_gaussian_map(s, 8, 8, seed=5)
        a = evolve_field(base, s, seed=5, t=7).values
        b = evolve_field(base, s, seed=5, t=7).values
        np.testing.assert_array_equal(a, b)


class TestLoadMap:
    def test_csv_max_normalization(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("0,1\n2,3\n")
        m = load_map(str(p))
        np.testing.assert_allclose(m.values, [[0, 1 / 3], [2 / 3, 1.0]])

    def test_all_zero_csv_stays_zero(self, tmp_path):
        p = tmp_path / "z.csv"
        p.write_text("0,0\n0,0\n")
        m = load_map(str(p))
        assert np.all(m.values == 0.0)

    def test_ragged_rows_name_the_line(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(MapFormatError, match="line 2"):
            load_map(str(p))

    def test_non_numeric_token_named(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("1,2\n3,oops\n")
        with pytest.raises(MapFormatError, match="line 2.*oops"):
            load_map(str(p))

    def test_pgm_single_bright_pixel(self, tmp_path):
        p = tmp_path / "m.pgm"
        raster = bytes([0, 0, 0, 255, 0, 0])
        p.write_bytes(b"P5\n3 2\n255\n" + raster)
        m = load_map(str(p))
        assert m.values.shape == (2, 3)
        assert m.values[1, 0] == pytest.approx(1.0)
        assert m.values.sum() == pytest.approx(1.0)

    def test_pgm_with_comment_header(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([10, 20, 30, 40]))
        m = load_map(str(p))
        assert m.values[1, 1] == pytest.approx(1.0)

    def test_pgm_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "m.pgm"
        p.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
        with pytest.raises(MapFormatError, match="P2"):
            load_map(str(p))

    def test_pgm_truncated_raster_names_byte(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([1, 2]))
        with pytest.raises(MapFormatError, match="byte"):
            load_map(str(p))


class TestStep:
    def world(self, values, positions, consumed_value=-0.1):
        return WorldState(RewardMap(np.array(values, dtype=float), consumed_value),
                          np.array(positions))

    def test_lone_robot_collects_full_cell(self):
        w = self.world([[0.0, 0.8], [0.0, 0.0]], [[0, 0]])
        # action 4 = (0, +1): move east onto the 0.8 cell
        w2, rewards, warn = step(w, [4], collision_penalty=-2.0)
        assert rewards[0] == pytest.approx(0.8)
        assert w2.map.values[0, 1] == pytest.approx(-0.1)
        assert w2.t == 1 and not warn

    def test_shared_cell_splits_and_penalizes(self):
        w = self.world([[0.0, 1.0, 0.0]], [[0, 0], [0, 2]])
        w2, rewards, _ = step(w, [4, 3], collision_penalty=-2.0)
        assert rewards[0] == pytest.approx(1.0 / 2 - 2.0)
        assert rewards[1] == pytest.approx(1.0 / 2 - 2.0)

    def test_revisiting_consumed_cell_costs_its_sentinel(self):
        w = self.world([[0.0, 0.5], [0.0, 0.0]], [[0, 0]])
        w2, _, _ = step(w, [4])
        w3, rewards, _ = step(w2, [3])   # back west
        w4, rewards, _ = step(w3, [4])   # east again onto the consumed cell
        assert rewards[0] == pytest.approx(-0.1)

    def test_offgrid_moves_clamp_per_axis(self):
        w = self.world(np.ones((3, 3)), [[0, 0]])
        w2, _, _ = step(w, [0])   # (-1, -1) from the corner
        assert tuple(w2.positions[0]) == (0, 0)
        w3, _, _ = step(w2, [1])  # (-1, 0): clamps the row, stays put
        assert tuple(w3.positions[0]) == (0, 0)

    def test_dead_robot_ignores_action_with_warning(self):
        w = self.world(np.ones((3, 3)), [[1, 1], [0, 0]])
        w.alive[1] = False
        w2, rewards, warn = step(w, [4, 4])
        assert tuple(w2.positions[1]) == (0, 0)
        assert rewards[1] == 0.0
        assert any("dead robot 1" in m for m in warn)
        # dead robots do not consume
        assert w2.map.values[0, 0] == pytest.approx(1.0)

    def test_wrong_length_action_list_rejected(self):
        w = self.world(np.ones((3, 3)), [[1, 1]])
        with pytest.raises(ContractViolation):
            step(w, [4, 4])

    def test_step_is_deterministic(self):
        w = self.world(np.arange(9).reshape(3, 3) / 8.0, [[1, 1], [0, 2]])
        a = step(w, [6, 3])
        b = step(w, [6, 3])
        np.testing.assert_array_equal(a[0].positions, b[0].positions)
        np.testing.assert_array_equal(a[0].map.values, b[0].map.values)
        np.testing.assert_array_equal(a[1], b[1])

    def test_no_shared_cell_reward_sum_matches_previsit_values(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0, 1, size=(6, 6))
        w = self.world(values, [[0, 0], [5, 5], [0, 5]])
        actions = [7, 0, 5]
        before = w.map.values.copy()
        w2, rewards, _ = step(w, actions)
        visited = {tuple(p) for p in w2.positions}
        assert len(visited) == 3
        expected = sum(before[c] for c in visited)
        assert rewards.sum() == pytest.approx(expected)

    def test_episode_positive_reward_bounded_by_initial_mass(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(0, 1, size=(5, 5))
        initial_mass = values.sum()
        world = make_world(RewardMap(values.copy()), [[2, 2], [0, 0]],
                           consume_starts=False)
        total = 0.0
        for k in range(60):
            acts = [int(rng.integers(8)), int(rng.integers(8))]
            world, rewards, _ = step(world, acts)
            total += np.clip(rewards, 0, None).sum()
        assert total <= initial_mass + 1e-9

    def test_make_world_consumes_starts_without_reward(self):
        values = np.ones((3, 3))
        world = make_world(RewardMap(values), [[1, 1]])
        assert world.map.values[1, 1] == pytest.approx(-0.1)


class TestFeasibleMask:
    def test_corner_has_three_feasible(self):
        mask = feasible_mask((0, 0), 4, 4)
        assert mask.sum() == 3
        feasible_offsets = {tuple(o) for o in ACTION_OFFSETS[mask]}
        assert feasible_offsets == {(0, 1), (1, 0), (1, 1)}

    def test_interior_all_feasible(self):
        assert feasible_mask((2, 2), 5, 5).all()

    def test_clamped_positions_stay_in_bounds_random_walk(self):
        rng = np.random.default_rng(2)
        world = make_world(RewardMap(np.ones((4, 7))), [[0, 0], [3, 6]])
        for _ in range(50):
            acts = [int(rng.integers(8)), int(rng.integers(8))]
            world, _, _ = step(world, acts)
            assert world.positions[:, 0].min() >= 0
            assert world.positions[:, 0].max() < 4
            assert world.positions[:, 1].min() >= 0
            assert world.positions[:, 1].max() < 7
