import numpy as np
import pytest

from swarmsamp.errors import MetricUndefined
from swarmsamp.metrics import (EpisodeLog, aggregate_reports, communication_volume,
                               compute_report, coverage,
                               discounted_accumulated_reward, pairwise_overlap)


def make_log(positions, rewards=None, neighbor_counts=None, map0=None,
             alive=None):
    positions = np.array(positions, dtype=np.int64)
    n, steps_plus_1 = positions.shape[:2]
    horizon = steps_plus_1 - 1
    rewards = np.zeros((n, horizon)) if rewards is None else np.array(rewards, float)
    neighbor_counts = (np.zeros((n, horizon), dtype=np.int64) if neighbor_counts is None
                       else np.array(neighbor_counts, dtype=np.int64))
    alive = np.ones((n, horizon + 1), dtype=bool) if alive is None else np.array(alive)
    map0 = np.ones((10, 10)) if map0 is None else np.array(map0, float)
    return EpisodeLog(positions, np.zeros((n, horizon), dtype=np.int64), rewards,
                      alive, neighbor_counts, np.zeros((n, horizon), dtype=bool),
                      map0, -0.1)


def walk(cells):
    return [list(c) for c in cells]


class TestDiscountedReward:
    def test_all_zero(self):
        log = make_log([walk([(0, 0), (0, 1)])] * 2)
        assert discounted_accumulated_reward(log, 0.9) == (0.0, 0.0)

    def test_identical_streams_zero_std(self):
        rewards = [[0.5, 0.2, 0.1]] * 2
        log = make_log([walk([(0, 0)] * 4)] * 2, rewards)
        mean, std = discounted_accumulated_reward(log, 0.9)
        assert std == 0.0
        assert mean == pytest.approx(0.9 * 0.5 + 0.81 * 0.2 + 0.729 * 0.1)

    def test_single_early_reward(self):
        log = make_log([walk([(0, 0), (0, 1), (0, 2)])], [[1.0, 0.0]])
        mean, std = discounted_accumulated_reward(log, 0.9)
        assert mean == pytest.approx(0.9)
        assert std == 0.0


class TestPairwiseOverlap:
    def test_disjoint_trajectories(self):
        a = walk([(0, 0), (0, 1), (0, 2)])
        b = walk([(5, 5), (5, 6), (5, 7)])
        avg, pct = pairwise_overlap(make_log([a, b]))
        assert avg == 0.0 and pct == 0.0

    def test_identical_trajectories_full_overlap(self):
        cells = [(0, k) for k in range(10)] + [(1, 9)]
        cells = cells[:11]   # 10 steps, 10 unique... build explicitly below
        path = [(0, 0)] + [(0, k) for k in range(1, 10)] + [(0, 9)]
        # 10 moves, 10 unique cells (the last move revisits (0, 9))
        log = make_log([walk(path), walk(path)])
        avg, pct = pairwise_overlap(log)
        assert avg == 10.0
        assert pct == pytest.approx(100.0)

    def test_three_robot_hand_oracle(self):
        # pairs: (0,1) share 4 cells, (0,2) share 2, (1,2) share 0
        r0 = walk([(0, 0), (0, 1), (0, 2), (0, 3), (5, 0), (6, 0)])
        r1 = walk([(0, 0), (0, 1), (0, 2), (0, 3), (7, 7), (8, 8)])
        r2 = walk([(5, 0), (6, 0), (9, 9), (9, 8), (9, 7), (9, 6)])
        log = make_log([r0, r1, r2])
        s0, s1, s2 = (set(map(tuple, r)) for r in (r0, r1, r2))
        brute = (len(s0 & s1) + len(s0 & s2) + len(s1 & s2)) / 3
        assert brute == 2.0
        avg, _ = pairwise_overlap(log)
        assert avg == pytest.approx(brute)

    def test_single_robot_undefined(self):
        with pytest.raises(MetricUndefined):
            pairwise_overlap(make_log([walk([(0, 0), (0, 1)])]))

    def test_relabeling_invariance(self):
        a = walk([(0, 0), (0, 1), (1, 1)])
        b = walk([(3, 3), (0, 1), (1, 1)])
        c = walk([(5, 5), (5, 6), (1, 1)])
        avg1, _ = pairwise_overlap(make_log([a, b, c]))
        avg2, _ = pairwise_overlap(make_log([c, a, b]))
        assert avg1 == avg2


class TestCoverage:
    def test_everything_collected(self):
        map0 = np.zeros((5, 5))
        map0[0, :3] = [1.0, 0.5, 0.25]
        log = make_log([walk([(0, 0), (0, 1), (0, 2)])], [[0.5, 0.25]], map0=map0)
        # robot consumed 1.0 at its start, then collected 0.5 + 0.25
        # denominator: min(1.75, top 1*2 cells = 1.5) = 1.5; collected 0.75
        assert coverage(log) == pytest.approx(0.75 / 1.5)

    def test_budget_limited_denominator(self):
        map0 = np.zeros((3, 3))
        map0[0, :3] = [1.0, 0.5, 0.25]
        log = make_log([walk([(2, 2), (0, 0), (0, 1)])], [[1.0, 0.5]], map0=map0)
        assert coverage(log) == pytest.approx(1.0)   # 1.5 / top-2 (1.5)

    def test_nothing_collected(self):
        log = make_log([walk([(0, 0), (0, 1)])], [[0.0]])
        assert coverage(log) == 0.0

    def test_negative_rewards_do_not_count(self):
        log = make_log([walk([(0, 0), (0, 1), (0, 0)])], [[0.6, -1.5]])
        expected = 0.6 / min(100.0, 2.0)   # 10x10 all-ones map, N*H = 2
        assert coverage(log) == pytest.approx(expected)

    def test_empty_map_counts_as_covered(self):
        log = make_log([walk([(0, 0), (0, 1)])], map0=np.zeros((4, 4)))
        assert coverage(log) == 1.0

    def test_clipped_at_one(self):
        map0 = np.full((2, 2), 0.1)
        log = make_log([walk([(0, 0), (0, 1)])], [[5.0]], map0=map0)
        assert coverage(log) == 1.0


class TestCommunicationVolume:
    def test_never_in_range(self):
        log = make_log([walk([(0, 0)] * 4)] * 2)
        assert communication_volume(log) == 0.0

    def test_two_robots_mutual_for_h_steps(self):
        h = 7
        counts = np.ones((2, h), dtype=int)
        log = make_log([walk([(0, 0)] * (h + 1))] * 2, neighbor_counts=counts)
        assert communication_volume(log) == pytest.approx(h)

    def test_three_robots_one_pair_five_steps(self):
        counts = np.zeros((3, 6), dtype=int)
        counts[0, :5] = 1
        counts[1, :5] = 1
        log = make_log([walk([(0, 0)] * 7)] * 3, neighbor_counts=counts)
        assert communication_volume(log) == pytest.approx(10 / 3)


class TestReportPlumbing:
    def test_report_is_pure(self):
        rng = np.random.default_rng(0)
        pos = rng.integers(0, 5, size=(3, 6, 2))
        log = make_log(pos, rng.uniform(0, 1, (3, 5)))
        a = compute_report(log, 0.9)
        b = compute_report(log, 0.9)
        assert a == b

    def test_aggregate_confidence_interval(self):
        logs = [make_log([walk([(0, 0), (0, 1)])] * 2, [[v], [v]])
                for v in (1.0, 2.0, 3.0)]
        reports = [compute_report(log, 1.0 - 1e-12) for log in logs]
        agg = aggregate_reports(reports)
        entry = agg["discounted_reward_mean"]
        assert entry["mean"] == pytest.approx(2.0, abs=1e-9)
        assert entry["trials"] == 3
        assert entry["ci95"] == pytest.approx(1.96 * 1.0 / np.sqrt(3), abs=1e-9)
