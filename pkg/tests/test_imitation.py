import dataclasses
import math

import numpy as np
import pytest

from fishformation.errors import InvalidArgument
from fishformation.geometry import PathSpline
from fishformation.imitation import (ConstantController, Dataset, ExpertController,
                                     LearnerController, ProtocolConfig, StartConfig,
                                     alternating_sides, collect_bc, make_expert_path,
                                     read_rollout_csv, run_batch, run_rollout, write_rollout_csv)
from fishformation.policy import NormStats, NetConfig, init_params
from fishformation.swimmer import BodySpec

CFG = ProtocolConfig()
SHORT = dataclasses.replace(CFG, n_ticks=60)


def straight_path(y=290.0):
    x = np.arange(450.0, 2000.0, 5.0)
    return PathSpline.from_points(np.column_stack([x, np.full_like(x, y)]))


@pytest.fixture(scope="module")
def expert_run():
    return run_rollout(ExpertController(), CFG.start("left"), 0, CFG, leader_path=straight_path())


class TestStart:
    def test_follower_abeam_of_leader_tail(self):
        spec = BodySpec()
        left = StartConfig("left").follower_nose(spec)
        right = StartConfig("right").follower_nose(spec)
        back = 450.0 - 5 * spec.link_length
        assert np.allclose(left, [back, 290.0 - 60.0])
        assert np.allclose(right, [back, 290.0 + 60.0])

    def test_validation(self):
        with pytest.raises(InvalidArgument):
            StartConfig("up")
        with pytest.raises(InvalidArgument):
            StartConfig(lateral=0.0)

    def test_expert_path_on_follower_side(self):
        p = straight_path()
        below = make_expert_path(p, (500.0, 200.0))
        above = make_expert_path(p, (500.0, 400.0))
        assert np.allclose(below.points[:, 1], 230.0)
        assert np.allclose(above.points[:, 1], 350.0)
        with pytest.raises(InvalidArgument):
            make_expert_path(p, (500.0, 290.0))


class TestProtocol:
    def test_full_length_rollout(self, expert_run):
        r = expert_run
        assert r.termination == "completed"
        assert len(r) == 500
        assert np.allclose(np.diff(r.t), 0.02)
        assert r.sensors.shape == (500, 8)

    def test_head_start(self, expert_run):
        f = expert_run.follower
        assert np.all(f[1:20, :2] == f[0, :2])
        assert np.any(f[20, :2] != f[0, :2])
        assert np.any(expert_run.leader[1, :2] != expert_run.leader[0, :2])

    def test_forced_separation(self):
        r = run_rollout(ConstantController(-0.3), CFG.start("left"), 0, CFG,
                        leader_path=straight_path())
        assert r.termination == "separated"
        assert r.d[-1] > CFG.separation_limit
        assert np.all(r.d[:-1] <= CFG.separation_limit)

    def test_forced_contact(self):
        start = StartConfig("left", lateral=40.0)
        r = run_rollout(ConstantController(0.1), start, 0, CFG, leader_path=straight_path())
        assert r.termination == "contact"
        assert r.contact[-1] and not r.contact[:-1].any()
        assert len(r) > start.head_start_ticks

    def test_applied_steering_is_clamped(self):
        r = run_rollout(ConstantController(5.0), CFG.start("right"), 1, SHORT)
        assert np.all(r.sigma_applied == 0.3)
        assert np.all(np.abs(r.sigma_expert) <= 0.3)

    def test_non_finite_controller_rejected(self):
        with pytest.raises(InvalidArgument):
            run_rollout(lambda obs, truth: math.nan, CFG.start("left"), 0, SHORT)

    def test_deterministic(self):
        a = run_rollout(ExpertController(), CFG.start("right"), 4, SHORT)
        b = run_rollout(ExpertController(), CFG.start("right"), 4, SHORT)
        assert np.array_equal(a.sensors, b.sensors)
        assert np.array_equal(a.follower, b.follower)

    def test_threads_do_not_change_results(self):
        seeds, sides = [3, 4, 5], alternating_sides(3)
        one = run_batch(ExpertController, seeds, sides, SHORT, threads=1)
        two = run_batch(ExpertController, seeds, sides, SHORT, threads=2)
        for a, b in zip(one, two):
            assert np.array_equal(a.sensors, b.sensors)

    def test_learner_output_bounded(self):
        rng = np.random.default_rng(0)
        params = init_params(NetConfig(), rng)
        params.flat[:] = rng.normal(0, 3.0, params.flat.size)
        r = run_rollout(LearnerController(params, NormStats.identity()), CFG.start("left"), 2,
                        SHORT)
        assert np.max(np.abs(r.sigma_applied)) <= 0.3


class TestPersistence:
    def test_csv_round_trip(self, tmp_path, expert_run):
        f = tmp_path / "r.csv"
        write_rollout_csv(f, expert_run)
        back = read_rollout_csv(f, expert_run.seed, expert_run.side, expert_run.termination)
        assert np.array_equal(back.sensors, expert_run.sensors)
        assert np.array_equal(back.sigma_expert, expert_run.sigma_expert)
        assert np.array_equal(back.sigma_applied, expert_run.sigma_applied)
        assert np.allclose(back.follower, expert_run.follower, atol=1e-6)


class TestDataset:
    def test_aggregation_order(self):
        ds = collect_bc(2, [10, 11], SHORT)
        assert ds.side_counts() == {"left": 1, "right": 1}
        ds2 = ds.extended(ds.rollouts, 1, "dagger")
        assert len(ds2) == 4 and ds2.last_iteration == 1
        assert len(ds) == 2
        with pytest.raises(InvalidArgument):
            ds2.extended(ds.rollouts, 1, "dagger")

    def test_odd_counts_rejected(self):
        with pytest.raises(InvalidArgument):
            collect_bc(3, [0, 1, 2], SHORT)

    def test_empty_dataset(self):
        assert Dataset().last_iteration == -1
