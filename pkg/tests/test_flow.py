import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fishformation.cpg import CpgParams
from fishformation.errors import CalibrationError, InvalidArgument
from fishformation.flow import (Bias, FlowModelParams, RawFrame, SensorLayout, SensorModel,
                                SourceHistory, calibrate_bias, clean_pressures, pressure_at,
                                sample_sensors)
from fishformation.swimmer import BodySpec, BodyState, Robot

SPEC = BodySpec()
FLOW = FlowModelParams()
LAYOUT = SensorLayout()


def one_link(x=0.0, y=0.0, heading=0.0, vn=10.0, length=40.0):
    """A single link translating sideways at ``vn`` mm/s."""
    v = vn * np.array([-math.sin(heading), math.cos(heading)])
    return BodyState(np.array([[x, y]]), np.array([heading]), v[None, :], np.zeros(1), length)


def strength(vn, length=40.0, params=FLOW):
    return params.dipole_coefficient * vn * params.link_width ** 2 * length


def swimming(ticks, nose=(500.0, 300.0), sigma=0.0):
    r = Robot.at_rest(SPEC, CpgParams(), nose, 0.0)
    for _ in range(ticks):
        r.tick(sigma)
    return r.body


class TestKernel:
    def test_oracle_on_normal_axis(self):
        src = one_link(vn=10.0)
        for r in (30.0, 60.0, 120.0):
            assert pressure_at((0.0, r), [src], FLOW) == pytest.approx(strength(10.0) / r ** 3,
                                                                       rel=1e-12)

    def test_oracle_oblique(self):
        src = one_link(vn=-4.0, heading=0.3)
        # point 50 mm ahead and 70 mm to the left in the link frame
        c, s = math.cos(0.3), math.sin(0.3)
        pt = (50.0 * c - 70.0 * s, 50.0 * s + 70.0 * c)
        d = math.hypot(50.0, 70.0)
        assert pressure_at(pt, [src], FLOW) == pytest.approx(
            strength(-4.0) * (70.0 / d) / d ** 3, rel=1e-12)

    def test_antisymmetric_across_axis(self):
        src = one_link(vn=7.0)
        assert pressure_at((5.0, -40.0), [src], FLOW) == pytest.approx(
            -pressure_at((5.0, 40.0), [src], FLOW), rel=1e-12)

    def test_resting_body_is_silent(self):
        b = BodyState.straight(SPEC, (500.0, 300.0), 0.2)
        assert pressure_at((520.0, 330.0), [b], FLOW) == 0.0

    def test_superposition(self):
        a, b = one_link(0.0, 0.0, vn=3.0), one_link(100.0, 0.0, vn=-5.0)
        pt = (40.0, 60.0)
        both = pressure_at(pt, [a, b], FLOW)
        assert both == pytest.approx(pressure_at(pt, [a], FLOW) + pressure_at(pt, [b], FLOW))

    def test_finite_inside_capsule(self):
        src = one_link(vn=10.0)
        for pt in ((0.0, 0.0), (5.0, 3.0), (-19.0, -9.0)):
            v = pressure_at(pt, [src], FLOW)
            assert math.isfinite(v)
            assert abs(v) <= strength(10.0) / (FLOW.link_width / 2) ** 3 + 1e-9

    @settings(max_examples=100)
    @given(st.floats(30.0, 400.0), st.floats(-math.pi, math.pi))
    def test_decay_with_distance(self, r, bearing):
        src = one_link(vn=10.0)
        d = (math.cos(bearing), math.sin(bearing))
        near = pressure_at((r * d[0], r * d[1]), [src], FLOW)
        far = pressure_at((2 * r * d[0], 2 * r * d[1]), [src], FLOW)
        # outside the capsule the kernel is exactly homogeneous of degree -3
        if r * abs(d[1]) > FLOW.link_width / 2 or r * abs(d[0]) > 20.0 + FLOW.link_width / 2:
            assert far == pytest.approx(near / 8.0, rel=1e-9, abs=1e-15)


class TestPorts:
    def test_layout_mirror_symmetric(self):
        b = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        pts = LAYOUT.world_positions(b)
        assert pts[0, 1] - 300.0 == pytest.approx(-(pts[1, 1] - 300.0))
        assert np.allclose(LAYOUT.world_normals(b), [[0.0, 1.0], [0.0, -1.0]])
        assert pts[0, 0] == pytest.approx(500.0 - LAYOUT.setback)

    def test_mirror_swaps_ports(self):
        leader = swimming(60, (700.0, 360.0))
        follower = swimming(60, (500.0, 300.0), sigma=0.1)
        p = clean_pressures(leader, follower, LAYOUT, FLOW)
        m = clean_pressures(leader.mirrored(), follower.mirrored(), LAYOUT, FLOW)
        assert np.allclose(p, m[::-1], rtol=1e-10, atol=1e-12)

    def test_shadowing_attenuates_far_side(self):
        # source 40 mm to the left of the head: the left port faces it
        follower = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        src = one_link(500.0 - 8.0, 340.0, vn=10.0)
        flat = dataclasses.replace(FLOW, shadow_exponent=0.0)
        on = clean_pressures(src, follower, LAYOUT, FLOW)
        off = clean_pressures(src, follower, LAYOUT, flat)
        assert on[0] == pytest.approx(off[0], rel=1e-12)
        assert abs(on[1]) < 1e-6 * abs(off[1])

    def test_host_link_excluded(self):
        follower = swimming(40)
        inc = dataclasses.replace(FLOW, exclude_host_link=False)
        assert not np.allclose(clean_pressures(None, follower, LAYOUT, FLOW),
                               clean_pressures(None, follower, LAYOUT, inc))


class TestHistory:
    def history(self, n):
        h = SourceHistory(1, 40.0, 0.02, capacity=8)
        for k in range(n):
            h.push(one_link(float(k), 0.0, heading=0.1 * k))
        return h

    def test_interpolation(self):
        pos, heading, _ = self.history(5).retarded(np.array([[1.5]]))
        assert pos[0, 0, 0] == pytest.approx(2.5)
        assert heading[0, 0] == pytest.approx(0.25)

    def test_clamped_to_oldest(self):
        pos, _, _ = self.history(20).retarded(np.array([[100.0]]))
        assert pos[0, 0, 0] == pytest.approx(12.0)

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            SourceHistory(1, 40.0, 0.02).retarded(np.zeros((1, 1)))

    def test_infinite_speed_is_instantaneous(self):
        params = dataclasses.replace(FLOW, transport_speed=math.inf)
        model = SensorModel(LAYOUT, params)
        leader = Robot.at_rest(SPEC, CpgParams(), (760.0, 340.0), 0.0)
        follower = Robot.at_rest(SPEC, CpgParams(), (500.0, 300.0), 0.0)
        for _ in range(30):
            leader.tick(0.0)
            follower.tick(0.0)
            p = model.pressures(leader.body, follower.body)
        assert np.allclose(p, clean_pressures(leader.body, follower.body, LAYOUT, params),
                           rtol=1e-12, atol=1e-15)


class TestCalibration:
    def frames(self, n, dt=0.02, speed=0.0):
        return [RawFrame(1.0 + 0.01 * k, -2.0, 0.1, speed, k * dt) for k in range(n)]

    def test_bias_is_mean(self):
        b = calibrate_bias(self.frames(25))
        assert b.p_left == pytest.approx(1.12)
        assert b.p_right == pytest.approx(-2.0)
        assert b.yaw == pytest.approx(0.1)

    def test_failures(self):
        with pytest.raises(CalibrationError):
            calibrate_bias([])
        with pytest.raises(CalibrationError):
            calibrate_bias(self.frames(10))
        with pytest.raises(CalibrationError):
            calibrate_bias(self.frames(25, speed=5.0))

    def test_offset_removed(self):
        params = dataclasses.replace(FLOW, raw_offset=(3.0, -1.5), noise_std=0.0,
                                     euler_noise_std=0.0)
        model = SensorModel(LAYOUT, params)
        body = BodyState.straight(SPEC, (500.0, 300.0), 0.4)
        model.calibrate([model.raw(None, body, 0.02 * k) for k in range(25)])
        f = model.sample(None, body, 0.5)
        assert f.p_left == pytest.approx(0.0, abs=1e-12)
        assert f.p_right == pytest.approx(0.0, abs=1e-12)
        assert f.euler[0] == pytest.approx(0.0, abs=1e-12)

    def test_injected_offset_and_initial_yaw(self):
        params = dataclasses.replace(FLOW, raw_offset=(50.0, 50.0), noise_std=0.0,
                                     euler_noise_std=0.0)
        model = SensorModel(LAYOUT, params)
        body = BodyState.straight(SPEC, (500.0, 300.0), math.radians(30.0))
        bias = model.calibrate([model.raw(None, body, 0.02 * k) for k in range(25)])
        assert bias.p_left == pytest.approx(50.0) and bias.p_right == pytest.approx(50.0)
        assert bias.yaw == pytest.approx(math.radians(30.0))
        f = model.sample(None, body, 0.5)
        assert (f.p_left, f.p_right) == pytest.approx((0.0, 0.0), abs=1e-12)
        assert f.euler[0] == pytest.approx(0.0, abs=1e-12)

    def test_rest_after_calibration_is_noise_only(self):
        model = SensorModel(LAYOUT, FLOW)
        body = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        model.calibrate([model.raw(None, body, 0.02 * k) for k in range(25)])
        p = np.array([model.sample(None, body, 0.5 + 0.02 * k).as_vector()[:2]
                      for k in range(400)])
        assert abs(p.mean()) < 0.05
        assert p.std() == pytest.approx(FLOW.noise_std, rel=0.15)


class TestSampling:
    def test_latency_shifts_output_exactly(self):
        lagged = SensorModel(LAYOUT, dataclasses.replace(FLOW, latency=0.07, seed=3))
        prompt = SensorModel(LAYOUT, dataclasses.replace(FLOW, latency=0.0, seed=3))
        assert lagged.delay == 4
        leader = Robot.at_rest(SPEC, CpgParams(), (760.0, 240.0), 0.0)
        follower = Robot.at_rest(SPEC, CpgParams(), (500.0, 300.0), 0.0)
        a, b = [], []
        for k in range(30):
            leader.tick(0.0)
            follower.tick(0.05)
            a.append(lagged.sample(leader.body, follower.body, 0.02 * k).as_vector())
            b.append(prompt.sample(leader.body, follower.body, 0.02 * k).as_vector())
        assert np.array_equal(np.array(a)[4:], np.array(b)[:-4])

    def test_latency_delays_frames(self):
        model = SensorModel(LAYOUT, dataclasses.replace(FLOW, latency=0.04))
        body = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        ts = [model.sample(None, body, 0.02 * k).t for k in range(6)]
        assert ts == pytest.approx([0.0, 0.0, 0.0, 0.02, 0.04, 0.06])

    def test_seeded_noise_reproducible(self):
        params = dataclasses.replace(FLOW, noise_std=0.5, seed=11)
        body = swimming(20)
        runs = []
        for _ in range(2):
            m = SensorModel(LAYOUT, params)
            runs.append([m.sample(None, body, 0.0).as_vector() for _ in range(5)])
        assert np.array_equal(runs[0], runs[1])

    def test_frame_vector_layout(self):
        body = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        f = sample_sensors(None, body, LAYOUT, FLOW, 0.0, motor_cmds=(1.0, 2.0, 3.0),
                           bias=Bias(yaw=0.0))
        v = f.as_vector()
        assert v.shape == (8,)
        assert list(v[5:]) == [1.0, 2.0, 3.0]

    def test_gait_drives_pitch_and_roll(self):
        params = dataclasses.replace(FLOW, euler_noise_std=0.0)
        body = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        f = sample_sensors(None, body, LAYOUT, params, 0.0, gait=(1.0, 0.0))
        assert f.euler[2] == pytest.approx(params.euler_amplitude)
        assert f.euler[1] == pytest.approx(0.0, abs=1e-15)

    def test_param_validation(self):
        with pytest.raises(InvalidArgument):
            FlowModelParams(noise_std=-1.0)
        with pytest.raises(InvalidArgument):
            FlowModelParams(transport_speed=0.0)
        with pytest.raises(InvalidArgument):
            FlowModelParams(latency=-0.1)
