import math

import numpy as np
import pytest

from fishformation.cpg import CpgParams
from fishformation.errors import InvalidArgument
from fishformation.geometry import TankSpec
from fishformation.swimmer import (BodySpec, BodyState, Robot, body_step, detect_contact,
                                   nose_position, segment_distance, tail_pose, wall_interaction)

SPEC = BodySpec()
P = CpgParams()


def bent(spec, nose, joint_angles):
    """A connected body at rest with the given joint angles."""
    h = np.cumsum(np.r_[0.0, -np.asarray(joint_angles, float)])
    t = np.column_stack([np.cos(h), np.sin(h)])
    half = spec.link_length / 2
    pos = np.empty((spec.n_links, 2))
    pos[0] = np.asarray(nose) - half * t[0]
    for i in range(1, spec.n_links):
        pos[i] = pos[i - 1] - half * t[i - 1] - half * t[i]
    return BodyState(pos, h, np.zeros((spec.n_links, 2)), np.zeros(spec.n_links),
                     spec.link_length)


def swim(ticks, sigma=0.0, nose=(300.0, 300.0), heading=0.0):
    r = Robot.at_rest(SPEC, P, nose, heading)
    for _ in range(ticks):
        r.tick(sigma)
    return r


class TestState:
    def test_straight_geometry(self):
        s = BodyState.straight(SPEC, (100.0, 50.0), 0.0)
        assert nose_position(s).x == pytest.approx(100.0)
        assert s.chain_residual() < 1e-12
        assert tail_pose(s).position.x == pytest.approx(100.0 - 200.0 + SPEC.link_length / 2)

    def test_spec_validation(self):
        with pytest.raises(InvalidArgument):
            BodySpec(drag_normal=1e-4, drag_tangential=6e-4)
        with pytest.raises(InvalidArgument):
            BodySpec(n_links=1)

    def test_torque_shape_checked(self):
        s = BodyState.straight(SPEC, (0.0, 0.0), 0.0)
        with pytest.raises(InvalidArgument):
            body_step(s, SPEC, np.zeros(4), 0.0005)


class TestPhysics:
    def test_passive_energy_decays(self):
        s = bent(SPEC, (500.0, 300.0), [0.2, -0.1, 0.15, -0.2, 0.1])
        e = []
        for _ in range(400):
            s = body_step(s, SPEC, np.zeros(5), 0.0005)
            e.append(s.kinetic_energy(SPEC) + s.elastic_energy(SPEC))
        # symplectic Euler conserves a modified energy, so compare per-window maxima
        w = np.array(e).reshape(20, 20).max(axis=1)
        assert np.all(np.diff(w) <= 0)
        assert w[-1] < 0.01 * w[0]

    def test_chain_stays_connected(self):
        r = swim(100, 0.2)
        assert r.body.chain_residual() < 1e-6

    def test_at_rest_stays_at_rest(self):
        s = BodyState.straight(SPEC, (300.0, 300.0), 0.4)
        s2 = body_step(s, SPEC, np.zeros(5), 0.0005)
        assert np.array_equal(s2.pos, s.pos)

    def test_translation_invariance(self):
        a = swim(50, 0.1, nose=(300.0, 300.0))
        b = swim(50, 0.1, nose=(800.0, 100.0))
        assert np.allclose(b.body.pos - a.body.pos, [500.0, -200.0], atol=1e-8)

    def test_mirror_symmetry(self):
        a = Robot.at_rest(SPEC, P, (500.0, 300.0), 0.0)
        b = Robot.at_rest(SPEC, P, (500.0, -300.0), 0.0)
        # the mirror image runs the oscillator half a cycle apart with opposite steering
        b.cpg.theta = b.cpg.theta + math.pi
        for _ in range(100):
            a.tick(0.2)
            b.tick(-0.2)
        assert np.allclose(a.body.pos[:, 0], b.body.pos[:, 0], atol=1e-8)
        assert np.allclose(a.body.pos[:, 1], -b.body.pos[:, 1], atol=1e-8)

    def test_swims_forward(self):
        r = swim(150)
        assert nose_position(r.body).x > 300.0 + 100.0

    def test_positive_steering_turns_left(self):
        left = swim(150, 0.3)
        right = swim(150, -0.3)
        assert left.body.body_heading() > 0.2
        assert right.body.body_heading() < -0.2

    def test_inactive_robot_holds_still(self):
        r = Robot.at_rest(SPEC, P, (300.0, 300.0), 0.0, active=False)
        before = r.body.pos.copy()
        for _ in range(10):
            r.tick(0.3)
        assert np.array_equal(r.body.pos, before)
        assert np.all(r.cpg.r == 0)


class TestContact:
    def test_segment_distance(self):
        assert segment_distance((0, 0), (10, 0), (0, 5), (10, 5)) == pytest.approx(5.0)
        assert segment_distance((0, 0), (10, 0), (5, -5), (5, 5)) == 0.0
        assert segment_distance((0, 0), (1, 0), (4, 4), (4, 8)) == pytest.approx(5.0)

    def test_contact_threshold_is_link_width(self):
        a = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        near = BodyState.straight(SPEC, (500.0, 300.0 + SPEC.link_width - 0.1), 0.0)
        far = BodyState.straight(SPEC, (500.0, 300.0 + SPEC.link_width + 0.1), 0.0)
        assert detect_contact(a, near, SPEC).contact
        rep = detect_contact(a, far, SPEC)
        assert not rep.contact
        assert rep.min_separation == pytest.approx(0.1)


class TestWalls:
    tank = TankSpec()

    def test_inside_unchanged(self):
        s = BodyState.straight(SPEC, (500.0, 300.0), 0.0)
        assert wall_interaction(s, self.tank) is s

    def test_pushed_back_and_velocity_cleared(self):
        s = BodyState.straight(SPEC, (self.tank.length + 10.0, 300.0), 0.0)
        s.vel[:] = [50.0, 5.0]
        out = wall_interaction(s, self.tank)
        assert nose_position(out).x == pytest.approx(self.tank.length)
        assert out.vel[0, 0] == 0.0
        assert out.vel[0, 1] == 5.0
        assert out.chain_residual() < 1e-9
