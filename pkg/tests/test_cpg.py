import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fishformation.cpg import (STEERING_LIMIT, CpgParams, CpgState, clamp_steering, cpg_step,
                               simulate, truncate_torque, write_trace_csv)
from fishformation.errors import InvalidArgument, NumericError

P = CpgParams()
DT = 0.0005


def steady_lag_and_frequency(theta_hist, dt, window=0.5):
    n = int(window / dt)
    tail = theta_hist[-n:]
    lag = np.angle(np.exp(1j * (tail[:, 1:] - tail[:, :-1])))
    freq = (tail[-1] - tail[0]) / ((n - 1) * dt) / (2 * math.pi)
    return lag, freq


class TestClamp:
    @given(st.floats(-1e6, 1e6))
    def test_bounded(self, s):
        assert abs(clamp_steering(s)) <= STEERING_LIMIT

    def test_identity_inside(self):
        assert clamp_steering(0.12) == 0.12
        assert clamp_steering(-0.5) == -0.3

    def test_truncate(self):
        assert np.array_equal(truncate_torque([1.0, -5.0, 9.0], 4.0), [1.0, -4.0, 4.0])
        with pytest.raises(InvalidArgument):
            truncate_torque([1.0], 0.0)


class TestParams:
    def test_validation(self):
        with pytest.raises(InvalidArgument):
            CpgParams(frequency=0.0)
        with pytest.raises(InvalidArgument):
            CpgParams(n_joints=0)
        with pytest.raises(InvalidArgument):
            CpgParams(clamp_fraction=0.0)

    def test_dt_range(self):
        s = CpgState.at_rest(P)
        with pytest.raises(InvalidArgument):
            cpg_step(s, P, 0.0, 0.0)
        with pytest.raises(InvalidArgument):
            cpg_step(s, P, 0.0, 0.05)

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            cpg_step(CpgState.at_rest(P), P, math.nan, DT)


class TestDynamics:
    def test_step_matches_simulate(self):
        s0 = CpgState.random(P, np.random.default_rng(1))
        s = s0
        for _ in range(50):
            s, tau = cpg_step(s, P, 0.1, DT)
        s2, _, torques = simulate(s0, P, 0.1, DT, 50)
        assert np.array_equal(s.theta, s2.theta)
        assert np.array_equal(tau, torques[-1])

    def test_steady_state_is_a_fixed_point(self):
        s0 = CpgState.steady(P)
        s, th, _ = simulate(s0, P, 0.0, DT, 2000)
        assert np.allclose(s.r, P.amplitudes(), atol=1e-12)
        assert np.allclose(s.x, 0.0, atol=1e-12)
        lag = np.angle(np.exp(1j * (th[:, 1:] - th[:, :-1])))
        assert np.allclose(np.degrees(lag), -65.0, atol=1e-9)

    def test_step_does_not_mutate(self):
        s = CpgState.at_rest(P)
        before = s.theta.copy()
        cpg_step(s, P, 0.0, DT)
        assert np.array_equal(s.theta, before)

    def test_phase_lock_and_frequency(self):
        s, th, _ = simulate(CpgState.random(P, np.random.default_rng(3)), P, 0.0, DT, 4000)
        lag, freq = steady_lag_and_frequency(th, DT)
        assert np.all(np.abs(np.degrees(lag) + 65.0) < 0.5)
        assert np.all(np.abs(freq - 5.0) < 0.05)

    def test_amplitude_converges_without_overshoot(self):
        s, _, _ = simulate(CpgState.at_rest(P), P, 0.0, DT, 4000)
        assert np.allclose(s.r, P.target_amplitude, rtol=1e-3)
        # critically damped from rest: the amplitude never overshoots
        state = CpgState.at_rest(P)
        peak = 0.0
        for _ in range(40):
            state, _, _ = simulate(state, P, 0.0, DT, 100)
            peak = max(peak, state.r.max())
        assert peak <= P.target_amplitude * (1 + 1e-12)

    def test_offset_tracks_steering(self):
        s, _, tau = simulate(CpgState.at_rest(P), P, 0.2, DT, 4000)
        assert np.allclose(s.x, 0.2 * P.target_amplitude, rtol=1e-6)
        # a full cycle of torque averages to the offset
        cycle = int(round(1 / (P.frequency * DT)))
        assert np.allclose(tau[-cycle:].mean(axis=0), 0.2 * P.target_amplitude, rtol=0.02)

    def test_steering_is_clamped_inside(self):
        a, _, _ = simulate(CpgState.at_rest(P), P, 5.0, DT, 2000)
        b, _, _ = simulate(CpgState.at_rest(P), P, STEERING_LIMIT, DT, 2000)
        assert np.array_equal(a.x, b.x)

    def test_torque_bounded(self):
        p = CpgParams(torque_limit=30000.0)
        _, _, tau = simulate(CpgState.at_rest(p), p, 0.3, DT, 4000)
        assert np.max(np.abs(tau)) <= 30000.0


def test_trace_csv(tmp_path):
    _, th, tau = simulate(CpgState.at_rest(P), P, 0.0, DT, 10)
    f = tmp_path / "cpg.csv"
    write_trace_csv(f, DT, th, tau)
    lines = f.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["t", "phase_0"]
    assert len(lines) == 11
