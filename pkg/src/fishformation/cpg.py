"""Kuramoto-style central pattern generator for the joint torques.

Each joint oscillator has a phase, a critically damped amplitude and a
first-order offset. The steering fraction sigma moves every offset toward
``sigma * amplitude``; it is the only control input.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidArgument, NumericError

STEERING_LIMIT = 0.3


@dataclass(frozen=True)
class CpgParams:
    n_joints: int = 5
    frequency: float = 5.0                 # Hz
    target_amplitude: float = 45000.0      # torque units (kg mm^2 / s^2)
    coupling_weight: float = 20.0          # 1/s
    phase_bias: float = math.radians(-65.0)
    amplitude_gain: float = 20.0           # 1/s
    torque_limit: float = 51750.0          # 1.15 x amplitude
    clamp_fraction: float = STEERING_LIMIT

    def __post_init__(self):
        if self.n_joints < 1:
            raise InvalidArgument("need at least one joint")
        if not self.frequency > 0:
            raise InvalidArgument("frequency must be positive")
        if not self.target_amplitude > 0:
            raise InvalidArgument("target amplitude must be positive")
        if not self.torque_limit > 0:
            raise InvalidArgument("torque limit must be positive")
        if not 0 < self.clamp_fraction <= 1:
            raise InvalidArgument("clamp_fraction must lie in (0, 1]")

    def amplitudes(self) -> np.ndarray:
        return np.full(self.n_joints, float(self.target_amplitude))


@dataclass
class CpgState:
    theta: np.ndarray
    r: np.ndarray
    rdot: np.ndarray
    x: np.ndarray

    @classmethod
    def at_rest(cls, params: CpgParams, phases=None) -> "CpgState":
        """Zero amplitude and offset; phases already at the programmed lag unless given."""
        n = params.n_joints
        theta = np.arange(n) * params.phase_bias if phases is None else np.array(phases, float)
        return cls(theta, np.zeros(n), np.zeros(n), np.zeros(n))

    @classmethod
    def steady(cls, params: CpgParams) -> "CpgState":
        """Phase-locked at full amplitude with zero offset: the unsteered gait."""
        s = cls.at_rest(params)
        s.r[:] = params.amplitudes()
        return s

    @classmethod
    def random(cls, params: CpgParams, rng: np.random.Generator) -> "CpgState":
        return cls.at_rest(params, rng.uniform(0.0, 2.0 * np.pi, params.n_joints))

    def copy(self) -> "CpgState":
        return CpgState(self.theta.copy(), self.r.copy(), self.rdot.copy(), self.x.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.r))
                    and np.all(np.isfinite(self.rdot)) and np.all(np.isfinite(self.x)))


def clamp_steering(sigma: float, fraction: float = STEERING_LIMIT) -> float:
    return float(min(max(sigma, -fraction), fraction))


def truncate_torque(raw, limit: float):
    if not limit > 0:
        raise InvalidArgument("torque limit must be positive")
    return np.clip(raw, -limit, limit)


def cpg_step(state: CpgState, params: CpgParams, sigma: float, dt: float):
    """Advance one Euler step; returns the new state and the joint torques."""
    if not 0 < dt <= 0.02:
        raise InvalidArgument(f"dt must lie in (0, 0.02], got {dt}")
    if not state.is_finite() or not math.isfinite(sigma):
        raise NumericError("non-finite CPG state or steering input")
    new = state.copy()
    torque = np.empty(params.n_joints)
    _kernels.cpg_substep(new.theta, new.r, new.rdot, new.x, params.frequency,
                         params.amplitudes(), params.coupling_weight, params.phase_bias,
                         params.amplitude_gain, clamp_steering(sigma, params.clamp_fraction),
                         params.torque_limit, dt, torque)
    return new, torque


def simulate(state: CpgState, params: CpgParams, sigma: float, dt: float, n_steps: int):
    """Run ``n_steps`` steps; returns (final state, phases (n_steps, J), torques (n_steps, J))."""
    s = state.copy()
    amps = params.amplitudes()
    sig = clamp_steering(sigma, params.clamp_fraction)
    phases = np.empty((n_steps, params.n_joints))
    torques = np.empty((n_steps, params.n_joints))
    buf = np.empty(params.n_joints)
    for k in range(n_steps):
        _kernels.cpg_substep(s.theta, s.r, s.rdot, s.x, params.frequency, amps,
                             params.coupling_weight, params.phase_bias, params.amplitude_gain,
                             sig, params.torque_limit, dt, buf)
        phases[k] = s.theta
        torques[k] = buf
    if not s.is_finite():
        raise NumericError("CPG integration produced non-finite values")
    return s, phases, torques


def write_trace_csv(path, dt: float, phases: np.ndarray, torques: np.ndarray) -> None:
    n = phases.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"phase_{i}" for i in range(n)] + [f"torque_{i}" for i in range(n)])
        for k in range(len(phases)):
            w.writerow([f"{(k + 1) * dt:.6f}"] + [f"{v:.9g}" for v in phases[k]]
                       + [f"{v:.9g}" for v in torques[k]])

