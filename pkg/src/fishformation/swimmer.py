"""Planar multi-link swimmer with anisotropic resistive drag.

Links are stored in maximal coordinates (centre, heading, velocities) and
pinned together by a velocity projection followed by a Newton position
projection every step. Link 0 is the head. Units: mm, kg, s; torques in
kg mm^2 / s^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cpg import CpgParams, CpgState, clamp_steering
from .errors import InvalidArgument, NumericError
from .geometry import Point2, Pose2, TankSpec, as_xy, wrap_angle


@dataclass(frozen=True)
class BodySpec:
    n_links: int = 6
    body_length: float = 200.0
    link_width: float = 20.0
    link_mass: float = 0.003
    drag_normal: float = 3e-3          # kg / (mm s), per unit link length
    drag_tangential: float = 6e-4
    joint_stiffness: float = 1e5       # torque units per rad
    joint_damping: float = 1.0         # torque units per rad/s
    torque_limit: float = 51750.0

    def __post_init__(self):
        if self.n_links < 2:
            raise InvalidArgument("need at least two links")
        if not self.drag_normal > self.drag_tangential > 0:
            raise InvalidArgument("require drag_normal > drag_tangential > 0")
        if not (self.body_length > 0 and self.link_width > 0 and self.link_mass > 0):
            raise InvalidArgument("body dimensions and mass must be positive")

    @property
    def link_length(self) -> float:
        return self.body_length / self.n_links

    @property
    def link_inertia(self) -> float:
        return self.link_mass * (self.link_length ** 2 + self.link_width ** 2) / 12.0

    @property
    def rotational_drag(self) -> float:
        return self.drag_normal * self.link_length ** 3 / 12.0

    def kernel_args(self):
        return (self.link_length, self.link_mass, self.link_inertia, self.drag_normal,
                self.drag_tangential, self.rotational_drag, self.joint_stiffness,
                self.joint_damping)


@dataclass
class BodyState:
    pos: np.ndarray        # (n, 2) link centres
    heading: np.ndarray    # (n,)
    vel: np.ndarray        # (n, 2)
    omega: np.ndarray      # (n,)
    link_length: float

    @classmethod
    def straight(cls, spec: BodySpec, nose, heading: float) -> "BodyState":
        """Straight body at rest with its nose at ``nose``."""
        n, l = spec.n_links, spec.link_length
        t = np.array([math.cos(heading), math.sin(heading)])
        pos = as_xy(nose)[None, :] - ((np.arange(n) + 0.5) * l)[:, None] * t[None, :]
        return cls(pos, np.full(n, wrap_angle(heading)), np.zeros((n, 2)), np.zeros(n), l)

    def copy(self) -> "BodyState":
        return BodyState(self.pos.copy(), self.heading.copy(), self.vel.copy(),
                         self.omega.copy(), self.link_length)

    @property
    def n_links(self) -> int:
        return len(self.heading)

    def tangents(self) -> np.ndarray:
        return np.column_stack([np.cos(self.heading), np.sin(self.heading)])

    def endpoints(self):
        """Front and rear endpoints of every link, each (n, 2)."""
        t = self.tangents() * (0.5 * self.link_length)
        return self.pos + t, self.pos - t

    def joint_angles(self) -> np.ndarray:
        return wrap_angle(self.heading[:-1] - self.heading[1:])

    def chain_residual(self) -> float:
        front, rear = self.endpoints()
        return float(np.max(np.abs(rear[:-1] - front[1:]))) if self.n_links > 1 else 0.0

    def body_heading(self) -> float:
        """Circular mean of link headings; smoother than the oscillating head link."""
        return math.atan2(float(np.sin(self.heading).sum()), float(np.cos(self.heading).sum()))

    def centroid(self) -> np.ndarray:
        return self.pos.mean(axis=0)

    def kinetic_energy(self, spec: BodySpec) -> float:
        return float(0.5 * spec.link_mass * np.sum(self.vel ** 2)
                     + 0.5 * spec.link_inertia * np.sum(self.omega ** 2))

    def elastic_energy(self, spec: BodySpec) -> float:
        return float(0.5 * spec.joint_stiffness * np.sum(self.joint_angles() ** 2))

    def translated(self, dx: float, dy: float) -> "BodyState":
        s = self.copy()
        s.pos += np.array([dx, dy])
        return s

    def mirrored(self) -> "BodyState":
        """Reflection across the x axis."""
        s = self.copy()
        s.pos[:, 1] *= -1
        s.vel[:, 1] *= -1
        s.heading = wrap_angle(-self.heading) * np.ones(self.n_links)
        s.omega = -self.omega
        return s


def body_step(state: BodyState, spec: BodySpec, torques, dt: float) -> BodyState:
    torques = np.asarray(torques, dtype=float)
    if torques.shape != (spec.n_links - 1,):
        raise InvalidArgument(f"expected {spec.n_links - 1} joint torques, got shape {torques.shape}")
    if not 0 < dt <= 0.02:
        raise InvalidArgument(f"dt must lie in (0, 0.02], got {dt}")
    new = state.copy()
    tau = np.clip(torques, -spec.torque_limit, spec.torque_limit)
    status = _kernels.body_substep(new.pos, new.heading, new.vel, new.omega, tau,
                                   *spec.kernel_args(), dt)
    check_status(status, new)
    return new


def check_status(status: int, state: BodyState) -> None:
    if status == _kernels.NONFINITE:
        raise NumericError("swimmer state became non-finite")
    if status == _kernels.NO_CONVERGENCE:
        raise NumericError(f"joint projection did not converge (residual {state.chain_residual():.3g} mm)")


def nose_position(state: BodyState) -> Point2:
    front, _ = state.endpoints()
    return Point2(float(front[0, 0]), float(front[0, 1]))


def tail_pose(state: BodyState) -> Pose2:
    return Pose2(Point2(float(state.pos[-1, 0]), float(state.pos[-1, 1])), float(state.heading[-1]))


@dataclass(frozen=True)
class ContactReport:
    contact: bool
    min_separation: float


def segment_distance(p1, q1, p2, q2) -> float:
    """Minimum distance between segments p1-q1 and p2-q2."""
    return float(_kernels.segment_distance(*as_xy(p1), *as_xy(q1), *as_xy(p2), *as_xy(q2)))


def detect_contact(a: BodyState, b: BodyState, spec: BodySpec) -> ContactReport:
    """Capsule-capsule separation: link centrelines inflated by half the link width."""
    fa, ra = a.endpoints()
    fb, rb = b.endpoints()
    sep = float(_kernels.min_segment_distance(fa, ra, fb, rb)) - spec.link_width
    return ContactReport(sep <= 0.0, sep)


def wall_interaction(state: BodyState, tank: TankSpec) -> BodyState:
    """Shift a penetrating body back inside the tank and zero its outward wall velocity.

    Only link centreline endpoints are tested. The correction is a rigid
    translation, so the chain stays connected.
    """
    front, rear = state.endpoints()
    pts = np.vstack([front, rear])
    shift = np.zeros(2)
    lo = np.zeros(2)
    hi = np.array([tank.length, tank.width])
    for ax in range(2):
        below = lo[ax] - pts[:, ax].min()
        above = pts[:, ax].max() - hi[ax]
        if below > 0:
            shift[ax] = below
        elif above > 0:
            shift[ax] = -above
    if not np.any(shift):
        return state
    new = state.translated(*shift)
    f2, r2 = new.endpoints()
    for ax in range(2):
        if shift[ax] == 0:
            continue
        # links touching the wall lose their velocity component into it
        if shift[ax] > 0:
            touching = np.minimum(f2[:, ax], r2[:, ax]) <= lo[ax] + 1e-9
            into = new.vel[:, ax] < 0
        else:
            touching = np.maximum(f2[:, ax], r2[:, ax]) >= hi[ax] - 1e-9
            into = new.vel[:, ax] > 0
        mask = touching & into
        new.vel[mask, ax] = 0.0
    return new


SUBSTEP_DT = 0.0005
SUBSTEPS_PER_TICK = 40


@dataclass
class Robot:
    """One fish: CPG and body advanced together at the 50 Hz control rate.

    ``tick`` runs 40 fused CPG + body substeps. While ``active`` is false the
    motors hold zero torque and the oscillator is frozen.
    """

    body: BodyState
    cpg: CpgState
    spec: BodySpec
    params: CpgParams
    torque: np.ndarray = None
    active: bool = True

    def __post_init__(self):
        if self.params.n_joints != self.spec.n_links - 1:
            raise InvalidArgument("CPG joint count must equal n_links - 1")
        if self.torque is None:
            self.torque = np.zeros(self.params.n_joints)

    @classmethod
    def at_rest(cls, spec: BodySpec, params: CpgParams, nose, heading: float,
                active: bool = True) -> "Robot":
        return cls(BodyState.straight(spec, nose, heading), CpgState.at_rest(params),
                   spec, params, active=active)

    def tick(self, sigma: float) -> None:
        b, c, p = self.body, self.cpg, self.params
        limit = min(p.torque_limit, self.spec.torque_limit)
        status = _kernels.advance_tick(
            c.theta, c.r, c.rdot, c.x, p.frequency, p.amplitudes(), p.coupling_weight,
            p.phase_bias, p.amplitude_gain, clamp_steering(sigma, p.clamp_fraction), limit,
            self.active, b.pos, b.heading, b.vel, b.omega, *self.spec.kernel_args(),
            SUBSTEP_DT, SUBSTEPS_PER_TICK, self.torque)
        check_status(status, b)

    def motor_commands(self) -> tuple:
        """Last torques of the three head-most joints."""
        return tuple(float(v) for v in self.torque[:3])

    def gait(self) -> tuple:
        """(amplitude fraction, phase) of the head oscillator."""
        return (float(self.cpg.r[0] / self.params.target_amplitude), float(self.cpg.theta[0]))


def write_trajectory_csv(path, times, states) -> None:
    """Body trajectory: t, per-link x/y/heading, plus nose and tail columns."""
    n = states[0].n_links
    head = ["t"]
    for i in range(n):
        head += [f"x{i}", f"y{i}", f"heading{i}"]
    head += ["nose_x", "nose_y", "tail_x", "tail_y", "tail_heading"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for t, s in zip(times, states):
            row = [f"{t:.4f}"]
            for i in range(n):
                row += [f"{s.pos[i, 0]:.6f}", f"{s.pos[i, 1]:.6f}", f"{s.heading[i]:.9f}"]
            nose = nose_position(s)
            tail = tail_pose(s)
            row += [f"{nose.x:.6f}", f"{nose.y:.6f}", f"{tail.position.x:.6f}",
                    f"{tail.position.y:.6f}", f"{tail.heading:.9f}"]
            w.writerow(row)
