"""Surrogate bilateral pressure sensing at the follower's head.

Each link of each body acts as a lateral dipole: strength proportional to
its normal velocity times ``width**2 * length``, falling off as
``distance**-decay_exponent`` and signed by the cosine between the link
normal and the source-to-point bearing. That bare field is ``pressure_at``.

The head ports add two sensor-side effects on top of the field, both
linear in the sources:

* shadowing: a side-facing port responds with gain
  ``((1 + n . u) / 2) ** shadow_exponent``, where ``n`` is its outward normal
  and ``u`` the unit vector toward the source link, so sources dead ahead or
  on the far side of the head are attenuated;
* transport: a disturbance from a link reaches a port after ``distance /
  transport_speed``, so ports read each link's state from that long ago.

The sensors' own mounting link is excluded from the ego-motion sum.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, InvalidArgument
from .geometry import as_xy, wrap_angle
from .swimmer import BodyState

N_CHANNELS = 8
CHANNELS = ("p_left", "p_right", "yaw", "pitch", "roll", "motor_0", "motor_1", "motor_2")


@dataclass(frozen=True)
class SensorLayout:
    """Two side-facing ports on the head link, mirror-symmetric about the body axis.

    Positions are in the head-link frame (x forward from the link centre, y
    to the left); row 0 is the left port, row 1 the right port.
    """

    setback: float = 8.0        # mm behind the nose
    half_width: float = 10.0    # lateral offset of each port

    def local_positions(self, link_length: float) -> np.ndarray:
        x = 0.5 * link_length - self.setback
        return np.array([[x, self.half_width], [x, -self.half_width]])

    @staticmethod
    def local_normals() -> np.ndarray:
        return np.array([[0.0, 1.0], [0.0, -1.0]])

    @staticmethod
    def _rotation(body: BodyState) -> np.ndarray:
        c, s = math.cos(body.heading[0]), math.sin(body.heading[0])
        return np.array([[c, -s], [s, c]])

    def world_positions(self, body: BodyState) -> np.ndarray:
        return body.pos[0] + self.local_positions(body.link_length) @ self._rotation(body).T

    def world_normals(self, body: BodyState) -> np.ndarray:
        return self.local_normals() @ self._rotation(body).T


@dataclass(frozen=True)
class FlowModelParams:
    dipole_coefficient: float = 1.0       # Pa mm^3 per (mm/s) per mm^3 of link
    decay_exponent: float = 3.0
    link_width: float = 20.0
    transport_speed: float = 500.0        # mm/s; math.inf for instantaneous sensing
    shadow_exponent: float = 4.0          # 0 disables port shadowing
    noise_std: float = 0.18               # Pa, 2% of the staggered-formation RMS
    euler_noise_std: float = math.radians(0.2)
    euler_amplitude: float = math.radians(2.0)
    latency: float = 0.0                  # s
    seed: int = 0
    raw_offset: tuple = (0.0, 0.0)        # constant port offsets removed by calibration
    exclude_host_link: bool = True

    def __post_init__(self):
        if self.noise_std < 0 or self.euler_noise_std < 0:
            raise InvalidArgument("noise standard deviations must be non-negative")
        if self.latency < 0:
            raise InvalidArgument("latency must be non-negative")
        if not self.transport_speed > 0:
            raise InvalidArgument("transport speed must be positive")
        if self.shadow_exponent < 0:
            raise InvalidArgument("shadow exponent must be non-negative")


def _normal_speed(body: BodyState) -> np.ndarray:
    return -body.vel[:, 0] * np.sin(body.heading) + body.vel[:, 1] * np.cos(body.heading)


def _dipole(points, pos, heading, vn, link_length, params, normals=None, mask=None):
    """Pressure at ``points`` (k, 2) from link sources.

    ``pos`` is (n, 2) or (k, n, 2) and ``heading``/``vn`` (n,) or (k, n), so
    every point may see its own (retarded) copy of the sources. ``normals``
    (k, 2) switches on port shadowing.
    """
    k = len(points)
    pos = np.broadcast_to(pos, (k,) + np.shape(pos)[-2:])
    heading = np.broadcast_to(heading, pos.shape[:2])
    vn = np.broadcast_to(vn, pos.shape[:2])
    c, s = np.cos(heading), np.sin(heading)
    strength = params.dipole_coefficient * vn * params.link_width ** 2 * link_length
    if mask is not None:
        strength = strength * mask
    rel = points[:, None, :] - pos
    along = rel[..., 0] * c + rel[..., 1] * s
    across = -rel[..., 0] * s + rel[..., 1] * c
    # inside a link's capsule: evaluate on the nearest surface point instead
    half = 0.5 * link_length
    foot = np.clip(along, -half, half)
    gap = np.hypot(along - foot, across)
    radius = 0.5 * params.link_width
    inside = gap < radius
    if np.any(inside):
        scale = np.where(inside, radius / np.where(gap > 0, gap, 1.0), 1.0)
        along = foot + (along - foot) * scale
        across = np.where(inside & (gap == 0), radius, across * scale)
    dist = np.hypot(along, across)
    p = strength * (across / dist) / dist ** params.decay_exponent
    if normals is not None and params.shadow_exponent > 0:
        # bearing from the port toward the source, rotated back to world
        ux = -(along * c - across * s) / dist
        uy = -(along * s + across * c) / dist
        facing = ux * normals[:, None, 0] + uy * normals[:, None, 1]
        p = p * (0.5 * (1.0 + facing)) ** params.shadow_exponent
    return p.sum(axis=1)


def _host_mask(n_links: int, params: FlowModelParams):
    if not params.exclude_host_link:
        return None
    mask = np.ones(n_links)
    mask[0] = 0.0
    return mask


def pressure_at(point, sources, params: FlowModelParams, skip=None) -> float:
    """Superposed dipole pressure at ``point`` from every link of every body in ``sources``.

    ``skip`` optionally maps a source index to a link index that is left out.
    """
    pts = as_xy(point)[None, :]
    total = 0.0
    for k, body in enumerate(sources):
        mask = None
        if skip is not None and k in skip:
            mask = np.ones(body.n_links)
            mask[skip[k]] = 0.0
        total += float(_dipole(pts, body.pos, body.heading, _normal_speed(body),
                               body.link_length, params, mask=mask)[0])
    return total


def clean_pressures(leader: BodyState | None, follower: BodyState, layout: SensorLayout,
                    params: FlowModelParams) -> np.ndarray:
    """Noise-free (p_left, p_right) with instantaneous transport, ego-motion included."""
    pts = layout.world_positions(follower)
    nrm = layout.world_normals(follower)
    p = _dipole(pts, follower.pos, follower.heading, _normal_speed(follower),
                follower.link_length, params, nrm, _host_mask(follower.n_links, params))
    if leader is not None:
        p = p + _dipole(pts, leader.pos, leader.heading, _normal_speed(leader),
                        leader.link_length, params, nrm)
    return p


class SourceHistory:
    """Ring buffer of one body's link states at the control rate."""

    def __init__(self, n_links: int, link_length: float, dt: float, capacity: int = 128):
        self.dt = dt
        self.link_length = link_length
        self.capacity = capacity
        self.pos = np.zeros((capacity, n_links, 2))
        self.heading = np.zeros((capacity, n_links))
        self.vn = np.zeros((capacity, n_links))
        self.count = 0

    def push(self, body: BodyState) -> None:
        i = self.count % self.capacity
        self.pos[i] = body.pos
        self.heading[i] = body.heading
        self.vn[i] = _normal_speed(body)
        self.count += 1

    def newest_positions(self) -> np.ndarray:
        return self.pos[(self.count - 1) % self.capacity]

    def retarded(self, delay_ticks: np.ndarray):
        """Link states ``delay_ticks`` (k, n) before the newest entry, linearly interpolated.

        Delays reaching past the oldest stored entry read that entry.
        """
        if self.count == 0:
            raise InvalidArgument("source history is empty")
        newest = self.count - 1
        oldest = max(0, self.count - self.capacity)
        f = np.clip(newest - delay_ticks, oldest, newest)
        i0 = np.floor(f).astype(np.int64)
        i1 = np.minimum(i0 + 1, newest)
        w = f - i0
        link = np.arange(self.pos.shape[1])[None, :]
        a0, a1 = i0 % self.capacity, i1 % self.capacity
        pos = self.pos[a0, link] * (1.0 - w)[..., None] + self.pos[a1, link] * w[..., None]
        h0 = self.heading[a0, link]
        heading = h0 + w * wrap_angle(self.heading[a1, link] - h0)
        vn = self.vn[a0, link] * (1.0 - w) + self.vn[a1, link] * w
        return pos, heading, vn


def retarded_pressures(points, normals, history: SourceHistory, params: FlowModelParams,
                       mask=None) -> np.ndarray:
    """Port pressures from one body, each link seen one transport delay in the past."""
    dist = np.linalg.norm(points[:, None, :] - history.newest_positions()[None], axis=2)
    delay = dist / (params.transport_speed * history.dt)
    pos, heading, vn = history.retarded(delay)
    return _dipole(points, pos, heading, vn, history.link_length, params, normals, mask)


@dataclass(frozen=True)
class SensorFrame:
    p_left: float
    p_right: float
    euler: tuple           # (yaw, pitch, roll)
    motor_cmds: tuple      # three head-most joint torques
    t: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.p_left, self.p_right, *self.euler, *self.motor_cmds])


@dataclass(frozen=True)
class RawFrame:
    """Uncalibrated reading used for bias estimation."""
    p_left: float
    p_right: float
    yaw: float
    speed: float          # mm/s, the robot's own speed
    t: float


@dataclass(frozen=True)
class Bias:
    p_left: float = 0.0
    p_right: float = 0.0
    yaw: float = 0.0


def calibrate_bias(window, min_duration: float = 0.5, speed_threshold: float = 1.0) -> Bias:
    """Mean pressure per channel and mean yaw over an at-rest window."""
    frames = list(window)
    if not frames:
        raise CalibrationError("empty calibration window")
    if len(frames) > 1:
        span = frames[-1].t - frames[0].t + (frames[1].t - frames[0].t)
    else:
        span = 0.0
    if span < min_duration - 1e-9:
        raise CalibrationError(f"calibration window {span:.3f} s shorter than {min_duration} s")
    if any(f.speed > speed_threshold for f in frames):
        raise CalibrationError("robot moved during the calibration window")
    yaw = np.array([f.yaw for f in frames])
    return Bias(float(np.mean([f.p_left for f in frames])),
                float(np.mean([f.p_right for f in frames])),
                math.atan2(np.sin(yaw).mean(), np.cos(yaw).mean()))


def _assemble(p, follower: BodyState, params: FlowModelParams, t, motor_cmds, gait, rng,
              bias: Bias) -> SensorFrame:
    p = p + np.asarray(params.raw_offset, dtype=float)
    amp_frac, phase = gait
    roll = params.euler_amplitude * amp_frac * math.cos(phase)
    pitch = params.euler_amplitude * amp_frac * math.sin(phase)
    yaw = float(follower.heading[0])
    if rng is not None:
        if params.noise_std > 0:
            p = p + rng.normal(0.0, params.noise_std, 2)
        if params.euler_noise_std > 0:
            e = rng.normal(0.0, params.euler_noise_std, 3)
            yaw, pitch, roll = yaw + e[0], pitch + e[1], roll + e[2]
    return SensorFrame(float(p[0] - bias.p_left), float(p[1] - bias.p_right),
                       (wrap_angle(yaw - bias.yaw), float(pitch), float(roll)),
                       tuple(float(m) for m in motor_cmds[:3]), float(t))


def sample_sensors(leader, follower: BodyState, layout: SensorLayout, params: FlowModelParams,
                   t: float, motor_cmds=(0.0, 0.0, 0.0), gait=(0.0, 0.0),
                   rng: np.random.Generator | None = None, bias: Bias = Bias()) -> SensorFrame:
    """One observation from instantaneous pressures, without latency.

    ``gait`` is (amplitude fraction, phase) of the head oscillator; it drives
    the synthetic pitch and roll. :class:`SensorModel` is the stateful
    version with transport delay and latency.
    """
    p = clean_pressures(leader, follower, layout, params)
    return _assemble(p, follower, params, t, motor_cmds, gait, rng, bias)


@dataclass
class SensorModel:
    """Per-rollout sensing: source histories, seeded noise, calibration bias, latency buffer.

    Call :meth:`raw` or :meth:`sample` exactly once per control tick.
    """

    layout: SensorLayout
    params: FlowModelParams
    control_dt: float = 0.02
    bias: Bias = field(default_factory=Bias)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.params.seed)
        self.delay = int(round(self.params.latency / self.control_dt))
        self._buffer: deque = deque(maxlen=self.delay + 1)
        self._leader_hist: SourceHistory | None = None
        self._follower_hist: SourceHistory | None = None

    def pressures(self, leader, follower: BodyState) -> np.ndarray:
        """Record this tick's source states and return the noise-free port pressures."""
        if self._follower_hist is None:
            self._follower_hist = SourceHistory(follower.n_links, follower.link_length,
                                                self.control_dt)
        self._follower_hist.push(follower)
        pts = self.layout.world_positions(follower)
        nrm = self.layout.world_normals(follower)
        p = retarded_pressures(pts, nrm, self._follower_hist, self.params,
                               _host_mask(follower.n_links, self.params))
        if leader is not None:
            if self._leader_hist is None:
                self._leader_hist = SourceHistory(leader.n_links, leader.link_length,
                                                  self.control_dt)
            self._leader_hist.push(leader)
            p = p + retarded_pressures(pts, nrm, self._leader_hist, self.params)
        return p

    def raw(self, leader, follower: BodyState, t: float) -> RawFrame:
        f = _assemble(self.pressures(leader, follower), follower, self.params, t,
                      (0.0, 0.0, 0.0), (0.0, 0.0), self.rng, Bias())
        speed = float(np.linalg.norm(follower.vel.mean(axis=0)))
        return RawFrame(f.p_left, f.p_right, f.euler[0], speed, t)

    def calibrate(self, window) -> Bias:
        self.bias = calibrate_bias(window)
        return self.bias

    def sample(self, leader, follower: BodyState, t: float, motor_cmds=(0.0, 0.0, 0.0),
               gait=(0.0, 0.0)) -> SensorFrame:
        frame = _assemble(self.pressures(leader, follower), follower, self.params, t,
                          motor_cmds, gait, self.rng, self.bias)
        self._buffer.append(frame)
        return self._buffer[0]


def write_trace_csv(path, frames) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *CHANNELS])
        for f in frames:
            w.writerow([f"{f.t:.4f}"] + [f"{v:.9g}" for v in f.as_vector()])
