"""Leader-following reward, per-rollout metrics, summaries and the fixed-follower study."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .cpg import CpgParams, CpgState
from .errors import InvalidArgument
from .flow import FlowModelParams, SensorLayout, SensorModel
from .geometry import Pose2, as_xy
from .swimmer import BodySpec, BodyState, Robot, detect_contact

TERMINATIONS = ("completed", "contact", "separated")


@dataclass(frozen=True)
class RewardConfig:
    shape: float = 0.7
    inner: float = 70.0        # mm, where the two branches meet
    outer: float = 140.0       # mm, reward is zero beyond
    half_side: float = 60.0    # mm, half the side of the square around the tail

    def __post_init__(self):
        if not 0 <= self.shape < 1:
            raise InvalidArgument("shape must lie in [0, 1)")
        if not 0 < self.inner < self.outer:
            raise InvalidArgument("require 0 < inner < outer")
        if not self.half_side > 0:
            raise InvalidArgument("half_side must be positive")

    @property
    def exponent(self) -> float:
        return 2.0 / (1.0 - self.shape) - 1.0


def d_r(nose, tail: Pose2, cfg: RewardConfig = RewardConfig()) -> float:
    """Unsigned distance from ``nose`` to the tail-aligned square around the tail centre."""
    rel = as_xy(nose) - tail.position.as_array()
    c, s = math.cos(tail.heading), math.sin(tail.heading)
    qx = abs(c * rel[0] + s * rel[1])
    qy = abs(-s * rel[0] + c * rel[1])
    a = cfg.half_side
    if qx <= a and qy <= a:
        return float(min(a - qx, a - qy))
    return float(math.hypot(max(qx - a, 0.0), max(qy - a, 0.0)))


def reward(dr: float, cfg: RewardConfig = RewardConfig()) -> float:
    """Piecewise reward: 1 at the outline, 0.5 at ``inner``, 0 from ``outer`` on."""
    if not dr >= 0:
        raise InvalidArgument(f"d_r must be non-negative, got {dr}")
    c = cfg.exponent

    def f(x):
        return (2.0 * x) ** c / 2.0

    if dr <= cfg.inner:
        return 1.0 - f(dr / cfg.outer)
    if dr <= cfg.outer:
        return f(1.0 - dr / cfg.outer)
    return 0.0


@dataclass(frozen=True)
class Metrics:
    mae_vs_expert: float
    cumulative_reward: float
    termination: str
    n_frames: int


def rollout_metrics(rollout, cfg: RewardConfig = RewardConfig()) -> Metrics:
    """Mean |applied - expert| steering and summed reward over the recorded frames."""
    n = len(rollout.sigma_applied)
    if n == 0:
        raise InvalidArgument("empty rollout")
    mae = float(np.mean(np.abs(np.asarray(rollout.sigma_applied) - np.asarray(rollout.sigma_expert))))
    total = float(sum(reward(float(x), cfg) for x in rollout.d_r))
    return Metrics(mae, total, rollout.termination, n)


@dataclass(frozen=True)
class Quartiles:
    n: int
    q25: float
    median: float
    q75: float

    @classmethod
    def of(cls, values) -> "Quartiles":
        v = np.sort(np.asarray(values, dtype=float))
        if len(v) == 0:
            return cls(0, math.nan, math.nan, math.nan)
        q = np.percentile(v, [25, 50, 75])
        return cls(len(v), float(q[0]), float(q[1]), float(q[2]))


@dataclass
class Summary:
    policy: str
    mae: Quartiles
    reward: Quartiles
    by_termination: dict = field(default_factory=dict)   # cause -> (mae, reward) quartiles


def summarize(metrics_by_policy: dict) -> list:
    """Quartile table per policy, overall and split by termination cause."""
    out = []
    for policy, ms in metrics_by_policy.items():
        if len(ms) == 0:
            raise InvalidArgument(f"policy {policy!r} has no rollouts")
        split = {}
        for cause in TERMINATIONS:
            sub = [m for m in ms if m.termination == cause]
            split[cause] = (Quartiles.of([m.mae_vs_expert for m in sub]),
                            Quartiles.of([m.cumulative_reward for m in sub]))
        out.append(Summary(policy, Quartiles.of([m.mae_vs_expert for m in ms]),
                           Quartiles.of([m.cumulative_reward for m in ms]), split))
    return out


def write_metrics_csv(path, rows) -> None:
    """``rows``: iterable of (rollout_id, policy, side, Metrics)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rollout_id", "policy", "side", "termination", "n_frames", "mae",
                    "cumulative_reward"])
        for rid, policy, side, m in rows:
            w.writerow([rid, policy, side, m.termination, m.n_frames,
                        f"{m.mae_vs_expert:.9f}", f"{m.cumulative_reward:.6f}"])


def write_summary_csv(path, summaries) -> None:
    def fmt(x):
        return "" if math.isnan(x) else f"{x:.6f}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "subset", "n", "mae_q25", "mae_median", "mae_q75",
                    "reward_q25", "reward_median", "reward_q75"])
        for s in summaries:
            rows = [("all", s.mae, s.reward)] + [(k, *v) for k, v in s.by_termination.items()]
            for subset, mq, rq in rows:
                w.writerow([s.policy, subset, mq.n, fmt(mq.q25), fmt(mq.median), fmt(mq.q75),
                            fmt(rq.q25), fmt(rq.median), fmt(rq.q75)])


# fixed-follower pressure study

@dataclass
class CellResult:
    lateral: float
    longitudinal: float
    times: np.ndarray
    pressures: np.ndarray       # (T, 2) left, right
    rms: float
    onset_tick: int             # -1 if the signal never rises above the threshold
    lag_tick: int = -1          # cross-correlation lag of the pressure onset, in ticks
    control_dt: float = 0.02

    @property
    def onset_delay(self) -> float:
        return math.nan if self.onset_tick < 0 else float(self.times[self.onset_tick])

    @property
    def lag(self) -> float:
        return math.nan if self.lag_tick < 0 else self.lag_tick * self.control_dt


def onset_index(pressures: np.ndarray, fraction: float = 0.05) -> int:
    """First sample where max(|p_left|, |p_right|) exceeds ``fraction`` of its peak."""
    a = np.max(np.abs(pressures), axis=1)
    peak = a.max()
    if peak <= 0:
        return -1
    return int(np.argmax(a > fraction * peak))


def _envelope_rise(x: np.ndarray, window: int) -> np.ndarray:
    """Per-sample growth of a trailing moving-RMS envelope."""
    env = np.sqrt(np.convolve(x ** 2, np.ones(window) / window, mode="full")[:len(x)])
    return np.diff(env, prepend=0.0)


def onset_lag(pressures: np.ndarray, source: np.ndarray, window: int,
              max_lag: int | None = None) -> int:
    """Lag (ticks) maximizing the cross-correlation of sensed and source envelope growth.

    ``source`` is the leader's tail-link normal velocity sampled with the
    pressures. Envelopes span one gait period, so the oscillation itself
    drops out and only the onset is compared; -1 if the sensor stays silent.
    """
    sensed = np.max(np.abs(pressures), axis=1)
    if not sensed.any():
        return -1
    a = _envelope_rise(sensed, window)
    b = _envelope_rise(np.asarray(source, dtype=float), window)
    n = len(a)
    max_lag = n // 2 if max_lag is None else max_lag
    xc = [float(np.dot(a[k:], b[:n - k])) for k in range(max_lag + 1)]
    return int(np.argmax(xc))


def fixed_follower_cell(lateral: float, longitudinal: float, duration: float = 2.0,
                        spec: BodySpec = BodySpec(), cpg: CpgParams = CpgParams(),
                        flow: FlowModelParams = FlowModelParams(noise_std=0.0),
                        layout: SensorLayout = SensorLayout(), control_dt: float = 0.02,
                        onset_fraction: float = 0.05) -> CellResult:
    """Leader swims straight from rest ahead of a frozen follower.

    The follower's nose is at the origin heading +x. ``longitudinal`` is the
    gap along x between the front tip of the follower's outline and the rear
    tip of the leader's; ``lateral`` shifts the leader toward -y (the
    follower's right). The leader's body starts at rest with its oscillator
    already on the steady gait, so every cell sees the same actuation.
    """
    if lateral < 0 or longitudinal < 0:
        raise InvalidArgument("offsets must be non-negative")
    leader_nose = (longitudinal + spec.body_length + spec.link_width, -lateral)
    leader = Robot(BodyState.straight(spec, leader_nose, 0.0), CpgState.steady(cpg), spec, cpg)
    follower = Robot.at_rest(spec, cpg, (0.0, 0.0), 0.0, active=False)
    sep = detect_contact(leader.body, follower.body, spec).min_separation
    if sep < -1e-9:
        raise InvalidArgument(f"leader overlaps the follower at lateral {lateral}, "
                              f"longitudinal {longitudinal} (separation {sep:.1f} mm)")
    sensors = SensorModel(layout, flow, control_dt)
    sensors.pressures(leader.body, follower.body)      # both at rest before the start
    n = int(round(duration / control_dt))
    trace = np.empty((n, 2))
    source = np.empty(n)
    for k in range(n):
        leader.tick(0.0)
        trace[k] = sensors.pressures(leader.body, follower.body)
        b = leader.body
        source[k] = -b.vel[-1, 0] * math.sin(b.heading[-1]) + b.vel[-1, 1] * math.cos(b.heading[-1])
    if flow.noise_std > 0:
        trace += sensors.rng.normal(0.0, flow.noise_std, trace.shape)
    times = (np.arange(n) + 1) * control_dt
    rms = float(np.sqrt(np.mean(trace ** 2)))
    period = max(1, int(round(1.0 / (cpg.frequency * control_dt))))
    return CellResult(lateral, longitudinal, times, trace, rms,
                      onset_index(trace, onset_fraction), onset_lag(trace, source, period),
                      control_dt)


def fixed_follower_experiment(laterals=(0.0, 50.0, 100.0), longitudinals=(0.0, 50.0, 100.0, 150.0, 200.0),
                              duration: float = 2.0, **kwargs) -> list:
    """Every (lateral, longitudinal) cell, lateral-major order."""
    return [fixed_follower_cell(lat, lon, duration, **kwargs)
            for lat in laterals for lon in longitudinals]


def fixed_follower_trends(cells, staggered: CellResult) -> list:
    """The qualitative checks on a grid, as (description, passed) pairs.

    Staggered amplitude against in-line at the closest station, amplitude
    non-increasing with the longitudinal gap at every lateral offset, and
    onset lag non-decreasing with lateral offset at every longitudinal gap.
    """
    lats = sorted({c.lateral for c in cells})
    lons = sorted({c.longitudinal for c in cells})
    at = {(c.lateral, c.longitudinal): c for c in cells}
    out = []
    inline = at.get((0.0, staggered.longitudinal))
    if inline is not None:
        out.append((f"staggered rms {staggered.rms:.4g} (lateral {staggered.lateral:g}) > "
                    f"2 x in-line rms {inline.rms:.4g}", staggered.rms > 2.0 * inline.rms))
    for lat in lats:
        row = [at[(lat, lon)].rms for lon in lons if (lat, lon) in at]
        out.append((f"lateral {lat:g}: rms non-increasing with longitudinal gap "
                    f"{[float(f'{r:.3g}') for r in row]}",
                    all(a >= b for a, b in zip(row, row[1:]))))
    for lon in lons:
        lags = [at[(lat, lon)].lag for lat in lats if (lat, lon) in at]
        out.append((f"longitudinal {lon:g}: onset lag non-decreasing with lateral offset "
                    f"{[round(v, 2) for v in lags]}",
                    all(a <= b for a, b in zip(lags, lags[1:]))))
    return out


def write_cell_csv(path, cell: CellResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p_left", "p_right"])
        for t, (pl, pr) in zip(cell.times, cell.pressures):
            w.writerow([f"{t:.4f}", f"{pl:.9g}", f"{pr:.9g}"])


def write_grid_csv(path, cells) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lateral_mm", "longitudinal_mm", "rms_pa", "onset_s", "lag_s"])
        for c in cells:
            w.writerow([f"{c.lateral:g}", f"{c.longitudinal:g}", f"{c.rms:.9g}",
                        "" if c.onset_tick < 0 else f"{c.onset_delay:.4f}",
                        "" if c.lag_tick < 0 else f"{c.lag:.4f}"])
