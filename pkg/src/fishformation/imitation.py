"""Expert guidance, the leader-follower rollout protocol, behaviour cloning and DAgger.

A rollout starts with both fish at rest for a calibration window, then the
leader swims alone for ``head_start`` ticks before the follower's motors are
switched on. Every tick records the follower's observation, the expert
label and ground truth; the rollout ends on contact, on separation beyond
``separation_limit`` or after ``n_ticks`` ticks.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cpg import CpgParams, clamp_steering
from .errors import InvalidArgument
from .evaluation import RewardConfig, d_r, reward
from .flow import CHANNELS, N_CHANNELS, FlowModelParams, SensorLayout, SensorModel
from .geometry import (GuidanceConfig, PathSpline, Point2, Pose2, TankSpec, as_xy,
                       generate_random_path, heading_error, los_reference, offset_path)
from .policy import NetParams, NormStats, Policy
from .seeding import child_seed
from .swimmer import BodySpec, Robot, detect_contact, nose_position, tail_pose, wall_interaction

CONTROL_DT = 0.02


def expert_action(nose, heading: float, expert_path: PathSpline,
                  cfg: GuidanceConfig = GuidanceConfig()) -> float:
    """Proportional LOS steering toward ``expert_path``, clamped."""
    ref = los_reference(expert_path, nose, cfg)
    return clamp_steering(cfg.gain * heading_error(ref, heading), cfg.clamp_fraction)


def make_expert_path(leader_path: PathSpline, follower_start, offset: float = 60.0) -> PathSpline:
    """The leader path shifted ``offset`` mm toward the side the follower starts on."""
    q = as_xy(follower_start)
    s = leader_path.project(q)
    foot = leader_path.point_at(s)
    k = min(int(np.searchsorted(leader_path.s, s)), len(leader_path.s) - 1)
    h = leader_path.headings()[k]
    cross = math.cos(h) * (q[1] - foot[1]) - math.sin(h) * (q[0] - foot[0])
    if abs(cross) < 1e-9:
        raise InvalidArgument("follower starts on the leader path; side is undefined")
    return offset_path(leader_path, offset, "left" if cross > 0 else "right")


@dataclass(frozen=True)
class StartConfig:
    """Initial placement. ``side`` is where the leader is as seen from the follower."""

    side: str = "left"
    lateral: float = 60.0                 # mm between body centrelines
    leader_nose: tuple = (450.0, 290.0)
    heading: float = 0.0
    head_start_ticks: int = 20

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise InvalidArgument(f"side must be 'left' or 'right', got {self.side!r}")
        if not self.lateral > 0:
            raise InvalidArgument("lateral separation must be positive")
        if self.head_start_ticks < 0:
            raise InvalidArgument("head start must be non-negative")

    def follower_nose(self, spec: BodySpec) -> np.ndarray:
        """Nose abeam the joint between the leader's last two links."""
        t = np.array([math.cos(self.heading), math.sin(self.heading)])
        n = np.array([-t[1], t[0]])
        sign = -1.0 if self.side == "left" else 1.0     # leader on the left: follower to its right
        back = (spec.n_links - 1) * spec.link_length
        return np.asarray(self.leader_nose, float) - back * t + sign * self.lateral * n


@dataclass(frozen=True)
class ProtocolConfig:
    tank: TankSpec = TankSpec()
    body: BodySpec = BodySpec()
    cpg: CpgParams = CpgParams()
    flow: FlowModelParams = FlowModelParams()
    layout: SensorLayout = SensorLayout()
    guidance: GuidanceConfig = GuidanceConfig()
    reward: RewardConfig = RewardConfig()
    n_ticks: int = 500
    calibration_ticks: int = 25
    separation_limit: float = 200.0
    expert_offset: float = 60.0
    path_margin: float = 80.0
    path_min_radius: float = 250.0
    head_start_ticks: int = 20
    lateral_start: float = 60.0

    def start(self, side: str) -> "StartConfig":
        return StartConfig(side=side, lateral=self.lateral_start,
                           head_start_ticks=self.head_start_ticks)


@dataclass(frozen=True)
class Truth:
    """Ground truth handed to controllers; only the expert may look at it."""
    tick: int
    sigma_expert: float
    d: float
    d_r: float
    contact: bool


@dataclass(frozen=True)
class Frame:
    sensors: np.ndarray         # the 8 observation channels
    sigma_expert: float
    sigma_applied: float
    leader_nose: Pose2
    leader_tail: Pose2
    follower_nose: Pose2
    follower_tail: Pose2
    d: float
    d_r: float
    t: float


@dataclass
class Rollout:
    seed: int
    side: str
    termination: str
    t: np.ndarray
    sensors: np.ndarray          # (T, 8)
    sigma_expert: np.ndarray
    sigma_applied: np.ndarray
    d: np.ndarray
    d_r: np.ndarray
    reward: np.ndarray
    contact: np.ndarray
    leader: np.ndarray           # (T, 6): nose x, y, heading, tail x, y, heading
    follower: np.ndarray         # (T, 6)
    control_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return len(self.t)

    def frame(self, k: int) -> Frame:
        def pose(row, off):
            return Pose2(Point2(float(row[off]), float(row[off + 1])), float(row[off + 2]))
        lr, fr = self.leader[k], self.follower[k]
        return Frame(self.sensors[k].copy(), float(self.sigma_expert[k]),
                     float(self.sigma_applied[k]), pose(lr, 0), pose(lr, 3), pose(fr, 0),
                     pose(fr, 3), float(self.d[k]), float(self.d_r[k]), float(self.t[k]))

    def sequence(self):
        """(inputs, expert labels) for training."""
        return self.sensors, self.sigma_expert

    def cumulative_reward(self) -> float:
        return float(self.reward.sum())


ROLLOUT_COLUMNS = (["t", *CHANNELS, "sigma_expert", "sigma_applied", "d_mm", "d_r_mm",
                    "reward", "contact"]
                   + [f"leader_{k}" for k in ("nose_x", "nose_y", "heading", "tail_x",
                                              "tail_y", "tail_heading")]
                   + [f"follower_{k}" for k in ("nose_x", "nose_y", "heading", "tail_x",
                                                "tail_y", "tail_heading")])


def write_rollout_csv(path, r: Rollout) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROLLOUT_COLUMNS)
        for k in range(len(r)):
            # training inputs and labels at round-trip precision
            w.writerow([f"{r.t[k]:.2f}"] + [repr(float(v)) for v in r.sensors[k]]
                       + [repr(float(r.sigma_expert[k])), repr(float(r.sigma_applied[k])),
                          f"{r.d[k]:.6f}", f"{r.d_r[k]:.6f}", f"{r.reward[k]:.9f}",
                          int(r.contact[k])]
                       + [f"{v:.6f}" for v in r.leader[k]] + [f"{v:.6f}" for v in r.follower[k]])


def read_rollout_csv(path, seed: int, side: str, termination: str) -> Rollout:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    col = {name: i for i, name in enumerate(head)}
    return Rollout(seed, side, termination, data[:, col["t"]],
                   data[:, 1:1 + N_CHANNELS].copy(), data[:, col["sigma_expert"]],
                   data[:, col["sigma_applied"]], data[:, col["d_mm"]], data[:, col["d_r_mm"]],
                   data[:, col["reward"]], data[:, col["contact"]].astype(bool),
                   data[:, col["leader_nose_x"]:col["leader_tail_heading"] + 1].copy(),
                   data[:, col["follower_nose_x"]:col["follower_tail_heading"] + 1].copy())


# controllers: called once per tick with the 8-channel observation and ground truth

class ExpertController:
    name = "expert"

    def __call__(self, obs: np.ndarray, truth: Truth) -> float:
        return truth.sigma_expert


class ConstantController:
    def __init__(self, sigma: float = 0.0):
        self.sigma = float(sigma)
        self.name = "none" if sigma == 0 else f"constant_{sigma:g}"

    def __call__(self, obs, truth) -> float:
        return self.sigma


class LearnerController:
    """The LSTM acting on its own observations; truth is ignored."""

    def __init__(self, params: NetParams, stats: NormStats, name: str = "learner"):
        self.policy = Policy(params, stats)
        self.name = name

    def __call__(self, obs, truth) -> float:
        return self.policy(obs)


def _body_pose_row(robot: Robot) -> list:
    nose = nose_position(robot.body)
    tail = tail_pose(robot.body)
    return [nose.x, nose.y, robot.body.body_heading(), tail.position.x, tail.position.y,
            tail.heading]


def leader_path_for(seed: int, start: StartConfig, cfg: ProtocolConfig) -> PathSpline:
    return generate_random_path(child_seed(seed, "path"), cfg.tank, start.leader_nose,
                                margin=cfg.path_margin, min_radius=cfg.path_min_radius)


def run_rollout(follower_controller, start: StartConfig, seed: int,
                cfg: ProtocolConfig = ProtocolConfig(), leader_path: PathSpline | None = None) -> Rollout:
    """One episode of the leader-follower protocol.

    ``follower_controller(obs, truth) -> sigma`` is queried every tick,
    including the head start, when the follower's motors are still off. The
    leader steers by LOS along its own random path (drawn from ``seed``
    unless given). Termination is checked on the recorded frame: contact
    first, then separation, then the tick budget.
    """
    spec = cfg.body
    if leader_path is None:
        leader_path = leader_path_for(seed, start, cfg)
    leader = Robot.at_rest(spec, cfg.cpg, start.leader_nose, start.heading)
    follower = Robot.at_rest(spec, cfg.cpg, start.follower_nose(spec), start.heading,
                             active=False)
    if detect_contact(leader.body, follower.body, spec).contact:
        raise InvalidArgument("start configuration has the bodies in contact")
    if not all(cfg.tank.contains(p, 0.0) for p in (*leader.body.endpoints(),
                                                   *follower.body.endpoints())
               for p in p):
        raise InvalidArgument("start configuration leaves the tank")
    expert_path = make_expert_path(leader_path, start.follower_nose(spec), cfg.expert_offset)
    sensors = SensorModel(cfg.layout, replace(cfg.flow, seed=child_seed(seed, "noise")),
                          CONTROL_DT)

    # at-rest calibration window before anything moves
    window = [sensors.raw(leader.body, follower.body, (k - cfg.calibration_ticks) * CONTROL_DT)
              for k in range(cfg.calibration_ticks)]
    sensors.calibrate(window)

    T = cfg.n_ticks
    rec = {k: np.zeros(T) for k in ("t", "se", "sa", "d", "dr", "rw")}
    rec_contact = np.zeros(T, dtype=bool)
    obs_log = np.zeros((T, N_CHANNELS))
    lead_log = np.zeros((T, 6))
    foll_log = np.zeros((T, 6))
    termination = "completed"
    n = T
    for k in range(T):
        t = k * CONTROL_DT
        frame = sensors.sample(leader.body, follower.body, t, follower.motor_commands(),
                               follower.gait())
        obs = frame.as_vector()
        nose = nose_position(follower.body)
        tail = tail_pose(leader.body)
        heading = follower.body.body_heading()
        sig_star = expert_action(nose, heading, expert_path, cfg.guidance)
        dist = float(math.hypot(nose.x - tail.position.x, nose.y - tail.position.y))
        dr = d_r(nose, tail, cfg.reward)
        contact = detect_contact(leader.body, follower.body, spec).contact
        truth = Truth(k, sig_star, dist, dr, contact)
        sigma = clamp_steering(float(follower_controller(obs, truth)), cfg.cpg.clamp_fraction)
        if not math.isfinite(sigma):
            raise InvalidArgument(f"controller returned non-finite steering at tick {k}")
        lead_nose = nose_position(leader.body)
        sigma_leader = expert_action(lead_nose, leader.body.body_heading(), leader_path,
                                     cfg.guidance)

        rec["t"][k], rec["se"][k], rec["sa"][k] = t, sig_star, sigma
        rec["d"][k], rec["dr"][k], rec["rw"][k] = dist, dr, reward(dr, cfg.reward)
        rec_contact[k] = contact
        obs_log[k] = obs
        lead_log[k] = _body_pose_row(leader)
        foll_log[k] = _body_pose_row(follower)

        if contact:
            termination, n = "contact", k + 1
            break
        if dist > cfg.separation_limit:
            termination, n = "separated", k + 1
            break
        if k == T - 1:
            break
        leader.tick(sigma_leader)
        follower.active = k + 1 >= start.head_start_ticks
        follower.tick(sigma)
        leader.body = wall_interaction(leader.body, cfg.tank)
        follower.body = wall_interaction(follower.body, cfg.tank)

    return Rollout(seed, start.side, termination, rec["t"][:n], obs_log[:n], rec["se"][:n],
                   rec["sa"][:n], rec["d"][:n], rec["dr"][:n], rec["rw"][:n], rec_contact[:n],
                   lead_log[:n], foll_log[:n], leader_path.control_points.copy())


def run_batch(make_controller, seeds, sides, cfg: ProtocolConfig = ProtocolConfig(),
              threads: int = 1) -> list:
    """Rollouts for paired seeds and sides, returned in input order.

    ``make_controller()`` must return a fresh controller per rollout, so
    recurrent state is never shared between threads.
    """
    seeds, sides = list(seeds), list(sides)
    if len(seeds) != len(sides):
        raise InvalidArgument("seeds and sides must have equal length")

    def one(i):
        return run_rollout(make_controller(), cfg.start(sides[i]), seeds[i], cfg)

    if threads <= 1:
        return [one(i) for i in range(len(seeds))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(seeds))))


def alternating_sides(n: int) -> list:
    return ["left" if i % 2 == 0 else "right" for i in range(n)]


@dataclass(frozen=True)
class DatasetEntry:
    rollout: Rollout
    iteration: int          # 0 for behaviour cloning, k for the k-th DAgger round
    stage: str              # "bc" or "dagger"


@dataclass
class Dataset:
    """Append-only rollout collection with provenance."""

    entries: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def rollouts(self) -> list:
        return [e.rollout for e in self.entries]

    @property
    def last_iteration(self) -> int:
        return self.entries[-1].iteration if self.entries else -1

    def extended(self, rollouts, iteration: int, stage: str) -> "Dataset":
        if self.entries and iteration <= self.last_iteration:
            raise InvalidArgument("iteration indices must increase")
        return Dataset(self.entries + [DatasetEntry(r, iteration, stage) for r in rollouts])

    def sequences(self) -> list:
        return [r.sequence() for r in self.rollouts]

    def side_counts(self, iteration: int | None = None) -> dict:
        es = [e for e in self.entries if iteration is None or e.iteration == iteration]
        return {s: sum(e.rollout.side == s for e in es) for s in ("left", "right")}


def collect_bc(n_rollouts: int, seeds, cfg: ProtocolConfig = ProtocolConfig(),
               threads: int = 1) -> Dataset:
    """Expert-acted demonstrations, alternating the leader's side."""
    seeds = list(seeds)
    if n_rollouts % 2:
        raise InvalidArgument("the number of demonstrations must be even for side balance")
    if len(seeds) != n_rollouts:
        raise InvalidArgument(f"need {n_rollouts} seeds, got {len(seeds)}")
    rollouts = run_batch(ExpertController, seeds, alternating_sides(n_rollouts), cfg, threads)
    return Dataset().extended(rollouts, 0, "bc")


def dagger_iteration(params: NetParams, stats: NormStats, n_rollouts: int, dataset: Dataset,
                     seeds, cfg: ProtocolConfig = ProtocolConfig(), threads: int = 1) -> Dataset:
    """Learner-acted rollouts labelled by the expert, appended to ``dataset``."""
    seeds = list(seeds)
    if n_rollouts % 2:
        raise InvalidArgument("the number of rollouts must be even for side balance")
    if len(seeds) != n_rollouts:
        raise InvalidArgument(f"need {n_rollouts} seeds, got {len(seeds)}")
    rollouts = run_batch(lambda: LearnerController(params, stats), seeds,
                         alternating_sides(n_rollouts), cfg, threads)
    return dataset.extended(rollouts, dataset.last_iteration + 1, "dagger")
