"""Experiment configuration: nested dataclasses loaded from and dumped to YAML."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .cpg import CpgParams
from .errors import ConfigError
from .evaluation import RewardConfig
from .flow import FlowModelParams, SensorLayout
from .geometry import GuidanceConfig, TankSpec
from .imitation import ProtocolConfig
from .policy import NetConfig, TrainConfig
from .swimmer import BodySpec


@dataclass(frozen=True)
class ProtocolCounts:
    bc_rollouts: int = 12
    dagger_iterations: int = 3
    dagger_rollouts: int = 8
    eval_rollouts: int = 20
    n_ticks: int = 500
    calibration_ticks: int = 25
    head_start_ticks: int = 20
    separation_limit: float = 200.0
    expert_offset: float = 60.0
    lateral_start: float = 60.0
    path_margin: float = 80.0
    path_min_radius: float = 250.0

    def __post_init__(self):
        for name in ("bc_rollouts", "dagger_rollouts"):
            v = getattr(self, name)
            if v < 2 or v % 2:
                raise ConfigError(f"protocol.{name} must be even and at least 2, got {v}")
        if self.dagger_iterations < 0 or self.eval_rollouts < 1 or self.n_ticks < 1:
            raise ConfigError("protocol counts out of range")


@dataclass(frozen=True)
class FixedFollowerConfig:
    laterals: tuple = (0.0, 50.0, 100.0)
    longitudinals: tuple = (0.0, 50.0, 100.0, 150.0, 200.0)
    staggered_lateral: float = 60.0
    duration: float = 2.0
    onset_fraction: float = 0.05
    with_noise: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/desk"
    tank: TankSpec = TankSpec()
    body: BodySpec = BodySpec()
    cpg: CpgParams = CpgParams()
    flow: FlowModelParams = FlowModelParams()
    sensors: SensorLayout = SensorLayout()
    guidance: GuidanceConfig = GuidanceConfig()
    reward: RewardConfig = RewardConfig()
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    protocol: ProtocolCounts = ProtocolCounts()
    fixed_follower: FixedFollowerConfig = FixedFollowerConfig()

    def protocol_config(self) -> ProtocolConfig:
        p = self.protocol
        return ProtocolConfig(self.tank, self.body, self.cpg, self.flow, self.sensors,
                              self.guidance, self.reward, p.n_ticks, p.calibration_ticks,
                              p.separation_limit, p.expert_offset, p.path_margin,
                              p.path_min_radius, p.head_start_ticks, p.lateral_start)

    def with_overrides(self, seed=None, epochs=None, rollouts=None, output_dir=None):
        """Apply the command-line overrides; ``rollouts`` sets every per-stage count."""
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if output_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(output_dir))
        try:
            if epochs is not None:
                cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=int(epochs)))
            if rollouts is not None:
                n = int(rollouts)
                cfg = dataclasses.replace(cfg, protocol=dataclasses.replace(
                    cfg.protocol, bc_rollouts=n, dagger_rollouts=n, eval_rollouts=n))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cfg


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        path = f"{where}.{name}" if where else name
        default = f.default if f.default is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}: expected true or false")
            kwargs[name] = value
        elif isinstance(default, (int, float)):
            if isinstance(value, str) and value.strip().lower() in ("inf", ".inf"):
                value = math.inf
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}: expected a number, got {value!r}")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"{path}: expected an integer, got {value!r}")
            kwargs[name] = value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def from_dict(data) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    return from_dict(data)


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, float) and math.isinf(v):
            v = "inf"
        out[f.name] = v
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
