"""Lab configuration: one JSON document covering every tunable section.

Unknown keys are rejected and every section is validated by the dataclass it
builds, so a config that loads is a config that runs. Omitted keys keep
their defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from ._util import jsonable, stable_hash
from .control import RatePidGains, VelocityGains
from .dynamics import DEFAULT_DT, CylinderDownwash, QuadParams
from .env import ArenaSpec, EnvConfig, ObsNormalization, RewardCoeffs
from .league import LeagueSettings
from .ppo import PpoConfig

CONFIG_SCHEMA_VERSION = 1
DESK_STEPS_PER_STAGE = 200_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSettings:
    stages: int = 6
    master_seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.stages < 0:
            raise ValueError("stages must be >= 0")


@dataclass(frozen=True)
class LabConfig:
    quad: QuadParams = field(default_factory=QuadParams)
    arena: ArenaSpec = field(default_factory=ArenaSpec)
    rewards: RewardCoeffs = field(default_factory=RewardCoeffs)
    normalization: ObsNormalization = field(default_factory=ObsNormalization)
    rate_pid: RatePidGains = field(default_factory=RatePidGains)
    velocity_control: VelocityGains = field(default_factory=VelocityGains)
    downwash: CylinderDownwash = field(default_factory=CylinderDownwash)
    dt_s: float = DEFAULT_DT
    ppo: PpoConfig = field(default_factory=lambda: PpoConfig(total_env_steps=DESK_STEPS_PER_STAGE))
    league: LeagueSettings = field(default_factory=LeagueSettings)
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        if not self.dt_s > 0:
            raise ValueError("dt_s must be positive")

    def env_config(self) -> EnvConfig:
        return EnvConfig(self.quad, self.arena, self.rewards, self.normalization, self.rate_pid,
                         self.velocity_control, self.downwash, self.dt_s)

    def to_dict(self) -> dict:
        return {"schema_version": CONFIG_SCHEMA_VERSION, **jsonable(self)}

    def hash(self) -> str:
        return stable_hash(self.to_dict())


def _coerce(value: Any, template: Any) -> Any:
    """Turn JSON lists back into the tuple shapes used by the dataclasses."""
    if isinstance(template, tuple) and isinstance(value, list):
        if template and isinstance(template[0], tuple):
            return tuple(tuple(v) for v in value)
        return tuple(value)
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        else:
            kwargs[name] = _coerce(value, current)
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(data: dict) -> LabConfig:
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"config schema_version {version!r}, expected {CONFIG_SCHEMA_VERSION}")
    return _build(LabConfig, data, "config")


def load_config(path=None) -> LabConfig:
    """Read a config file; ``None`` gives the shipped defaults."""
    if path is None:
        text = resources.files("quadpursuit").joinpath("defaults.json").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def dump_config(config: LabConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
