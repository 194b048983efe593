"""Scripted opponents. All of them command world velocities."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..control import VELOCITY_LIMITS, VELOCITY_NORM_LIMIT, ActionCommand
from ..env import ArenaSpec, role_index


def _bounded(v: np.ndarray) -> np.ndarray:
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    v = v * np.minimum(1.0, VELOCITY_NORM_LIMIT / np.maximum(speed, 1e-12))
    return np.clip(v, -VELOCITY_LIMITS, VELOCITY_LIMITS)


def hover_velocity(position, hold_point, gain: float = 1.0) -> np.ndarray:
    return _bounded(gain * (np.asarray(hold_point, dtype=float) - np.asarray(position, dtype=float)))


def circular_velocity(position, time_s, phase0, center_xy=(0.0, 0.0), radius=3.0, period=6.0,
                      altitude=2.0, gain: float = 1.0) -> np.ndarray:
    """Track a horizontal circle: tangential feedforward plus position feedback."""
    position = np.asarray(position, dtype=float)
    rate = 2.0 * np.pi / period
    phase = np.asarray(phase0) + rate * np.asarray(time_s)
    c, s = np.cos(phase), np.sin(phase)
    ref = np.stack([center_xy[0] + radius * c, center_xy[1] + radius * s, np.full_like(c, altitude)], axis=-1)
    ff = np.stack([-radius * rate * s, radius * rate * c, np.zeros_like(c)], axis=-1)
    return _bounded(ff + gain * (ref - position))


def repel_velocity(position, threat_position, arena: ArenaSpec, wall_band: float = 1.0,
                   wall_weight: float = 2.0) -> np.ndarray:
    """Flee from the threat at full speed, bent inward near walls, floor and ceiling."""
    position = np.asarray(position, dtype=float)
    away = position - np.asarray(threat_position, dtype=float)
    dist = np.linalg.norm(away, axis=-1, keepdims=True)
    away = np.where(dist > 1e-9, away / np.maximum(dist, 1e-12), 0.0)

    lo_gap = position - arena.lower
    hi_gap = arena.upper - position
    push = (np.clip(1.0 - lo_gap / wall_band, 0.0, 1.0) - np.clip(1.0 - hi_gap / wall_band, 0.0, 1.0))
    direction = away + wall_weight * push
    norm = np.linalg.norm(direction, axis=-1, keepdims=True)
    direction = np.where(norm > 1e-9, direction / np.maximum(norm, 1e-12), 0.0)
    return _bounded(VELOCITY_NORM_LIMIT * direction)


@dataclass(frozen=True)
class Heuristic:
    """Serializable description of a scripted opponent.

    ``kind`` is one of ``hover``, ``circular``, ``repel``. A hover with
    ``hold="center"`` holds the arena center, otherwise its spawn point.
    """

    kind: str
    hold: str = "initial"
    gain: float = 1.0
    radius: float = 3.0
    period: float = 6.0
    altitude: float = 2.0
    wall_band: float = 1.0

    def __post_init__(self):
        if self.kind not in ("hover", "circular", "repel"):
            raise ValueError(f"unknown heuristic {self.kind!r}")
        if self.hold not in ("initial", "center"):
            raise ValueError(f"hover hold must be 'initial' or 'center', got {self.hold!r}")
        if self.radius <= 0 or self.period <= 0 or self.wall_band <= 0:
            raise ValueError("heuristic geometry must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Heuristic:
        return cls(**d)

    def command(self, env, role: str, rows) -> ActionCommand:
        i = role_index(role)
        arena = env.config.arena
        p = env.state.position_m[rows, i]
        if self.kind == "hover":
            hold = np.asarray(arena.center_m) if self.hold == "center" else env.initial_positions[rows, i]
            v = hover_velocity(p, hold, self.gain)
        elif self.kind == "circular":
            center = np.asarray(arena.center_m)
            start = env.initial_positions[rows, i]
            phase0 = np.arctan2(start[:, 1] - center[1], start[:, 0] - center[0])
            v = circular_velocity(p, env.time_s[rows], phase0, center[:2], self.radius, self.period,
                                  self.altitude, self.gain)
        else:
            v = repel_velocity(p, env.state.position_m[rows, 1 - i], arena, self.wall_band)
        return ActionCommand.velocity(v)
