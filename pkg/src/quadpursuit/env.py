"""1v1 pursuit-evasion episodes: arena, observations, rewards, batched stepping.

Vehicle states of a batch live in one ``QuadState`` with batch shape (N, 2);
column 0 is the pursuer, column 1 the evader. The world origin sits on the
ground below the arena center.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from . import dynamics
from .control import ActionCommand, InnerLoop, PidMemory, RatePidGains, VelocityGains
from .dynamics import CylinderDownwash, QuadParams, QuadState

PURSUER = "pursuer"
EVADER = "evader"
ROLES = (PURSUER, EVADER)
OBS_DIM = {PURSUER: 32, EVADER: 34}
HISTORY_LEN = 5


def role_index(role: str) -> int:
    try:
        return ROLES.index(role)
    except ValueError:
        raise ValueError(f"unknown role {role!r}; expected one of {ROLES}") from None


def other_role(role: str) -> str:
    return ROLES[1 - role_index(role)]


@dataclass(frozen=True)
class ArenaSpec:
    half_extents_m: tuple[float, float, float] = (5.0, 5.0, 2.0)
    center_m: tuple[float, float, float] = (0.0, 0.0, 2.0)
    capture_radius_m: float = 0.5
    max_steps: int = 600
    z_min_m: float = 0.3
    min_initial_separation_m: float = 2.0
    spawn_margin_m: float = 0.5

    def __post_init__(self):
        if not self.capture_radius_m > 0:
            raise ValueError("capture_radius_m must be > 0")
        if not (isinstance(self.max_steps, int) and self.max_steps > 0):
            raise ValueError("max_steps must be a positive integer")
        if not self.z_min_m >= 0:
            raise ValueError("z_min_m must be >= 0")
        if any(h <= 0 for h in self.half_extents_m):
            raise ValueError("half_extents_m must be positive")
        if self.min_initial_separation_m < 0:
            raise ValueError("min_initial_separation_m must be >= 0")

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center_m) - np.asarray(self.half_extents_m)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center_m) + np.asarray(self.half_extents_m)

    @property
    def floor_z(self) -> float:
        return float(self.lower[2])

    def contains(self, position) -> np.ndarray:
        p = np.asarray(position)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)


@dataclass(frozen=True)
class RewardCoeffs:
    kappa_a: float = 0.05
    kappa_br: float = 0.0005
    kappa_c: float = 10.0
    kappa_t: float = 10.0
    kappa_b: float = 0.1
    r_step: float = 0.005

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value >= 0:
                raise ValueError(f"reward coefficient {name} must be >= 0, got {value}")


@dataclass(frozen=True)
class ObsNormalization:
    """Observation divisors. Time is divided by the arena's ``max_steps``."""

    relative_position: tuple[float, float, float] = (10.0, 10.0, 4.0)
    position: tuple[float, float, float] = (5.0, 5.0, 2.0)
    altitude: float = 2.0
    velocity: tuple[float, float, float] = (15.0, 15.0, 5.0)
    body_rates: tuple[float, float, float] = (15.0, 15.0, 5.0)
    clip: float = 1.5

    def __post_init__(self):
        values = [*self.relative_position, *self.position, self.altitude, *self.velocity, *self.body_rates]
        if any(v <= 0 for v in values) or self.clip <= 0:
            raise ValueError("normalization divisors must be positive")


@dataclass(frozen=True)
class EnvConfig:
    params: QuadParams = field(default_factory=QuadParams)
    arena: ArenaSpec = field(default_factory=ArenaSpec)
    rewards: RewardCoeffs = field(default_factory=RewardCoeffs)
    normalization: ObsNormalization = field(default_factory=ObsNormalization)
    pid: RatePidGains = field(default_factory=RatePidGains)
    velocity_gains: VelocityGains = field(default_factory=VelocityGains)
    downwash: CylinderDownwash = field(default_factory=CylinderDownwash)
    dt_s: float = dynamics.DEFAULT_DT
    # out-of-bounds penalties off; used by the free-flight speed probe
    bounds_penalty: bool = True


class StepOutcome(NamedTuple):
    reward_pursuer: np.ndarray
    reward_evader: np.ndarray
    captured: np.ndarray
    timed_out: np.ndarray
    oob_pursuer: np.ndarray
    oob_evader: np.ndarray
    distance_m: np.ndarray
    done: np.ndarray
    crashed_pursuer: np.ndarray
    crashed_evader: np.ndarray


def sample_initial_positions(arena: ArenaSpec, rng: np.random.Generator, max_tries: int = 1000):
    """Uniform spawn inside the margin box, resampled until far enough apart."""
    lo = arena.lower + arena.spawn_margin_m
    lo[2] = max(lo[2], arena.floor_z + 0.5)
    hi = arena.upper - arena.spawn_margin_m
    for _ in range(max_tries):
        p = rng.uniform(lo, hi)
        e = rng.uniform(lo, hi)
        if np.linalg.norm(e - p) >= arena.min_initial_separation_m:
            return p, e
    raise RuntimeError(
        f"no spawn pair with separation >= {arena.min_initial_separation_m} m after {max_tries} tries")


def reset(arena: ArenaSpec, seed: int):
    """Initial pursuer and evader states plus the repeat-padded relative-position history."""
    rng = np.random.default_rng(seed)
    p, e = sample_initial_positions(arena, rng)
    history = np.repeat((e - p)[None, :], HISTORY_LEN, axis=0)
    return QuadState.at_rest(p), QuadState.at_rest(e), history


def compute_rewards(prev_distance, distance, captured, timed_out, oob_pursuer, oob_evader,
                    rates_pursuer, rates_evader, coeffs: RewardCoeffs):
    """Per-step pursuer and evader rewards. Deliberately not zero-sum."""
    captured = np.asarray(captured, dtype=float)
    timed_out = np.asarray(timed_out, dtype=float)
    rate_p = np.linalg.norm(np.asarray(rates_pursuer, dtype=float), axis=-1)
    rate_e = np.linalg.norm(np.asarray(rates_evader, dtype=float), axis=-1)
    r_p = (coeffs.kappa_a * (np.asarray(prev_distance) - np.asarray(distance))
           - coeffs.kappa_br * rate_p
           + coeffs.kappa_c * captured
           - coeffs.kappa_b * np.asarray(oob_pursuer, dtype=float)
           - coeffs.kappa_t * timed_out)
    r_e = (coeffs.r_step
           - coeffs.kappa_br * rate_e
           - coeffs.kappa_c * captured
           - coeffs.kappa_b * np.asarray(oob_evader, dtype=float)
           + coeffs.kappa_t * timed_out)
    return r_p, r_e


def build_observation(role: str, t, positions, velocities, rotations, body_rates, history,
                      arena: ArenaSpec, norm: ObsNormalization) -> np.ndarray:
    """Normalized observation for ``role``.

    ``positions`` etc. are (..., 2, ·) arrays indexed by role; ``history`` is the
    pursuer-frame relative position (evader minus pursuer), oldest first.
    Layout: time | 5 relative positions | altitude (pursuer) or position
    (evader) | rotation row-major | velocity | body rates.
    """
    i = role_index(role)
    t = np.asarray(t, dtype=float)
    rel = history if i == 0 else -history
    parts = [
        (t / arena.max_steps)[..., None],
        (rel / np.asarray(norm.relative_position)).reshape(rel.shape[:-2] + (-1,)),
    ]
    centered = positions[..., i, :] - np.asarray(arena.center_m)
    if i == 0:
        parts.append(centered[..., 2:3] / norm.altitude)
    else:
        parts.append(centered / np.asarray(norm.position))
    R = rotations[..., i, :, :]
    parts += [
        R.reshape(R.shape[:-2] + (9,)),
        velocities[..., i, :] / np.asarray(norm.velocity),
        body_rates[..., i, :] / np.asarray(norm.body_rates),
    ]
    obs = np.concatenate(parts, axis=-1)
    return np.clip(obs, -norm.clip, norm.clip)


class PursuitEvasionBatch:
    """N independent 1v1 episodes stepped together.

    With ``auto_reset`` finished episodes restart immediately with seeds drawn
    from a stream seeded by ``seed``; without it, finished rows stay frozen
    until :meth:`reset` is called.
    """

    def __init__(self, config: EnvConfig, num_envs: int, seed: int = 0, auto_reset: bool = True):
        if num_envs <= 0:
            raise ValueError("num_envs must be positive")
        self.config = config
        self.num_envs = num_envs
        self.auto_reset = auto_reset
        self._seed_stream = np.random.default_rng(seed)
        self._next_episode_id = 0

        n = num_envs
        self.state = QuadState.at_rest(batch_shape=(n, 2))
        self.inner = InnerLoop(config.params, config.pid, config.velocity_gains, PidMemory.zeros((n, 2)))
        self.history = np.zeros((n, HISTORY_LEN, 3))
        self.t = np.zeros(n, dtype=np.int64)
        self.prev_distance = np.zeros(n)
        self.done = np.zeros(n, dtype=bool)
        self.initial_positions = np.zeros((n, 2, 3))
        self.episode_seed = np.zeros(n, dtype=np.int64)
        self.episode_id = np.zeros(n, dtype=np.int64)
        self.crashed = np.zeros((n, 2), dtype=bool)
        self.last_action = np.zeros((n, 2, 4))
        self.reset()

    def draw_seeds(self, count: int) -> np.ndarray:
        return self._seed_stream.integers(0, 2**62, size=count)

    def reset(self, rows=None, seeds=None) -> None:
        rows = np.arange(self.num_envs) if rows is None else np.asarray(rows, dtype=np.int64)
        if len(rows) == 0:
            return
        seeds = self.draw_seeds(len(rows)) if seeds is None else np.asarray(seeds, dtype=np.int64)
        if len(seeds) != len(rows):
            raise ValueError("one seed per reset row required")
        for row, seed in zip(rows, seeds):
            p, e, hist = reset(self.config.arena, int(seed))
            self.state.position_m[row] = [p.position_m, e.position_m]
            self.initial_positions[row] = self.state.position_m[row]
            self.history[row] = hist
            self.prev_distance[row] = np.linalg.norm(hist[-1])
            self.episode_seed[row] = seed
            self.episode_id[row] = self._next_episode_id
            self._next_episode_id += 1
        self.state.velocity_mps[rows] = 0.0
        self.state.rotation[rows] = np.eye(3)
        self.state.body_rates_radps[rows] = 0.0
        self.t[rows] = 0
        self.done[rows] = False
        self.crashed[rows] = False
        self.last_action[rows] = 0.0
        mask = np.zeros(self.num_envs, dtype=bool)
        mask[rows] = True
        self.inner.memory.reset(np.stack([mask, mask], axis=1))

    def set_positions(self, pursuer, evader, rows=None) -> None:
        """Place vehicles at rest (tests and scripted scenarios)."""
        rows = np.arange(self.num_envs) if rows is None else rows
        self.state.position_m[rows, 0] = pursuer
        self.state.position_m[rows, 1] = evader
        self.state.velocity_mps[rows] = 0.0
        rel = self.state.position_m[rows, 1] - self.state.position_m[rows, 0]
        self.history[rows] = rel[..., None, :]
        self.prev_distance[rows] = np.linalg.norm(rel, axis=-1)
        self.initial_positions[rows] = self.state.position_m[rows]

    def observe(self, role: str) -> np.ndarray:
        s = self.state
        return build_observation(role, self.t, s.position_m, s.velocity_mps, s.rotation, s.body_rates_radps,
                                 self.history, self.config.arena, self.config.normalization)

    @property
    def time_s(self) -> np.ndarray:
        return self.t * self.config.dt_s

    def step(self, action_pursuer: ActionCommand, action_evader: ActionCommand) -> StepOutcome:
        """Advance every unfinished episode by one control/physics step.

        With ``auto_reset`` the finished rows are restarted before returning, so
        :meth:`observe` already shows the next episode; the outcome still
        describes the step that ended the old one.
        """
        cfg = self.config
        n = self.num_envs
        for cmd in (action_pursuer, action_evader):
            if np.shape(cmd.thrust_norm) != (n,):
                raise ValueError(f"expected commands for {n} environments, got shape {np.shape(cmd.thrust_norm)}")
        active = ~self.done

        cmd = ActionCommand(
            np.stack([action_pursuer.is_velocity, action_evader.is_velocity], axis=1),
            np.stack([action_pursuer.body_rates_des, action_evader.body_rates_des], axis=1),
            np.stack([action_pursuer.thrust_norm, action_evader.thrust_norm], axis=1),
            np.stack([action_pursuer.velocity_des, action_evader.velocity_des], axis=1),
        )
        old = self.state
        saved_memory = (self.inner.memory.integral_torque.copy(), self.inner.memory.prev_error.copy(),
                        self.inner.memory.primed.copy())
        rotors = self.inner.rotor_speeds(cmd, old, cfg.dt_s)

        force = np.zeros((n, 2, 3))
        force[:, 0] = cfg.downwash(old[:, 0], old[:, 1], cfg.params)
        force[:, 1] = cfg.downwash(old[:, 1], old[:, 0], cfg.params)
        new = dynamics.step(old, rotors, cfg.params, force, cfg.dt_s)

        # ground contact: clamp to the floor and kill downward speed
        floor = cfg.arena.floor_z
        below = new.position_m[..., 2] < floor
        if np.any(below):
            new.position_m[..., 2] = np.where(below, floor, new.position_m[..., 2])
            new.velocity_mps[..., 2] = np.where(below, np.maximum(new.velocity_mps[..., 2], 0.0),
                                                new.velocity_mps[..., 2])

        if not np.all(active):
            keep = ~active
            for name in ("position_m", "velocity_mps", "rotation", "body_rates_radps"):
                getattr(new, name)[keep] = getattr(old, name)[keep]
            mem = self.inner.memory
            mem.integral_torque[keep], mem.prev_error[keep], mem.primed[keep] = (a[keep] for a in saved_memory)
        self.state = new

        rel = new.position_m[:, 1] - new.position_m[:, 0]
        distance = np.sqrt((rel * rel).sum(axis=-1))
        t_next = self.t + active
        captured = active & (distance < cfg.arena.capture_radius_m)
        timed_out = active & ~captured & (t_next >= cfg.arena.max_steps)
        if cfg.bounds_penalty:
            oob_p = active & (new.position_m[:, 0, 2] - floor < cfg.arena.z_min_m)
            oob_e = active & ~cfg.arena.contains(new.position_m[:, 1])
        else:
            oob_p = oob_e = np.zeros(n, dtype=bool)
        r_p, r_e = compute_rewards(self.prev_distance, distance, captured, timed_out, oob_p, oob_e,
                                   new.body_rates_radps[:, 0], new.body_rates_radps[:, 1], cfg.rewards)
        r_p = np.where(active, r_p, 0.0)
        r_e = np.where(active, r_e, 0.0)
        crashed_now = below & active[:, None]

        self.history[active] = np.concatenate([self.history[active, 1:], rel[active, None, :]], axis=1)
        self.prev_distance = np.where(active, distance, self.prev_distance)
        self.t = t_next
        self.crashed |= crashed_now
        self.last_action[active] = cmd.as_array()[active]
        self.done = self.done | captured | timed_out

        outcome = StepOutcome(r_p, r_e, captured, timed_out, oob_p, oob_e, distance, self.done.copy(),
                              crashed_now[:, 0], crashed_now[:, 1])
        if self.auto_reset and np.any(self.done):
            self.reset(np.flatnonzero(self.done))
        return outcome


class PursuitEvasionEnv:
    """Single episode front end over a batch of one."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self._batch = PursuitEvasionBatch(self.config, 1, seed=0, auto_reset=False)

    def reset(self, seed: int) -> None:
        self._batch.reset([0], [seed])

    @property
    def batch(self) -> PursuitEvasionBatch:
        return self._batch

    @property
    def pursuer(self) -> QuadState:
        return self._batch.state[0, 0]

    @property
    def evader(self) -> QuadState:
        return self._batch.state[0, 1]

    @property
    def t(self) -> int:
        return int(self._batch.t[0])

    @property
    def done(self) -> bool:
        return bool(self._batch.done[0])

    def observe(self, role: str) -> np.ndarray:
        return self._batch.observe(role)[0]

    def step(self, action_pursuer: ActionCommand, action_evader: ActionCommand) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode is finished; call reset() first")
        out = self._batch.step(_batched(action_pursuer), _batched(action_evader))
        return StepOutcome(*(np.asarray(x)[0].item() for x in out))


def _batched(cmd: ActionCommand) -> ActionCommand:
    if np.ndim(cmd.thrust_norm) == 1:
        return cmd
    return ActionCommand(*(np.asarray(x)[None] for x in (cmd.is_velocity, cmd.body_rates_des,
                                                         cmd.thrust_norm, cmd.velocity_des)))


def step_batch(batch: PursuitEvasionBatch, actions_pursuer: ActionCommand, actions_evader: ActionCommand) -> StepOutcome:
    return batch.step(actions_pursuer, actions_evader)


TRAJECTORY_COLUMNS = (
    "episode_id", "t", "role",
    "px", "py", "pz", "vx", "vy", "vz",
    "qw", "qx", "qy", "qz",
    "wx", "wy", "wz",
    "a0", "a1", "a2", "a3",
    "reward", "captured", "timed_out", "oob", "crashed",
)


def trajectory_rows(batch: PursuitEvasionBatch, outcome: StepOutcome, row: int = 0) -> list[dict]:
    """Two trace records (pursuer, evader) for the step that produced ``outcome``.

    Action columns hold (wx, wy, wz, T/m) for rate commands and (vx, vy, vz, 0)
    for velocity commands; the quaternion is scalar-first.
    """
    s = batch.state
    records = []
    for i, role in enumerate(ROLES):
        qx, qy, qz, qw = Rotation.from_matrix(s.rotation[row, i]).as_quat()
        reward = outcome.reward_pursuer[row] if i == 0 else outcome.reward_evader[row]
        oob = outcome.oob_pursuer[row] if i == 0 else outcome.oob_evader[row]
        crashed = outcome.crashed_pursuer[row] if i == 0 else outcome.crashed_evader[row]
        records.append({
            "episode_id": int(batch.episode_id[row]), "t": int(batch.t[row]), "role": role,
            **dict(zip(("px", "py", "pz"), s.position_m[row, i].tolist())),
            **dict(zip(("vx", "vy", "vz"), s.velocity_mps[row, i].tolist())),
            "qw": qw, "qx": qx, "qy": qy, "qz": qz,
            **dict(zip(("wx", "wy", "wz"), s.body_rates_radps[row, i].tolist())),
            **dict(zip(("a0", "a1", "a2", "a3"), batch.last_action[row, i].tolist())),
            "reward": float(reward), "captured": int(outcome.captured[row]),
            "timed_out": int(outcome.timed_out[row]), "oob": int(oob), "crashed": int(crashed),
        })
    return records


def write_trajectory_csv(records: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        writer.writerows(records)
