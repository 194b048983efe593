"""Inner-loop control: rotor mixer, body-rate PID and a cascaded velocity controller."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dynamics import QuadParams, QuadState, cross, matvec

RATE_LIMITS = np.array([15.0, 15.0, 5.0])
VELOCITY_LIMITS = np.array([15.0, 15.0, 5.0])
VELOCITY_NORM_LIMIT = 15.0
THRUST_NORM_MAX = QuadParams().max_thrust_norm

_BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class ActionCommand:
    """Policy-level command for one vehicle or a batch of vehicles.

    Rows with ``is_velocity`` set carry a desired world velocity; the others
    carry desired body rates plus mass-normalized collective thrust. Unused
    fields are zero. Construct through :meth:`rate` or :meth:`velocity`.
    """

    is_velocity: np.ndarray
    body_rates_des: np.ndarray
    thrust_norm: np.ndarray
    velocity_des: np.ndarray

    def __post_init__(self):
        rates = np.abs(self.body_rates_des)
        if np.any(rates > RATE_LIMITS + _BOUND_SLACK):
            raise ValueError(f"body-rate command outside +-{RATE_LIMITS.tolist()} rad/s")
        if np.any(self.thrust_norm < -_BOUND_SLACK) or np.any(self.thrust_norm > THRUST_NORM_MAX + _BOUND_SLACK):
            raise ValueError(f"thrust_norm outside [0, {THRUST_NORM_MAX:.2f}] m/s^2")
        if np.any(np.abs(self.velocity_des) > VELOCITY_LIMITS + _BOUND_SLACK):
            raise ValueError(f"velocity command outside +-{VELOCITY_LIMITS.tolist()} m/s")
        for name in ("body_rates_des", "thrust_norm", "velocity_des"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite {name}")

    @classmethod
    def rate(cls, body_rates, thrust_norm) -> ActionCommand:
        body_rates = np.asarray(body_rates, dtype=float)
        thrust_norm = np.asarray(thrust_norm, dtype=float)
        shape = body_rates.shape[:-1]
        return cls(np.zeros(shape, dtype=bool), body_rates, np.broadcast_to(thrust_norm, shape).copy(), np.zeros(shape + (3,)))

    @classmethod
    def velocity(cls, velocity) -> ActionCommand:
        velocity = np.asarray(velocity, dtype=float)
        shape = velocity.shape[:-1]
        return cls(np.ones(shape, dtype=bool), np.zeros(shape + (3,)), np.zeros(shape), velocity)

    @classmethod
    def hover(cls, params: QuadParams, shape=()) -> ActionCommand:
        return cls.rate(np.zeros(shape + (3,)), np.full(shape, params.gravity_mps2))

    @classmethod
    def concat(cls, parts: list[ActionCommand], rows: list[np.ndarray], n: int) -> ActionCommand:
        """Scatter per-group commands back into one batch of ``n`` rows."""
        is_vel = np.zeros(n, dtype=bool)
        rates = np.zeros((n, 3))
        thrust = np.zeros(n)
        vel = np.zeros((n, 3))
        for part, idx in zip(parts, rows):
            is_vel[idx] = part.is_velocity
            rates[idx] = part.body_rates_des
            thrust[idx] = part.thrust_norm
            vel[idx] = part.velocity_des
        return cls(is_vel, rates, thrust, vel)

    def as_array(self) -> np.ndarray:
        """Four numbers per row: (wx, wy, wz, T/m) or (vx, vy, vz, 0)."""
        rate_part = np.concatenate([self.body_rates_des, self.thrust_norm[..., None]], axis=-1)
        vel_part = np.concatenate([self.velocity_des, np.zeros(self.thrust_norm.shape + (1,))], axis=-1)
        return np.where(self.is_velocity[..., None], vel_part, rate_part)


@dataclass(frozen=True)
class RatePidGains:
    kp: tuple[float, float, float] = (0.3, 0.3, 0.15)
    ki: tuple[float, float, float] = (0.05, 0.05, 0.02)
    kd: tuple[float, float, float] = (0.003, 0.003, 0.001)
    integral_limit: tuple[float, float, float] = (0.5, 0.5, 0.2)

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            if len(getattr(self, name)) != 3 or any(g < 0 for g in getattr(self, name)):
                raise ValueError(f"{name} must be three non-negative gains")
        if len(self.integral_limit) != 3 or any(lim <= 0 for lim in self.integral_limit):
            raise ValueError("integral_limit must be three positive values")


@dataclass
class PidMemory:
    """Integrator and previous-error memory; mutated in place by :func:`track_body_rates`."""

    integral_torque: np.ndarray
    prev_error: np.ndarray
    primed: np.ndarray

    @classmethod
    def zeros(cls, batch_shape=()) -> PidMemory:
        return cls(np.zeros(batch_shape + (3,)), np.zeros(batch_shape + (3,)), np.zeros(batch_shape, dtype=bool))

    def reset(self, mask=None) -> None:
        if mask is None:
            mask = np.ones(self.primed.shape, dtype=bool)
        self.integral_torque[mask] = 0.0
        self.prev_error[mask] = 0.0
        self.primed[mask] = False


class MixResult(NamedTuple):
    rotor_speeds: np.ndarray
    saturated: np.ndarray


def mix(torque_des_Nm, thrust_total_N, params: QuadParams) -> MixResult:
    """Allocate thrust and body torque to rotor speeds with thrust priority.

    When a rotor would leave [0, max speed], the torque demand is scaled down
    uniformly until every rotor fits; the collective thrust is kept.
    """
    torque = np.asarray(torque_des_Nm, dtype=float)
    thrust = np.clip(np.asarray(thrust_total_N, dtype=float), 0.0, params.max_thrust_N)
    s_max = params.rotor_max_speed**2
    inv = params.allocation_inv

    sq_thrust = thrust[..., None] * inv[:, 0]
    sq_torque = (inv[:, 1:] * torque[..., None, :]).sum(axis=-1)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        room_up = np.where(sq_torque > 0, (s_max - sq_thrust) / sq_torque, np.inf)
        room_down = np.where(sq_torque < 0, sq_thrust / -sq_torque, np.inf)
    scale = np.minimum(1.0, np.minimum(room_up, room_down).min(axis=-1))
    scale = np.maximum(scale, 0.0)

    sq = np.clip(sq_thrust + scale[..., None] * sq_torque, 0.0, s_max)
    return MixResult(np.sqrt(sq), scale < 1.0)


def track_body_rates(cmd: ActionCommand, state: QuadState, gains: RatePidGains, params: QuadParams,
                     memory: PidMemory, dt_s: float) -> np.ndarray:
    """Rate PID plus mixer. Velocity rows of ``cmd`` are ignored; convert them first."""
    error = cmd.body_rates_des - state.body_rates_radps
    kp, ki, kd = (np.asarray(g) for g in (gains.kp, gains.ki, gains.kd))
    limit = np.asarray(gains.integral_limit)

    memory.integral_torque[...] = np.clip(memory.integral_torque + ki * error * dt_s, -limit, limit)
    prev = np.where(memory.primed[..., None], memory.prev_error, error)
    derivative = (error - prev) / dt_s
    memory.prev_error[...] = error
    memory.primed[...] = True

    torque = kp * error + memory.integral_torque + kd * derivative
    thrust = params.mass_kg * cmd.thrust_norm
    return mix(torque, thrust, params).rotor_speeds


@dataclass(frozen=True)
class VelocityGains:
    k_vel: tuple[float, float, float] = (2.0, 2.0, 3.0)
    k_att: float = 8.0
    max_tilt_rad: float = np.deg2rad(60.0)
    min_vertical_accel: float = 2.0


def velocity_controller(cmd: ActionCommand, state: QuadState, params: QuadParams, dt_s: float,
                        gains: VelocityGains = VelocityGains()) -> ActionCommand:
    """Convert desired world velocity into a body-rate + thrust command.

    Acceleration demand ``k_vel * (v_des - v) + c_d * v + g`` fixes the desired thrust
    axis; roll and pitch rates rotate the body z axis toward it, the yaw rate
    is held at zero. The desired speed is capped at 15 m/s in norm.
    """
    g = params.gravity_mps2
    v_des = np.asarray(cmd.velocity_des, dtype=float)
    speed = np.sqrt((v_des * v_des).sum(axis=-1, keepdims=True))
    v_des = v_des * np.minimum(1.0, VELOCITY_NORM_LIMIT / np.maximum(speed, 1e-12))

    # drag feedforward removes the steady-state speed deficit of pure P control
    a_des = np.asarray(gains.k_vel) * (v_des - state.velocity_mps) + params.drag_coeff * state.velocity_mps
    a_des[..., 2] = np.maximum(a_des[..., 2] + g, gains.min_vertical_accel)
    horiz = np.sqrt(a_des[..., 0] ** 2 + a_des[..., 1] ** 2)
    horiz_cap = a_des[..., 2] * np.tan(gains.max_tilt_rad)
    shrink = np.minimum(1.0, horiz_cap / np.maximum(horiz, 1e-12))
    a_des[..., 0] *= shrink
    a_des[..., 1] *= shrink

    norm = np.sqrt((a_des * a_des).sum(axis=-1, keepdims=True))
    z_des = np.where(norm > 1e-6, a_des / np.maximum(norm, 1e-12), np.array([0.0, 0.0, 1.0]))
    z_body = state.rotation[..., :, 2]

    # axis-angle rotation taking the body z axis onto z_des, expressed in body frame
    axis_world = cross(z_body, z_des)
    sin_a = np.sqrt((axis_world * axis_world).sum(axis=-1, keepdims=True))
    cos_a = (z_body * z_des).sum(axis=-1, keepdims=True)
    angle = np.arctan2(sin_a, cos_a)
    axis_world = np.where(sin_a > 1e-9, axis_world / np.maximum(sin_a, 1e-12), 0.0)
    axis_body = matvec(np.swapaxes(state.rotation, -1, -2), axis_world)

    rates = gains.k_att * angle * axis_body
    rates[..., 2] = 0.0
    rates = np.clip(rates, -RATE_LIMITS, RATE_LIMITS)
    thrust = np.clip((a_des * z_body).sum(axis=-1), 0.0, THRUST_NORM_MAX)
    return ActionCommand.rate(rates, thrust)


@dataclass
class InnerLoop:
    """Per-vehicle controller stack owned by one environment (batch)."""

    params: QuadParams
    gains: RatePidGains = field(default_factory=RatePidGains)
    velocity_gains: VelocityGains = field(default_factory=VelocityGains)
    memory: PidMemory = None

    def __post_init__(self):
        if self.memory is None:
            self.memory = PidMemory.zeros()

    def rotor_speeds(self, cmd: ActionCommand, state: QuadState, dt_s: float) -> np.ndarray:
        if np.any(cmd.is_velocity):
            converted = velocity_controller(cmd, state, self.params, dt_s, self.velocity_gains)
            mask = cmd.is_velocity
            cmd = ActionCommand.rate(
                np.where(mask[..., None], converted.body_rates_des, cmd.body_rates_des),
                np.where(mask, converted.thrust_norm, cmd.thrust_norm),
            )
        return track_body_rates(cmd, state, self.gains, self.params, self.memory, dt_s)
