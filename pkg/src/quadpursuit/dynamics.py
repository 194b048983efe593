"""Quadrotor rigid-body model with RK4 integration.

World frame is z-up; gravity acts along -z. ``rotation`` maps body to world.
Every function accepts optional leading batch dimensions, so the same code
steps one vehicle or a whole batch of environments.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEFAULT_DT = 0.016


class NonFiniteStateError(FloatingPointError):
    """Raised when a state, rotor command or integration result is not finite."""


class HoverInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class QuadParams:
    """Vehicle constants. Defaults are the nominal AscTec Hummingbird."""

    mass_kg: float = 0.716
    inertia_diag: tuple[float, float, float] = (0.007, 0.007, 0.012)
    arm_length_m: float = 0.17
    drag_coeff: float = 0.2
    rotor_force_const: float = 8.54858e-6
    rotor_moment_const: float = 1.3677729e-7
    rotor_max_speed: float = 838.0
    rotor_angles_rad: tuple[float, float, float, float] = (0.0, np.pi / 2, np.pi, -np.pi / 2)
    rotor_spin_dirs: tuple[float, float, float, float] = (1.0, -1.0, 1.0, -1.0)
    gravity_mps2: float = 9.81

    def __post_init__(self):
        if not self.mass_kg > 0:
            raise ValueError(f"mass_kg must be > 0, got {self.mass_kg}")
        if len(self.inertia_diag) != 3 or not all(i > 0 for i in self.inertia_diag):
            raise ValueError(f"inertia_diag must hold three positive values, got {self.inertia_diag}")
        if not self.arm_length_m > 0:
            raise ValueError(f"arm_length_m must be > 0, got {self.arm_length_m}")
        if not self.drag_coeff >= 0:
            raise ValueError(f"drag_coeff must be >= 0, got {self.drag_coeff}")
        if not self.rotor_force_const > 0:
            raise ValueError(f"rotor_force_const must be > 0, got {self.rotor_force_const}")
        if not self.rotor_moment_const >= 0:
            raise ValueError(f"rotor_moment_const must be >= 0, got {self.rotor_moment_const}")
        if not self.rotor_max_speed > 0:
            raise ValueError(f"rotor_max_speed must be > 0, got {self.rotor_max_speed}")
        if len(self.rotor_angles_rad) != 4 or len(self.rotor_spin_dirs) != 4:
            raise ValueError("expected four rotor angles and four spin directions")
        if any(abs(s) != 1.0 for s in self.rotor_spin_dirs) or sum(self.rotor_spin_dirs) != 0:
            raise ValueError(f"rotor_spin_dirs must be +-1 and cancel, got {self.rotor_spin_dirs}")
        if not self.gravity_mps2 > 0:
            raise ValueError(f"gravity_mps2 must be > 0, got {self.gravity_mps2}")

    @cached_property
    def inertia(self) -> np.ndarray:
        return np.asarray(self.inertia_diag, dtype=float)

    @cached_property
    def rotor_positions(self) -> np.ndarray:
        """Body-frame rotor positions, shape (4, 3)."""
        angles = np.asarray(self.rotor_angles_rad, dtype=float)
        pos = self.arm_length_m * np.stack([np.cos(angles), np.sin(angles), np.zeros(4)], axis=1)
        # cos(pi/2) and friends are ~1e-17, not 0; snap so symmetric thrust gives exactly zero torque
        pos[np.abs(pos) < 1e-12 * self.arm_length_m] = 0.0
        return pos

    @cached_property
    def allocation(self) -> np.ndarray:
        """Maps squared rotor speeds to [thrust, tau_x, tau_y, tau_z]; shape (4, 4)."""
        kt, km = self.rotor_force_const, self.rotor_moment_const
        r = self.rotor_positions
        return np.stack([
            np.full(4, kt),
            kt * r[:, 1],
            -kt * r[:, 0],
            km * np.asarray(self.rotor_spin_dirs, dtype=float),
        ])

    @cached_property
    def allocation_inv(self) -> np.ndarray:
        return np.linalg.inv(self.allocation)

    @property
    def max_thrust_N(self) -> float:
        return 4.0 * self.rotor_force_const * self.rotor_max_speed**2

    @property
    def max_thrust_norm(self) -> float:
        """Mass-normalized collective thrust limit, m/s^2."""
        return self.max_thrust_N / self.mass_kg


@dataclass(frozen=True)
class QuadState:
    position_m: np.ndarray
    velocity_mps: np.ndarray
    rotation: np.ndarray
    body_rates_radps: np.ndarray

    @classmethod
    def at_rest(cls, position=(0.0, 0.0, 0.0), batch_shape=()):
        position = np.broadcast_to(np.asarray(position, dtype=float), batch_shape + (3,)).copy()
        return cls(
            position_m=position,
            velocity_mps=np.zeros(batch_shape + (3,)),
            rotation=np.broadcast_to(np.eye(3), batch_shape + (3, 3)).copy(),
            body_rates_radps=np.zeros(batch_shape + (3,)),
        )

    def check_finite(self) -> None:
        for name in ("position_m", "velocity_mps", "rotation", "body_rates_radps"):
            value = getattr(self, name)
            if not np.all(np.isfinite(value)):
                raise NonFiniteStateError(f"non-finite value in QuadState.{name}")

    def __getitem__(self, idx) -> QuadState:
        return QuadState(self.position_m[idx], self.velocity_mps[idx], self.rotation[idx], self.body_rates_radps[idx])


@dataclass(frozen=True)
class StateDerivative:
    d_position: np.ndarray
    d_velocity: np.ndarray
    d_rotation: np.ndarray
    d_body_rates: np.ndarray


def skew(w: np.ndarray) -> np.ndarray:
    """Hat map: skew(w) @ x == cross(w, x). Works on (..., 3)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    # elementwise product + sum instead of matmul so batched and single results agree bitwise
    return (m * v[..., None, :]).sum(axis=-1)


def matmul3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[..., :, :, None] * b[..., None, :, :]).sum(axis=-2)


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def rotor_wrench(rotor_speeds: np.ndarray, params: QuadParams) -> tuple[np.ndarray, np.ndarray]:
    """Collective thrust (N) and body torque (N m) produced by the rotors."""
    sq = np.square(rotor_speeds)
    thrust = params.rotor_force_const * sq
    r = params.rotor_positions
    spin = np.asarray(params.rotor_spin_dirs, dtype=float)
    # r_i x (0, 0, T_i) = (r_y T_i, -r_x T_i, 0); reactive moment along body z
    torque = np.stack([
        (r[:, 1] * thrust).sum(axis=-1),
        (-r[:, 0] * thrust).sum(axis=-1),
        (spin * params.rotor_moment_const * sq).sum(axis=-1),
    ], axis=-1)
    return thrust.sum(axis=-1), torque


def derivatives(state: QuadState, rotor_speeds, params: QuadParams, external_force_N=None) -> StateDerivative:
    rotor_speeds = np.asarray(rotor_speeds, dtype=float)
    state.check_finite()
    if not np.all(np.isfinite(rotor_speeds)):
        raise NonFiniteStateError("non-finite rotor speeds")
    return _derivatives(state, rotor_speeds, params, external_force_N)


def _derivatives(state, rotor_speeds, params, external_force_N):
    thrust, torque = rotor_wrench(rotor_speeds, params)
    R, v, w = state.rotation, state.velocity_mps, state.body_rates_radps
    m = params.mass_kg

    # R @ (0, 0, T) is the body z column scaled by T
    accel = R[..., :, 2] * (thrust / m)[..., None] - params.drag_coeff * v
    accel = accel + np.array([0.0, 0.0, -params.gravity_mps2])
    if external_force_N is not None:
        accel = accel + np.asarray(external_force_N, dtype=float) / m

    inertia = params.inertia
    gyro = cross(w, inertia * w)
    d_rates = (torque - gyro) / inertia

    return StateDerivative(
        d_position=v,
        d_velocity=accel,
        d_rotation=_rotation_rate(R, w),
        d_body_rates=d_rates,
    )


def _rotation_rate(R: np.ndarray, w: np.ndarray) -> np.ndarray:
    # R @ skew(w), column by column: R @ (w x e_j)
    c0, c1, c2 = R[..., :, 0], R[..., :, 1], R[..., :, 2]
    w0, w1, w2 = (w[..., i, None] for i in range(3))
    return np.stack([w2 * c1 - w1 * c2, w0 * c2 - w2 * c0, w1 * c0 - w0 * c1], axis=-1)


def _advance(state: QuadState, d: StateDerivative, h: float) -> QuadState:
    return QuadState(
        state.position_m + h * d.d_position,
        state.velocity_mps + h * d.d_velocity,
        state.rotation + h * d.d_rotation,
        state.body_rates_radps + h * d.d_body_rates,
    )


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns of R, keeping a right-handed frame."""
    x = R[..., :, 0]
    x = x / np.sqrt((x * x).sum(axis=-1, keepdims=True))
    y = R[..., :, 1]
    y = y - (x * y).sum(axis=-1, keepdims=True) * x
    y = y / np.sqrt((y * y).sum(axis=-1, keepdims=True))
    z = cross(x, y)
    return np.stack([x, y, z], axis=-1)


def step(state: QuadState, rotor_speeds, params: QuadParams, external_force_N=None, dt_s: float = DEFAULT_DT) -> QuadState:
    """One classical RK4 step; the external force is held constant over the step."""
    if not dt_s > 0:
        raise ValueError(f"dt_s must be > 0, got {dt_s}")
    rotor_speeds = np.asarray(rotor_speeds, dtype=float)
    state.check_finite()
    if not np.all(np.isfinite(rotor_speeds)):
        raise NonFiniteStateError("non-finite rotor speeds")

    k1 = _derivatives(state, rotor_speeds, params, external_force_N)
    k2 = _derivatives(_advance(state, k1, dt_s / 2), rotor_speeds, params, external_force_N)
    k3 = _derivatives(_advance(state, k2, dt_s / 2), rotor_speeds, params, external_force_N)
    k4 = _derivatives(_advance(state, k3, dt_s), rotor_speeds, params, external_force_N)

    def combine(name):
        a, b, c, d = (getattr(k, name) for k in (k1, k2, k3, k4))
        return (a + 2.0 * b + 2.0 * c + d) * (dt_s / 6.0)

    nxt = QuadState(
        state.position_m + combine("d_position"),
        state.velocity_mps + combine("d_velocity"),
        orthonormalize(state.rotation + combine("d_rotation")),
        state.body_rates_radps + combine("d_body_rates"),
    )
    nxt.check_finite()
    return nxt


def hover_rotor_speed(params: QuadParams) -> float:
    omega = float(np.sqrt(params.mass_kg * params.gravity_mps2 / (4.0 * params.rotor_force_const)))
    if omega > params.rotor_max_speed:
        raise HoverInfeasibleError(
            f"hover needs {omega:.1f} rad/s per rotor, above the {params.rotor_max_speed} rad/s limit")
    return omega


@dataclass(frozen=True)
class CylinderDownwash:
    """Simplified downwash: a constant-radius jet below the source vehicle.

    A receiver inside the cylinder (radius ``radius_arms`` arm lengths, ``depth_m``
    deep) is pushed down with ``k_dw * m * g`` tapering linearly to zero at the
    cylinder bottom. This is a stand-in, not a calibrated aerodynamic model.
    """

    k_dw: float = 0.3
    radius_arms: float = 2.0
    depth_m: float = 2.0
    enabled: bool = True

    def __call__(self, receiver: QuadState, source: QuadState, params: QuadParams) -> np.ndarray:
        rel = source.position_m - receiver.position_m
        depth = rel[..., 2]
        lateral_sq = rel[..., 0] ** 2 + rel[..., 1] ** 2
        radius = self.radius_arms * params.arm_length_m
        inside = (depth > 0) & (depth < self.depth_m) & (lateral_sq < radius**2)
        if not self.enabled:
            inside = np.zeros_like(inside)
        magnitude = np.where(inside, self.k_dw * params.mass_kg * params.gravity_mps2 * (1.0 - depth / self.depth_m), 0.0)
        out = np.zeros(np.shape(depth) + (3,))
        out[..., 2] = -magnitude
        return out


def downwash_force(receiver: QuadState, source: QuadState, params: QuadParams, model: CylinderDownwash | None = None) -> np.ndarray:
    return (model or CylinderDownwash())(receiver, source, params)
