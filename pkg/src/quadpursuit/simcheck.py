"""Self-check of the rigid-body integrator against closed-form references."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DEFAULT_DT, QuadParams, QuadState, hover_rotor_speed, skew, step


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tolerance)


def hover_drift(params: QuadParams, dt_s: float, steps: int = 1000) -> float:
    s = QuadState.at_rest((0.0, 0.0, 2.0))
    speeds = np.full(4, hover_rotor_speed(params))
    for _ in range(steps):
        s = step(s, speeds, params, dt_s=dt_s)
    return float(np.linalg.norm(s.position_m - [0.0, 0.0, 2.0]))


def free_fall_error(params: QuadParams, dt_s: float) -> float:
    """Relative error of v_z(1 s) against -(g/c)(1 - e^{-ct}).

    Uses the largest step not above ``dt_s`` that divides one second evenly.
    """
    n = math.ceil(1.0 / dt_s - 1e-9)
    s = QuadState.at_rest((0.0, 0.0, 100.0))
    for _ in range(n):
        s = step(s, np.zeros(4), params, dt_s=1.0 / n)
    g, c = params.gravity_mps2, params.drag_coeff
    exact = -g if c == 0 else -(g / c) * (1.0 - math.exp(-c))
    return float(abs(s.velocity_mps[2] - exact) / abs(exact))


def orthonormality_drift(params: QuadParams, dt_s: float, steps: int = 1000, seed: int = 3) -> float:
    rng = np.random.default_rng(seed)
    axis = np.array([0.3, -1.0, 0.2]) / np.linalg.norm([0.3, -1.0, 0.2])
    k = skew(axis)
    R = np.eye(3) + np.sin(1.1) * k + (1.0 - np.cos(1.1)) * k @ k
    s = QuadState(np.zeros(3), np.zeros(3), R, np.array([4.0, -7.0, 2.5]))
    hover = hover_rotor_speed(params)
    for _ in range(steps):
        s = step(s, rng.uniform(0.66 * hover, 1.5 * hover, size=4), params, dt_s=dt_s)
    return float(np.max(np.abs(s.rotation.T @ s.rotation - np.eye(3))))


def run_sim_checks(params: QuadParams | None = None, dt_s: float = DEFAULT_DT) -> list[CheckResult]:
    params = params or QuadParams()
    return [
        CheckResult("hover_drift_m", hover_drift(params, dt_s), 1e-3),
        CheckResult("free_fall_rel_error", free_fall_error(params, dt_s), 1e-4),
        CheckResult("orthonormality_drift", orthonormality_drift(params, dt_s), 1e-6),
    ]
