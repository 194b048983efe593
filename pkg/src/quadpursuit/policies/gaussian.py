"""Tanh-squashed diagonal Gaussian actor with a separate value critic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..control import RATE_LIMITS, THRUST_NORM_MAX, VELOCITY_LIMITS, ActionCommand
from .mlp import MlpParams, forward

RATE = "rate"
VELOCITY = "velocity"
HEURISTIC = "heuristic"
MODALITIES = (RATE, VELOCITY, HEURISTIC)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
HIDDEN = (128, 128, 128)
_LOG_2PI = np.log(2.0 * np.pi)


def action_bounds(modality: str) -> tuple[np.ndarray, np.ndarray]:
    if modality == RATE:
        return np.append(-RATE_LIMITS, 0.0), np.append(RATE_LIMITS, THRUST_NORM_MAX)
    if modality == VELOCITY:
        return -VELOCITY_LIMITS.copy(), VELOCITY_LIMITS.copy()
    raise ValueError(f"no action bounds for modality {modality!r}")


@dataclass
class GaussianPolicy:
    actor: MlpParams
    log_std: np.ndarray
    critic: MlpParams
    modality: str = RATE

    def __post_init__(self):
        if self.modality not in (RATE, VELOCITY):
            raise ValueError(f"learned policies are rate or velocity, got {self.modality!r}")
        low, _ = action_bounds(self.modality)
        if self.actor.layer_sizes[-1] != len(low) or self.log_std.shape != (len(low),):
            raise ValueError("actor output and log_std must match the action dimension")
        if self.critic.layer_sizes[-1] != 1 or self.critic.layer_sizes[0] != self.actor.layer_sizes[0]:
            raise ValueError("critic must map the observation to one value")

    @property
    def obs_dim(self) -> int:
        return self.actor.layer_sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.layer_sizes[-1]

    @classmethod
    def init(cls, obs_dim: int, modality: str, rng: np.random.Generator, hidden=HIDDEN,
             log_std=-1.0, hover_thrust: float | None = 9.81) -> GaussianPolicy:
        """Fresh policy; the rate actor starts out commanding roughly hover thrust."""
        low, high = action_bounds(modality)
        act_dim = len(low)
        actor = MlpParams.init((obs_dim, *hidden, act_dim), rng, output_gain=0.01)
        critic = MlpParams.init((obs_dim, *hidden, 1), rng, output_gain=1.0)
        if modality == RATE and hover_thrust is not None:
            mid, half = (high[3] + low[3]) / 2, (high[3] - low[3]) / 2
            actor.biases[-1][3] = np.arctanh((hover_thrust - mid) / half)
        return cls(actor, np.full(act_dim, float(log_std)), critic, modality)

    def astype(self, dtype) -> GaussianPolicy:
        return GaussianPolicy(self.actor.astype(dtype), self.log_std.astype(dtype), self.critic.astype(dtype), self.modality)

    def copy(self) -> GaussianPolicy:
        return self.astype(self.log_std.dtype)

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def squash(self, raw: np.ndarray) -> np.ndarray:
        low, high = action_bounds(self.modality)
        return (high + low) / 2 + (high - low) / 2 * np.tanh(raw)

    def to_command(self, raw: np.ndarray) -> ActionCommand:
        a = self.squash(raw)
        if self.modality == RATE:
            return ActionCommand.rate(a[..., :3], a[..., 3])
        return ActionCommand.velocity(a)

    def value(self, obs) -> np.ndarray:
        return forward(self.critic, obs)[..., 0]


class ActResult(NamedTuple):
    action: ActionCommand
    log_prob: np.ndarray
    value: np.ndarray
    raw: np.ndarray


def log_tanh_derivative(raw: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), evaluated without cancellation for large |u|."""
    return 2.0 * (np.log(2.0) - raw - np.logaddexp(0.0, -2.0 * raw))


def gaussian_log_prob(raw, mean, log_std) -> np.ndarray:
    z = (raw - mean) * np.exp(-log_std)
    return (-0.5 * z**2 - log_std - 0.5 * _LOG_2PI).sum(axis=-1)


def log_prob_per_dim(policy: GaussianPolicy, raw, mean) -> np.ndarray:
    """Per-dimension log density of the squashed action (density on action space)."""
    low, high = action_bounds(policy.modality)
    log_std = policy.clamped_log_std()
    z = (raw - mean) * np.exp(-log_std)
    base = -0.5 * z**2 - log_std - 0.5 * _LOG_2PI
    return base - log_tanh_derivative(raw) - np.log((high - low) / 2)


def log_prob(policy: GaussianPolicy, raw, mean) -> np.ndarray:
    return log_prob_per_dim(policy, raw, mean).sum(axis=-1)


def act(policy: GaussianPolicy, obs, deterministic: bool = False, rng: np.random.Generator | None = None) -> ActResult:
    obs = np.asarray(obs, dtype=float)
    mean = forward(policy.actor, obs)
    if deterministic:
        raw = mean
    else:
        if rng is None:
            raise ValueError("stochastic act needs an rng")
        raw = mean + np.exp(policy.clamped_log_std()) * rng.standard_normal(mean.shape)
    return ActResult(policy.to_command(raw), log_prob(policy, raw, mean), policy.value(obs), raw)


def entropy(policy: GaussianPolicy) -> float:
    """Entropy of the pre-squash Gaussian (the squashed one has no closed form)."""
    return float((policy.clamped_log_std() + 0.5 * (_LOG_2PI + 1.0)).sum())
