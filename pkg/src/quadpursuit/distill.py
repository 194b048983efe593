"""Behaviour cloning of a scripted opponent into a network policy.

Used to turn a heuristic seed policy into network weights so a learned policy
of the same role has something to warm-start from. The teacher is rolled out
with perturbed commands so the data covers recovery from off-nominal states;
labels are always the unperturbed teacher command.
"""

from __future__ import annotations

import numpy as np

from .control import ActionCommand, velocity_controller
from .env import EnvConfig, PursuitEvasionBatch, other_role, role_index
from .policies.gaussian import RATE, GaussianPolicy, action_bounds
from .policies.heuristics import Heuristic
from .policies.mlp import backward, forward_cached
from .ppo import Adam


def teacher_action(teacher: Heuristic, env: PursuitEvasionBatch, role: str, modality: str) -> np.ndarray:
    """Teacher command for every row, in the action space of ``modality``."""
    rows = np.arange(env.num_envs)
    cmd = teacher.command(env, role, rows)
    if modality != RATE:
        return cmd.velocity_des
    i = role_index(role)
    rate = velocity_controller(cmd, env.state[:, i], env.config.params, env.config.dt_s, env.config.velocity_gains)
    return np.concatenate([rate.body_rates_des, rate.thrust_norm[:, None]], axis=1)


def collect_demonstrations(teacher: Heuristic, role: str, modality: str, env_config: EnvConfig, num_envs: int,
                           steps: int, seed: int, noise: float = 0.3):
    """Roll out the teacher with additive noise in normalized action units.

    Returns (observations, normalized labels in [-1, 1]).
    """
    rng = np.random.default_rng(seed)
    env = PursuitEvasionBatch(env_config, num_envs, seed=int(rng.integers(2**31)), auto_reset=True)
    opponent = Heuristic("hover")
    low, high = action_bounds(modality)
    mid, half = (high + low) / 2, (high - low) / 2
    obs, labels = [], []
    first = role == "pursuer"
    for _ in range(steps):
        a = teacher_action(teacher, env, role, modality)
        obs.append(env.observe(role))
        labels.append((a - mid) / half)
        noisy = np.clip(a + noise * half * rng.standard_normal(a.shape), low, high)
        if modality == RATE:
            mine = ActionCommand.rate(noisy[:, :3], noisy[:, 3])
        else:
            mine = ActionCommand.velocity(noisy)
        theirs = opponent.command(env, other_role(role), np.arange(num_envs))
        env.step(mine, theirs) if first else env.step(theirs, mine)
    return np.concatenate(obs), np.clip(np.concatenate(labels), -0.999, 0.999)


def clone(policy: GaussianPolicy, obs: np.ndarray, labels: np.ndarray, iters: int, batch_size: int,
          lr: float, seed: int) -> list[float]:
    """Fit ``tanh(actor(obs))`` to ``labels`` by mean squared error. Updates ``policy.actor`` in place."""
    rng = np.random.default_rng(seed)
    params = policy.actor.parameters()
    opt = Adam(lr)
    losses = []
    for _ in range(iters):
        idx = rng.integers(len(obs), size=batch_size)
        out, inputs = forward_cached(policy.actor, obs[idx])
        squashed = np.tanh(out)
        err = squashed - labels[idx]
        losses.append(float(np.mean(err**2)))
        grad = 2.0 * err * (1.0 - squashed**2) / err.size
        gw, gb = backward(policy.actor, inputs, grad)
        opt.step(params, [g for pair in zip(gw, gb) for g in pair])
    return losses


def distill_heuristic(teacher: Heuristic, role: str, modality: str, env_config: EnvConfig, obs_dim: int,
                      seed: int, log_std: float = -1.0, num_envs: int = 64, steps: int = 600,
                      iters: int = 3000, batch_size: int = 2048, lr: float = 1e-3) -> GaussianPolicy:
    seeds = np.random.SeedSequence(seed).spawn(3)
    policy = GaussianPolicy.init(obs_dim, modality, np.random.default_rng(seeds[0]), log_std=log_std)
    obs, labels = collect_demonstrations(teacher, role, modality, env_config, num_envs, steps,
                                         int(seeds[1].generate_state(1)[0]))
    clone(policy, obs, labels, iters, batch_size, lr, int(seeds[2].generate_state(1)[0]))
    return policy
