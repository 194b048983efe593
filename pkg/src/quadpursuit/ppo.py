"""Proximal policy optimization on numpy: GAE, clipped surrogate, Adam."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .env import EnvConfig, PursuitEvasionBatch, other_role
from .control import ActionCommand
from .policies import GaussianPolicy, PolicyRecord, act, backward, forward_cached
from .policies.gaussian import LOG_STD_MAX, LOG_STD_MIN, log_prob


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    learning_rate: float = 5e-4
    clip_ratio: float = 0.1
    gamma: float = 0.99
    gae_lambda: float = 0.95
    batch_size: int = 2048
    epochs_per_update: int = 4
    entropy_coeff: float = 0.001
    value_coeff: float = 1.0
    max_grad_norm: float = 5.0
    num_envs: int = 256
    rollout_length: int = 128
    total_env_steps: int = 2_000_000
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    init_log_std: float = -1.0

    def __post_init__(self):
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        for name in ("learning_rate", "entropy_coeff", "value_coeff", "max_grad_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("batch_size", "epochs_per_update", "num_envs", "rollout_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_env_steps < 0:
            raise ValueError("total_env_steps must be >= 0")


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Advantages and returns along axis 0; extra axes are independent streams.

    ``dones[t]`` marks that the episode ended on step ``t``, so neither the
    next value nor later advantages leak across it.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - np.asarray(dones, dtype=float)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=float)
    running = np.zeros_like(next_value)
    for t in reversed(range(len(rewards))):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        running = delta + gamma * lam * not_done[t] * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, advantages, clip_ratio: float) -> np.ndarray:
    """Per-sample ``min(r * A, clip(r, 1 - eps, 1 + eps) * A)``."""
    ratio = np.asarray(ratio, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    return np.minimum(ratio * advantages, np.clip(ratio, 1 - clip_ratio, 1 + clip_ratio) * advantages)


class Batch(NamedTuple):
    obs: np.ndarray
    raw_actions: np.ndarray
    old_log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def take(self, idx) -> Batch:
        return Batch(*(x[idx] for x in self))


def policy_parameters(policy: GaussianPolicy) -> list[np.ndarray]:
    return policy.actor.parameters() + [policy.log_std] + policy.critic.parameters()


def ppo_loss(batch: Batch, policy: GaussianPolicy, config: PpoConfig, with_grad: bool = False):
    """Clipped-surrogate loss plus value and entropy terms.

    Returns ``(loss, diagnostics)`` or ``(loss, grads, diagnostics)`` with
    ``grads`` ordered like :func:`policy_parameters`.
    """
    n = len(batch.obs)
    if n == 0:
        raise ValueError("empty batch")
    mean, actor_inputs = forward_cached(policy.actor, batch.obs)
    value_out, critic_inputs = forward_cached(policy.critic, batch.obs)
    values = value_out[:, 0]
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)

    new_lp = log_prob(policy, batch.raw_actions, mean)
    ratio = np.exp(new_lp - batch.old_log_prob)
    surr = clipped_surrogate(ratio, batch.advantages, config.clip_ratio)
    policy_loss = -surr.mean()
    value_loss = np.mean((values - batch.returns) ** 2)
    ent = float((log_std + 0.5 * (np.log(2 * np.pi) + 1.0)).sum())
    loss = policy_loss + config.value_coeff * value_loss - config.entropy_coeff * ent

    diagnostics = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": ent,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_ratio)),
        "approx_kl": float(np.mean((ratio - 1.0) - (new_lp - batch.old_log_prob))),
    }
    if not np.isfinite(loss):
        bad = [k for k, v in diagnostics.items() if not np.isfinite(v)]
        raise NonFiniteLossError(f"non-finite PPO loss; offending terms: {bad or ['ratio']}")
    if not with_grad:
        return float(loss), diagnostics

    # min() follows the unclipped branch where it is the smaller one; the clipped branch is flat there
    unclipped = ratio * batch.advantages <= np.clip(ratio, 1 - config.clip_ratio, 1 + config.clip_ratio) * batch.advantages
    d_lp = -(batch.advantages * ratio * unclipped) / n

    inv_var = np.exp(-2.0 * log_std)
    diff = batch.raw_actions - mean
    d_mean = d_lp[:, None] * diff * inv_var
    d_log_std = (d_lp[:, None] * (diff**2 * inv_var - 1.0)).sum(axis=0) - config.entropy_coeff
    d_log_std = d_log_std * ((policy.log_std >= LOG_STD_MIN) & (policy.log_std <= LOG_STD_MAX))

    d_value = (2.0 * config.value_coeff / n) * (values - batch.returns)
    gw_a, gb_a = backward(policy.actor, actor_inputs, d_mean)
    gw_c, gb_c = backward(policy.critic, critic_inputs, d_value[:, None])
    grads = [g for pair in zip(gw_a, gb_a) for g in pair] + [d_log_std] + [g for pair in zip(gw_c, gb_c) for g in pair]
    return float(loss), grads, diagnostics


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place to global norm <= max_norm; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if not np.isfinite(total):
        raise NonFiniteLossError("non-finite gradient norm")
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass
class Adam:
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None
    t: int = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def update(policy: GaussianPolicy, batch: Batch, config: PpoConfig, rng: np.random.Generator,
           optimizer: Adam | None = None) -> dict:
    """Several epochs of shuffled minibatch steps; ``policy`` is modified in place."""
    optimizer = optimizer or Adam(config.learning_rate, config.adam_betas, config.adam_eps)
    params = policy_parameters(policy)
    batch = batch._replace(advantages=normalize_advantages(batch.advantages))
    n = len(batch.obs)
    history = []
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            mb = batch.take(order[start:start + config.batch_size])
            _, grads, diag = ppo_loss(mb, policy, config, with_grad=True)
            diag["grad_norm"] = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(params, grads)
            history.append(diag)
    return {k: float(np.mean([h[k] for h in history])) for k in history[0]}


OpponentProvider = Callable[[np.random.Generator], PolicyRecord]


class TrainingCurve(list):
    COLUMNS = ("update_index", "env_steps", "mean_return", "clip_fraction", "approx_kl", "entropy")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self:
                writer.writerow([row[c] if not isinstance(row[c], float) else repr(row[c]) for c in self.COLUMNS])


def opponent_commands(env: PursuitEvasionBatch, opponents: list[PolicyRecord], assignment: np.ndarray) -> ActionCommand:
    """Deterministic commands for each row's assigned frozen opponent."""
    parts, rows = [], []
    for k in np.unique(assignment):
        idx = np.flatnonzero(assignment == k)
        parts.append(opponents[k].command(env, idx, deterministic=True))
        rows.append(idx)
    return ActionCommand.concat(parts, rows, env.num_envs)


@dataclass
class StageResult:
    policy: GaussianPolicy
    curve: TrainingCurve = field(default_factory=TrainingCurve)
    opponent_counts: dict[str, int] = field(default_factory=dict)


def train_stage(learner_role: str, learner: GaussianPolicy, opponent_provider: OpponentProvider,
                env_config: EnvConfig, config: PpoConfig, seed: int) -> StageResult:
    """Train ``learner`` against frozen opponents drawn per episode from the provider."""
    policy = learner.astype(np.float64)
    result = StageResult(policy)
    if config.total_env_steps == 0:
        result.policy = learner.copy()
        return result

    seeds = np.random.SeedSequence(seed).spawn(3)
    env_seed = int(seeds[0].generate_state(1)[0])
    act_rng = np.random.default_rng(seeds[1])
    sample_rng = np.random.default_rng(seeds[2])
    opp_role = other_role(learner_role)
    env = PursuitEvasionBatch(env_config, config.num_envs, seed=env_seed, auto_reset=True)

    opponents: list[PolicyRecord] = []
    index: dict[str, int] = {}

    def draw(count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        for j in range(count):
            rec = opponent_provider(sample_rng)
            if rec.role != opp_role:
                raise ValueError(f"opponent {rec.id} is a {rec.role}, expected {opp_role}")
            if rec.id not in index:
                index[rec.id] = len(opponents)
                opponents.append(rec)
            out[j] = index[rec.id]
            result.opponent_counts[rec.id] = result.opponent_counts.get(rec.id, 0) + 1
        return out

    assignment = draw(env.num_envs)
    optimizer = Adam(config.learning_rate, config.adam_betas, config.adam_eps)
    T, N = config.rollout_length, config.num_envs
    episode_return = np.zeros(N)
    steps_done = 0
    update_index = 0
    learner_first = learner_role == "pursuer"

    while steps_done < config.total_env_steps:
        obs_buf = np.zeros((T, N, policy.obs_dim))
        raw_buf = np.zeros((T, N, policy.act_dim))
        lp_buf = np.zeros((T, N))
        val_buf = np.zeros((T, N))
        rew_buf = np.zeros((T, N))
        done_buf = np.zeros((T, N))
        finished = []
        for t in range(T):
            obs = env.observe(learner_role)
            out = act(policy, obs, deterministic=False, rng=act_rng)
            opp = opponent_commands(env, opponents, assignment)
            outcome = env.step(out.action, opp) if learner_first else env.step(opp, out.action)
            reward = outcome.reward_pursuer if learner_first else outcome.reward_evader
            obs_buf[t], raw_buf[t], lp_buf[t], val_buf[t] = obs, out.raw, out.log_prob, out.value
            rew_buf[t], done_buf[t] = reward, outcome.done
            episode_return += reward
            if np.any(outcome.done):
                ended = np.flatnonzero(outcome.done)
                finished.extend(episode_return[ended].tolist())
                episode_return[ended] = 0.0
                assignment[ended] = draw(len(ended))
        steps_done += T * N

        bootstrap = policy.value(env.observe(learner_role))
        adv, ret = compute_gae(rew_buf, val_buf, done_buf, bootstrap, config.gamma, config.gae_lambda)
        batch = Batch(obs_buf.reshape(T * N, -1), raw_buf.reshape(T * N, -1), lp_buf.reshape(-1),
                      adv.reshape(-1), ret.reshape(-1))
        diag = update(policy, batch, config, act_rng, optimizer)
        result.curve.append({
            "update_index": update_index,
            "env_steps": steps_done,
            "mean_return": float(np.mean(finished)) if finished else float("nan"),
            "clip_fraction": diag["clip_fraction"],
            "approx_kl": diag["approx_kl"],
            "entropy": diag["entropy"],
        })
        update_index += 1

    result.policy = policy
    return result
