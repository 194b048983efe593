"""
Training one stage with PPO
===========================

Warm-start a pursuer by cloning the hover heuristic, then run PPO against a
hovering evader. The budget is deliberately small; pass a step count as the
first argument for a longer run (the desk default is 200000).
"""

# %%
import dataclasses
import sys

from quadpursuit import bench
from quadpursuit.cli import heuristic_record, initial_learner
from quadpursuit.config import load_config
from quadpursuit.policies import PolicyRecord, save_policy
from quadpursuit.ppo import train_stage

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
cfg = load_config()
ppo = dataclasses.replace(cfg.ppo, total_env_steps=steps, num_envs=64, rollout_length=64)

# %%
# Behaviour cloning gives the network a stable flight controller to start from.
learner = initial_learner(cfg, "pursuer", "distill", seed=0)

# %%
hover = heuristic_record("hover", "evader")
result = train_stage("pursuer", learner, lambda rng: hover, cfg.env_config(), ppo, seed=1)
for row in result.curve:
    print({k: round(v, 4) if isinstance(v, float) else v for k, v in row.items()})

# %%
# Evaluation uses the deterministic (mean) action for both sides.
record = PolicyRecord("pursuer.demo", "pursuer", "rate", 1, policy=result.policy)
print(bench.evaluate_pair(record, hover, 64, seed=7))
save_policy(record, "pursuer_demo.pepo")
