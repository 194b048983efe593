"""
The arena: observations, rewards and a scripted chase
=====================================================

Two vehicles in a 10 m x 10 m x 4 m box. The pursuer wants the separation
below 0.5 m before 600 steps run out.
"""

# %%
import numpy as np

from quadpursuit.env import EnvConfig, PursuitEvasionBatch, trajectory_rows, write_trajectory_csv
from quadpursuit.policies import Heuristic, PolicyRecord

config = EnvConfig()
env = PursuitEvasionBatch(config, 4, seed=0, auto_reset=False)
print("pursuer obs", env.observe("pursuer").shape, "evader obs", env.observe("evader").shape)
print("initial separations:", np.round(np.linalg.norm(env.state.position_m[:, 1] - env.state.position_m[:, 0], axis=1), 2))

# %%
# Scripted players: a pursuer circling the center and evaders holding their spawn point.
pursuer = PolicyRecord("p", "pursuer", "heuristic", 0, heuristic=Heuristic("circular"))
evader = PolicyRecord("e", "evader", "heuristic", 0, heuristic=Heuristic("hover"))
rows = np.arange(4)
returns = np.zeros((4, 2))
trace = []
while not env.done.all():
    out = env.step(pursuer.command(env, rows), evader.command(env, rows))
    returns += np.stack([out.reward_pursuer, out.reward_evader], axis=1)
    trace += trajectory_rows(env, out, row=0)
    for i in np.flatnonzero(out.captured):
        print(f"env {i}: captured at t={env.t[i] * config.dt_s:.2f}s")

# %%
# Rewards are not zero-sum: the pursuer earns approach shaping, the evader a survival bonus.
print("episode returns (pursuer, evader):\n", np.round(returns, 2))

# %%
# Episode 0 as a CSV trace for external plotting.
write_trajectory_csv(trace, "arena_trace.csv")
print(f"wrote {len(trace)} rows to arena_trace.csv")
