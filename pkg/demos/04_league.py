"""
Self-play league and the staircase table
========================================

Alternating stages: the pursuer trains, then the evader, and so on, each
against opponents drawn from the other side's growing population. Tiny
budgets keep this to about a minute.
"""

# %%
import tempfile

from quadpursuit import bench
from quadpursuit.env import ArenaSpec, EnvConfig
from quadpursuit.league import LeagueSettings, run_league
from quadpursuit.ppo import PpoConfig

env = EnvConfig(arena=ArenaSpec(max_steps=200))
ppo = PpoConfig(num_envs=16, rollout_length=32, total_env_steps=16 * 32 * 4, batch_size=256)
settings = LeagueSettings(p_old=0.75, distill_seed_policies=False, eval_episodes=32)

# %%
directory = tempfile.mkdtemp(prefix="league-")
manifest = run_league(directory, 6, env, ppo, settings, master_seed=0,
                      on_stage=lambda m: print("committed", m.stage_log[-1].policy_id))

# %%
# Who each stage trained against, in episodes.
for entry in manifest.stage_log:
    print(entry.stage_index, entry.role, entry.opponent_ids)

# %%
# Each row is the newest pursuer after a stage; "-" marks a benchmark not yet introduced.
report = bench.capture_matrix(manifest, None, 32, seed=1, env_config=env)
header, rows = bench.staircase_table(manifest, report)
print(" ".join(f"{h:>15}" for h in header))
for row in rows:
    print(" ".join(f"{'-' if v is None else (f'{v:.3f}' if isinstance(v, float) else v):>15}" for v in row))
print("league directory:", directory)
