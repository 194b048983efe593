import pytest

from quadpursuit.env import ArenaSpec, EnvConfig
from quadpursuit.league import LeagueSettings, run_league
from quadpursuit.ppo import PpoConfig

TINY_ENV = EnvConfig(arena=ArenaSpec(max_steps=60))
TINY_PPO = PpoConfig(num_envs=8, rollout_length=16, total_env_steps=8 * 16 * 2, batch_size=64)
TINY_SETTINGS = LeagueSettings(distill_seed_policies=False, eval_episodes=16)


@pytest.fixture(scope="session")
def tiny_league(tmp_path_factory):
    """A six-stage league trained for a handful of updates per stage."""
    directory = tmp_path_factory.mktemp("league")
    manifest = run_league(directory, 6, TINY_ENV, TINY_PPO, TINY_SETTINGS, master_seed=1)
    return directory, manifest


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record the one-line outcome of an acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
