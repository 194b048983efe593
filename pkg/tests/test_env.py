import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadpursuit.control import ActionCommand
from quadpursuit.env import (
    OBS_DIM,
    TRAJECTORY_COLUMNS,
    ArenaSpec,
    EnvConfig,
    ObsNormalization,
    PursuitEvasionBatch,
    PursuitEvasionEnv,
    RewardCoeffs,
    build_observation,
    compute_rewards,
    reset,
    trajectory_rows,
    write_trajectory_csv,
)

ARENA = ArenaSpec()
NORM = ObsNormalization()
COEFFS = RewardCoeffs()


def hover_cmd(n=None):
    v = np.zeros(3) if n is None else np.zeros((n, 3))
    return ActionCommand.velocity(v)


def single_obs(role, t=0, p=((0, 0, 2), (1, 1, 2)), v=None, w=None, history=None):
    p = np.asarray(p, dtype=float)
    v = np.zeros((2, 3)) if v is None else np.asarray(v, dtype=float)
    w = np.zeros((2, 3)) if w is None else np.asarray(w, dtype=float)
    R = np.stack([np.eye(3)] * 2)
    if history is None:
        history = np.repeat((p[1] - p[0])[None], 5, axis=0)
    return build_observation(role, t, p, v, R, w, history, ARENA, NORM)


def test_reset_is_deterministic_and_padded():
    a = reset(ARENA, 7)
    b = reset(ARENA, 7)
    np.testing.assert_array_equal(a[0].position_m, b[0].position_m)
    np.testing.assert_array_equal(a[2], b[2])
    assert np.all(a[2] == a[2][0])
    np.testing.assert_allclose(a[2][0], a[1].position_m - a[0].position_m)
    np.testing.assert_array_equal(a[0].rotation, np.eye(3))
    assert np.all(a[0].velocity_mps == 0)


def test_reset_sweep_respects_margin_and_separation():
    lo = ARENA.lower + 0.5
    lo[2] = max(lo[2], 0.5)
    hi = ARENA.upper - 0.5
    for seed in range(10_000):
        p, e, _ = reset(ARENA, seed)
        assert np.linalg.norm(e.position_m - p.position_m) >= 2.0
        for s in (p, e):
            assert np.all(s.position_m >= lo) and np.all(s.position_m <= hi)


def test_reset_gives_up_on_impossible_separation():
    with pytest.raises(RuntimeError, match="tries"):
        reset(ArenaSpec(min_initial_separation_m=50.0), 0)


def test_observation_sizes_and_normalization():
    assert single_obs("pursuer").shape == (OBS_DIM["pursuer"],) == (32,)
    assert single_obs("evader").shape == (OBS_DIM["evader"],) == (34,)
    o = single_obs("pursuer", p=((0, 0, 2), (10, 10, 6)))
    np.testing.assert_allclose(o[13:16], [1, 1, 1])
    assert single_obs("pursuer", t=600)[0] == 1.0
    # evader position is normalized relative to the arena center
    o = single_obs("evader", p=((0, 0, 2), (2.5, -2.5, 2 + 1.0)))
    np.testing.assert_allclose(o[16:19], [0.5, -0.5, 0.5])


def test_observation_is_mirrored_between_roles():
    p = ((1, -2, 1.5), (3, 1, 2.5))
    op, oe = single_obs("pursuer", p=p), single_obs("evader", p=p)
    np.testing.assert_allclose(op[1:16], -oe[1:16])


@settings(max_examples=200)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-15, 15), min_size=3, max_size=3), st.integers(0, 600))
def test_observation_entries_stay_in_soft_range(pp, pe, v, t):
    pp = np.array(pp) * [1, 1, 0.4] + [0, 0, 2]
    pe = np.array(pe) * [1, 1, 0.4] + [0, 0, 2]
    v = np.array(v)
    v *= min(1.0, 15.0 / max(np.linalg.norm(v), 1e-9))
    for role in ("pursuer", "evader"):
        o = single_obs(role, t=t, p=(pp, pe), v=(v, -v), w=((15, -15, 5), (0, 0, 0)))
        assert np.all(np.isfinite(o)) and np.all(np.abs(o) <= 1.5)


def test_reward_examples():
    r_p, r_e = compute_rewards(2.0, 1.5, False, False, False, False, np.zeros(3), np.zeros(3), COEFFS)
    assert r_p == pytest.approx(0.025)
    assert r_e == pytest.approx(0.005)
    r_p, r_e = compute_rewards(1.0, 1.0, True, False, False, False, np.zeros(3), np.zeros(3), COEFFS)
    assert (r_p, r_e) == pytest.approx((10.0, 0.005 - 10.0))
    r_p, r_e = compute_rewards(3.0, 3.0, False, True, False, False, np.zeros(3), np.zeros(3), COEFFS)
    assert (r_p, r_e) == pytest.approx((-10.0, 10.005))


@given(st.floats(0, 10), st.floats(0, 10), st.booleans(), st.booleans(),
       st.lists(st.floats(-15, 15), min_size=3, max_size=3), st.lists(st.floats(-15, 15), min_size=3, max_size=3))
def test_reward_sum_is_not_zero_sum(d0, d1, oob_p, oob_e, wp, we):
    r_p, r_e = compute_rewards(d0, d1, False, False, oob_p, oob_e, wp, we, COEFFS)
    expected = (0.05 * (d0 - d1) + 0.005 - 0.0005 * (np.linalg.norm(wp) + np.linalg.norm(we))
                - 0.1 * (oob_p + oob_e))
    assert r_p + r_e == pytest.approx(expected, abs=1e-12)


def make_env(**arena):
    return PursuitEvasionEnv(EnvConfig(arena=ArenaSpec(**arena)) if arena else EnvConfig())


def test_close_start_is_captured_immediately():
    env = make_env()
    env.reset(0)
    env.batch.set_positions((0, 0, 2), (0.4, 0, 2))
    out = env.step(hover_cmd(), hover_cmd())
    assert out.captured and out.done and not out.timed_out
    with pytest.raises(RuntimeError):
        env.step(hover_cmd(), hover_cmd())


def test_timeout_at_horizon():
    env = make_env(max_steps=20)
    env.reset(0)
    env.batch.set_positions((-1.5, 0, 2), (1.5, 0, 2))
    for _ in range(19):
        assert not env.step(hover_cmd(), hover_cmd()).done
    out = env.step(hover_cmd(), hover_cmd())
    assert out.timed_out and out.done and not out.captured
    assert out.reward_evader == pytest.approx(10.005, abs=1e-3)


def test_low_pursuer_is_penalized():
    env = make_env()
    env.reset(0)
    env.batch.set_positions((0, 0, 0.2), (3, 0, 2))
    out = env.step(ActionCommand.rate(np.zeros(3), 9.81), hover_cmd())
    assert out.oob_pursuer
    assert out.reward_pursuer == pytest.approx(-0.1, abs=1e-3)


def test_history_shifts_by_one():
    env = make_env()
    env.reset(3)
    before = env.observe("pursuer")[1:16].reshape(5, 3)
    env.step(ActionCommand.velocity(np.array([3.0, 0, 0])), ActionCommand.velocity(np.array([0, 2.0, 0])))
    after = env.observe("pursuer")[1:16].reshape(5, 3)
    np.testing.assert_array_equal(after[:4], before[1:])
    p, e = env.pursuer.position_m, env.evader.position_m
    np.testing.assert_allclose(after[4], (e - p) / [10, 10, 4])


def test_ground_contact_clamps_and_flags():
    env = make_env()
    env.reset(0)
    env.batch.set_positions((0, 0, 0.05), (3, 0, 2))
    crashed = False
    for _ in range(10):
        out = env.step(ActionCommand.rate(np.zeros(3), 0.0), hover_cmd())
        crashed |= bool(out.crashed_pursuer)
        assert env.pursuer.position_m[2] >= 0.0
    assert crashed and not env.done


def rollout(batch, steps, rng):
    outs = []
    for _ in range(steps):
        n = batch.num_envs
        vp = rng.uniform(-5, 5, size=(n, 3))
        ve = rng.uniform(-5, 5, size=(n, 3))
        outs.append(batch.step(ActionCommand.velocity(vp), ActionCommand.velocity(ve)))
    return outs


def test_batch_is_deterministic():
    a = rollout(PursuitEvasionBatch(EnvConfig(arena=ArenaSpec(max_steps=30)), 16, seed=4), 70,
                np.random.default_rng(1))
    b = rollout(PursuitEvasionBatch(EnvConfig(arena=ArenaSpec(max_steps=30)), 16, seed=4), 70,
                np.random.default_rng(1))
    for x, y in zip(a, b):
        for u, v in zip(x, y):
            np.testing.assert_array_equal(u, v)


def test_batch_of_one_matches_single_env():
    cfg = EnvConfig()
    batch = PursuitEvasionBatch(cfg, 1, seed=0, auto_reset=False)
    batch.reset([0], [11])
    env = PursuitEvasionEnv(cfg)
    env.reset(11)
    rng = np.random.default_rng(0)
    for _ in range(50):
        vp, ve = rng.uniform(-3, 3, size=3), rng.uniform(-3, 3, size=3)
        a = batch.step(ActionCommand.velocity(vp[None]), ActionCommand.velocity(ve[None]))
        b = env.step(ActionCommand.velocity(vp), ActionCommand.velocity(ve))
        assert a.reward_pursuer[0] == b.reward_pursuer
        assert a.distance_m[0] == b.distance_m
    np.testing.assert_array_equal(batch.state.position_m[0], env.batch.state.position_m[0])


def test_auto_reset_restarts_finished_rows():
    batch = PursuitEvasionBatch(EnvConfig(arena=ArenaSpec(max_steps=5)), 4, seed=0)
    ids = batch.episode_id.copy()
    outs = [batch.step(hover_cmd(4), hover_cmd(4)) for _ in range(5)]
    assert outs[-1].timed_out.all()
    assert np.all(batch.t == 0) and not batch.done.any()
    assert np.all(batch.episode_id != ids)


def test_capture_and_timeout_exclusive():
    batch = PursuitEvasionBatch(EnvConfig(arena=ArenaSpec(max_steps=40)), 64, seed=2)
    for out in rollout(batch, 200, np.random.default_rng(2)):
        assert not np.any(out.captured & out.timed_out)
        assert np.all(out.distance_m[out.captured] < 0.5)


def test_mismatched_batch_rejected():
    batch = PursuitEvasionBatch(EnvConfig(), 4)
    with pytest.raises(ValueError):
        batch.step(hover_cmd(3), hover_cmd(4))


def test_trajectory_export(tmp_path):
    env = make_env()
    env.reset(0)
    env.batch.set_positions((0, 0, 2), (1.5, 0, 2))
    records = []
    while not env.done:
        out = env.batch.step(ActionCommand.velocity(np.array([[5.0, 0, 0]])), hover_cmd(1))
        records += trajectory_rows(env.batch, out)
    path = tmp_path / "trace.csv"
    write_trajectory_csv(records, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(TRAJECTORY_COLUMNS)
    assert len(rows) == 2 * env.t
    assert rows[-1]["captured"] == "1"
    assert float(rows[0]["qw"]) == pytest.approx(1.0, abs=0.1)


def test_throughput():
    batch = PursuitEvasionBatch(EnvConfig(), 256, seed=0)
    cmd = hover_cmd(256)
    batch.step(cmd, cmd)
    start = time.perf_counter()
    steps = 100
    for _ in range(steps):
        batch.step(cmd, cmd)
    rate = steps * 256 / (time.perf_counter() - start)
    # the target is 50k/s on a desktop; allow slack for loaded CI machines
    assert rate > 10_000
