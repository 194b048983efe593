import numpy as np
import pytest

from quadpursuit.env import ArenaSpec, EnvConfig, RewardCoeffs
from quadpursuit.policies import GaussianPolicy, Heuristic, PolicyRecord, act
from quadpursuit.ppo import (
    Adam,
    Batch,
    NonFiniteLossError,
    PpoConfig,
    TrainingCurve,
    clip_grad_norm,
    clipped_surrogate,
    compute_gae,
    normalize_advantages,
    policy_parameters,
    ppo_loss,
    train_stage,
    update,
)

HOVER = PolicyRecord("hover", "evader", "heuristic", 0, heuristic=Heuristic("hover"))


def test_gae_examples():
    adv, ret = compute_gae([1.0], [0.0], [1.0], 0.0, 0.99, 0.95)
    assert adv.tolist() == [1.0] and ret.tolist() == [1.0]
    adv, ret = compute_gae([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 0.0, 0.99, 0.95)
    assert adv == pytest.approx([1.9405, 1.0], abs=1e-12)
    np.testing.assert_array_equal(ret, adv)
    r, v = np.array([0.3, -1.0, 2.0]), np.array([0.5, 0.2, -0.4])
    adv, _ = compute_gae(r, v, np.zeros(3), 7.0, 0.0, 0.95)
    np.testing.assert_array_equal(adv, r - v)


def test_gae_does_not_leak_across_done():
    adv, _ = compute_gae([0.0, 5.0], [0.0, 0.0], [1.0, 0.0], 0.0, 0.99, 0.95)
    assert adv[0] == 0.0


def test_gae_columns_are_independent():
    rng = np.random.default_rng(0)
    r, v, d = rng.normal(size=(20, 3)), rng.normal(size=(20, 3)), rng.random((20, 3)) < 0.1
    b = rng.normal(size=3)
    adv, _ = compute_gae(r, v, d, b, 0.99, 0.95)
    for j in range(3):
        col, _ = compute_gae(r[:, j], v[:, j], d[:, j], b[j], 0.99, 0.95)
        np.testing.assert_allclose(adv[:, j], col)


def test_clip_rule():
    assert clipped_surrogate(1.2, 2.0, 0.1) == pytest.approx(2.2)
    assert clipped_surrogate(0.8, -2.0, 0.1) == pytest.approx(-1.8)
    assert clipped_surrogate(1.05, 2.0, 0.1) == pytest.approx(2.1)


def test_advantage_normalization():
    adv = normalize_advantages(np.random.default_rng(0).normal(3.0, 7.0, size=4096))
    assert abs(adv.mean()) < 1e-6
    assert abs(adv.std() - 1.0) < 1e-6


def toy_policy(seed=0):
    # one hidden layer of two units keeps the finite-difference sweep cheap
    rng = np.random.default_rng(seed)
    pol = GaussianPolicy.init(2, "velocity", rng, hidden=(2,), log_std=-0.5)
    for p in policy_parameters(pol):
        p[...] = rng.normal(scale=0.5, size=p.shape)
    pol.log_std[:] = np.array([-0.3, -0.6, -0.1])
    return pol


def toy_batch(pol, seed=1, n=32):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, 2))
    out = act(pol, obs, rng=rng)
    # shift the behaviour log-probs so ratios spread across both clip branches
    old = out.log_prob + rng.normal(scale=0.15, size=n)
    return Batch(obs, out.raw, old, rng.normal(size=n), rng.normal(size=n))


@pytest.mark.parametrize("term", ["policy", "value", "entropy"])
def test_gradients_match_finite_differences(term):
    pol = toy_policy()
    coeffs = {"policy": (0.0, 0.0), "value": (1.0, 0.0), "entropy": (0.0, 0.5)}[term]
    cfg = PpoConfig(value_coeff=coeffs[0], entropy_coeff=coeffs[1])
    batch = toy_batch(pol)
    if term != "policy":
        batch = batch._replace(advantages=np.zeros_like(batch.advantages))
    _, grads, _ = ppo_loss(batch, pol, cfg, with_grad=True)
    worst = 0.0
    eps = 1e-5
    for p, g in zip(policy_parameters(pol), grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up, _ = ppo_loss(batch, pol, cfg)
            p[idx] = orig - eps
            down, _ = ppo_loss(batch, pol, cfg)
            p[idx] = orig
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(g[idx]), 1e-6)
            worst = max(worst, abs(fd - g[idx]) / denom)
    assert worst < 1e-4


def test_identity_ratio_surrogate():
    pol = toy_policy()
    batch = toy_batch(pol)
    mean = act(pol, batch.obs, deterministic=True).raw
    from quadpursuit.policies import log_prob
    batch = batch._replace(old_log_prob=log_prob(pol, batch.raw_actions, mean))
    _, diag = ppo_loss(batch, pol, PpoConfig())
    assert diag["clip_fraction"] == 0.0
    assert diag["policy_loss"] == pytest.approx(-batch.advantages.mean())
    assert diag["approx_kl"] == pytest.approx(0.0, abs=1e-12)


def test_zero_advantage_leaves_value_and_entropy():
    pol = toy_policy()
    batch = toy_batch(pol)._replace(advantages=np.zeros(32))
    loss, diag = ppo_loss(batch, pol, PpoConfig())
    assert diag["policy_loss"] == 0.0
    assert loss == pytest.approx(diag["value_loss"] - 0.001 * diag["entropy"])


def test_non_finite_loss_raises():
    pol = toy_policy()
    batch = toy_batch(pol)
    batch = batch._replace(returns=np.full(32, np.nan))
    with pytest.raises(NonFiniteLossError, match="value_loss"):
        ppo_loss(batch, pol, PpoConfig())


def test_zero_learning_rate_is_bitwise_noop():
    pol = toy_policy()
    before = [p.copy() for p in policy_parameters(pol)]
    update(pol, toy_batch(pol, n=300), PpoConfig(learning_rate=0.0, batch_size=64), np.random.default_rng(0))
    for a, b in zip(before, policy_parameters(pol)):
        assert a.tobytes() == b.tobytes()


def test_grad_clip_to_max_norm():
    grads = [np.full(4, 10.0), np.array([[20.0, 0.0], [-30.0, 10.0]])]
    norm = float(np.sqrt(sum((g * g).sum() for g in grads)))
    grads = [g * 50.0 / norm for g in grads]
    assert clip_grad_norm(grads, 5.0) == pytest.approx(50.0)
    assert np.sqrt(sum((g * g).sum() for g in grads)) == pytest.approx(5.0, abs=1e-9)
    small = [np.array([0.3, 0.4])]
    clip_grad_norm(small, 5.0)
    np.testing.assert_array_equal(small[0], [0.3, 0.4])


def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0, -2.0])]
    Adam(0.1).step(p, [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p[0], [0.9, -1.9], atol=1e-7)


def test_update_is_deterministic():
    runs = []
    for _ in range(2):
        pol = toy_policy()
        update(pol, toy_batch(pol, n=200), PpoConfig(batch_size=64), np.random.default_rng(9))
        runs.append(policy_parameters(pol))
    for a, b in zip(*runs):
        assert a.tobytes() == b.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip_ratio=1.0)
    with pytest.raises(ValueError):
        PpoConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PpoConfig(entropy_coeff=-1.0)


def small_stage_config(**kw):
    base = dict(num_envs=8, rollout_length=32, total_env_steps=8 * 32 * 3, batch_size=128)
    base.update(kw)
    return PpoConfig(**base)


def test_train_stage_zero_steps_returns_input():
    pol = GaussianPolicy.init(32, "rate", np.random.default_rng(0), hidden=(8, 8, 8))
    res = train_stage("pursuer", pol, lambda rng: HOVER, EnvConfig(), small_stage_config(total_env_steps=0), 0)
    for a, b in zip(policy_parameters(pol), policy_parameters(res.policy)):
        np.testing.assert_array_equal(a, b)
    assert len(res.curve) == 0


def test_train_stage_is_deterministic(tmp_path):
    cfg = EnvConfig(arena=ArenaSpec(max_steps=40))
    outs = []
    for _ in range(2):
        pol = GaussianPolicy.init(32, "rate", np.random.default_rng(0), hidden=(8, 8, 8))
        outs.append(train_stage("pursuer", pol, lambda rng: HOVER, cfg, small_stage_config(), seed=5))
    # repr so that NaN entries (no finished episode yet) compare equal
    assert repr(outs[0].curve) == repr(outs[1].curve)
    for a, b in zip(policy_parameters(outs[0].policy), policy_parameters(outs[1].policy)):
        assert a.tobytes() == b.tobytes()
    path = tmp_path / "curve.csv"
    outs[0].curve.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(TrainingCurve.COLUMNS)
    assert len(path.read_text().splitlines()) == 4


def test_train_stage_rejects_wrong_opponent_role():
    pol = GaussianPolicy.init(34, "rate", np.random.default_rng(0), hidden=(8, 8, 8))
    with pytest.raises(ValueError, match="expected pursuer"):
        train_stage("evader", pol, lambda rng: HOVER, EnvConfig(), small_stage_config(), 0)


def test_evader_learner_runs():
    pol = GaussianPolicy.init(34, "velocity", np.random.default_rng(0), hidden=(8, 8, 8))
    seeker = PolicyRecord("p0", "pursuer", "heuristic", 0, heuristic=Heuristic("hover", hold="center"))
    res = train_stage("evader", pol, lambda rng: seeker, EnvConfig(arena=ArenaSpec(max_steps=40)),
                      small_stage_config(), 0)
    assert res.opponent_counts["p0"] >= 8


def reach_point_return(seed):
    """Mean episode return at update 0 and update 100 on an approach-only task."""
    cfg = EnvConfig(arena=ArenaSpec(max_steps=32),
                    rewards=RewardCoeffs(kappa_a=1.0, kappa_br=0.0, kappa_c=0.0, kappa_t=0.0, kappa_b=0.0, r_step=0.0))
    ppo = PpoConfig(num_envs=16, rollout_length=32, total_env_steps=16 * 32 * 101, batch_size=256)
    pol = GaussianPolicy.init(32, "velocity", np.random.default_rng(seed), hidden=(32, 32, 32))
    curve = train_stage("pursuer", pol, lambda rng: HOVER, cfg, ppo, seed).curve
    return curve[0]["mean_return"], curve[100]["mean_return"]


def test_reach_point_sanity_task_improves():
    improved = 0
    for seed in range(10):
        first, last = reach_point_return(seed)
        improved += last > first
    assert improved >= 9
