import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadpursuit.control import RATE_LIMITS, THRUST_NORM_MAX, VELOCITY_LIMITS
from quadpursuit.env import ArenaSpec, EnvConfig, PursuitEvasionBatch
from quadpursuit.policies import (
    ChecksumError,
    FormatVersionError,
    GaussianPolicy,
    Heuristic,
    MlpParams,
    ModalityMismatchError,
    PolicyFileError,
    PolicyRecord,
    TruncatedFileError,
    act,
    backward,
    circular_velocity,
    decode_record,
    encode_record,
    entropy,
    forward,
    forward_cached,
    hover_velocity,
    load_policy,
    log_prob,
    repel_velocity,
    save_policy,
)


def small_policy(modality="rate", seed=0, obs_dim=32):
    return GaussianPolicy.init(obs_dim, modality, np.random.default_rng(seed), hidden=(16, 16, 16))


def test_zero_network_outputs_zero():
    sizes = (5, 4, 4, 4, 2)
    mlp = MlpParams([np.zeros((a, b)) for a, b in zip(sizes, sizes[1:])], [np.zeros(b) for b in sizes[1:]])
    np.testing.assert_array_equal(forward(mlp, np.ones(5)), 0.0)


def test_single_wired_path_is_nested_tanh():
    sizes = (3, 3, 3, 3, 3)
    ws = []
    for a, b in zip(sizes, sizes[1:]):
        w = np.zeros((a, b))
        w[1, 1] = 1.0
        ws.append(w)
    mlp = MlpParams(ws, [np.zeros(b) for b in sizes[1:]])
    x = 0.8
    assert forward(mlp, np.array([0.0, x, 0.0]))[1] == pytest.approx(np.tanh(np.tanh(np.tanh(x))), abs=1e-15)


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(3)
    mlp = MlpParams.init((6, 8, 8, 8, 3), rng)
    x = rng.normal(size=6)
    h = list(x)
    for layer, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out = []
        for j in range(w.shape[1]):
            s = b[j]
            for i in range(w.shape[0]):
                s += h[i] * w[i, j]
            out.append(np.tanh(s) if layer < 3 else s)
        h = out
    np.testing.assert_allclose(forward(mlp, x), h, atol=1e-6)


def test_dimension_mismatch_rejected():
    mlp = MlpParams.init((4, 3, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(mlp, np.ones(5))
    with pytest.raises(ValueError):
        MlpParams([np.zeros((4, 3)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])


def test_mlp_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    mlp = MlpParams.init((3, 5, 5, 2), rng)
    x = rng.normal(size=(4, 3))
    target = rng.normal(size=(4, 2))

    def loss():
        return 0.5 * np.sum((forward(mlp, x) - target) ** 2)

    out, inputs = forward_cached(mlp, x)
    gw, _ = backward(mlp, inputs, out - target)
    eps = 1e-6
    w = mlp.weights[1]
    for idx in [(0, 0), (2, 3), (4, 1)]:
        orig = w[idx]
        w[idx] = orig + eps
        up = loss()
        w[idx] = orig - eps
        down = loss()
        w[idx] = orig
        assert gw[1][idx] == pytest.approx((up - down) / (2 * eps), rel=1e-6)


def test_zero_mean_deterministic_action_is_midpoint():
    pol = small_policy(seed=2)
    pol.actor.weights[-1][:] = 0.0
    pol.actor.biases[-1][:] = 0.0
    out = act(pol, np.zeros(32), deterministic=True)
    np.testing.assert_allclose(out.action.body_rates_des, 0.0)
    assert out.action.thrust_norm == pytest.approx(THRUST_NORM_MAX / 2)
    assert THRUST_NORM_MAX / 2 == pytest.approx(16.77, abs=0.01)


@settings(max_examples=200)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4))
def test_squash_never_leaves_bounds(raw):
    for modality, dims in (("rate", 4), ("velocity", 3)):
        pol = small_policy(modality)
        a = pol.squash(np.asarray(raw[:dims]))
        if modality == "rate":
            assert np.all(np.abs(a[:3]) <= RATE_LIMITS)
            assert 0.0 <= a[3] <= THRUST_NORM_MAX
        else:
            assert np.all(np.abs(a) <= VELOCITY_LIMITS)
        pol.to_command(np.asarray(raw[:dims]))


def test_log_prob_finite_far_in_tails():
    pol = small_policy()
    mean = np.zeros(4)
    std = np.exp(pol.clamped_log_std())
    for k in (-6, 6):
        assert np.isfinite(log_prob(pol, mean + k * std, mean))
    assert np.isfinite(log_prob(pol, np.full(4, 40.0), mean))


def test_squashed_density_integrates_to_one():
    pol = small_policy(modality="velocity")
    pol.log_std[:] = -0.3
    mean = np.array([0.4, -0.2, 0.1])
    # slice along the first action dimension, other dims held at their own density peak
    a = np.linspace(-15, 15, 200_001)[1:-1]
    raw = np.arctanh(a / 15.0)
    full = np.tile(mean, (len(a), 1))
    full[:, 0] = raw
    from quadpursuit.policies import log_prob_per_dim
    density = np.exp(log_prob_per_dim(pol, full, mean)[:, 0])
    assert np.trapezoid(density, a) == pytest.approx(1.0, abs=0.02)


def test_sampling_is_seeded():
    pol = small_policy()
    obs = np.random.default_rng(0).normal(size=(8, 32))
    a = act(pol, obs, rng=np.random.default_rng(5))
    b = act(pol, obs, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a.raw, b.raw)
    np.testing.assert_array_equal(a.log_prob, b.log_prob)
    with pytest.raises(ValueError):
        act(pol, obs)


def test_entropy_of_diagonal_gaussian():
    pol = small_policy()
    pol.log_std[:] = 0.0
    assert entropy(pol) == pytest.approx(4 * 0.5 * np.log(2 * np.pi * np.e))
    pol.log_std[:] = 3.0
    assert entropy(pol) == pytest.approx(4 * (1.0 + 0.5 * np.log(2 * np.pi * np.e)))


def test_hover_heuristic_at_hold_point():
    np.testing.assert_array_equal(hover_velocity([1, 2, 3], [1, 2, 3]), 0.0)


def test_circular_half_period_symmetry():
    center = np.array([0.0, 0.0])
    p0 = np.array([3.0, 0.0, 2.0])
    v0 = circular_velocity(p0, 0.0, 0.0, center)
    p1 = np.array([-3.0, 0.0, 2.0])
    v1 = circular_velocity(p1, 3.0, 0.0, center)
    np.testing.assert_allclose(v1, -v0, atol=1e-12)
    assert np.linalg.norm(v0) == pytest.approx(2 * np.pi * 3 / 6)


def test_repel_runs_directly_away():
    v = repel_velocity([0, 0, 2], [0, 3, 2], ArenaSpec())
    np.testing.assert_allclose(v, [0, -15, 0], atol=1e-12)


@given(st.lists(st.floats(-6, 6), min_size=3, max_size=3), st.lists(st.floats(-6, 6), min_size=3, max_size=3))
def test_heuristics_stay_in_bounds(p, q):
    p, q = np.array(p) + [0, 0, 2], np.array(q) + [0, 0, 2]
    for v in (hover_velocity(p, q, gain=5), repel_velocity(p, q, ArenaSpec()),
              circular_velocity(p, 1.3, 0.2, gain=10)):
        assert np.all(np.abs(v) <= VELOCITY_LIMITS + 1e-12)
        assert np.linalg.norm(v) <= 15 + 1e-9


def test_heuristic_command_in_env():
    env = PursuitEvasionBatch(EnvConfig(), 3, seed=0)
    for kind in ("hover", "circular", "repel"):
        cmd = Heuristic(kind).command(env, "evader", np.arange(3))
        assert cmd.velocity_des.shape == (3, 3) and np.all(cmd.is_velocity)


def test_heuristic_validation():
    with pytest.raises(ValueError):
        Heuristic("orbit")
    h = Heuristic("circular", radius=2.0)
    assert Heuristic.from_dict(h.to_dict()) == h


def make_record(modality="rate"):
    return PolicyRecord("p-1", "pursuer", modality, 1, policy=small_policy(modality), metadata={"seed": 4})


def test_record_round_trip_is_bitwise(tmp_path):
    rec = make_record()
    path = tmp_path / "p.pepo"
    save_policy(rec, path)
    back = load_policy(path)
    assert (back.id, back.role, back.modality, back.stage_index) == ("p-1", "pursuer", "rate", 1)
    assert back.metadata == {"seed": "4"}
    for a, b in zip(rec.policy.actor.parameters() + rec.policy.critic.parameters(),
                    back.policy.actor.parameters() + back.policy.critic.parameters()):
        assert a.tobytes() == b.tobytes()
    assert encode_record(back) == path.read_bytes()
    assert path.read_bytes()[:4] == b"PEPO"


def test_heuristic_record_round_trip():
    rec = PolicyRecord("repel", "evader", "heuristic", 0, heuristic=Heuristic("repel", wall_band=1.5))
    back = decode_record(encode_record(rec))
    assert back.heuristic == rec.heuristic and back.policy is None


def test_corruption_is_detected():
    data = bytearray(encode_record(make_record()))
    for pos in (60, len(data) // 2, len(data) - 10):
        bad = bytearray(data)
        bad[pos] ^= 0x40
        with pytest.raises(ChecksumError):
            decode_record(bytes(bad))
    with pytest.raises(TruncatedFileError):
        decode_record(bytes(data[: len(data) // 3]))
    bad = bytearray(data)
    bad[4] = 9
    with pytest.raises(FormatVersionError):
        decode_record(bytes(bad))
    with pytest.raises(PolicyFileError):
        decode_record(b"NOPE" + bytes(data[4:]))


def test_modality_slot_check(tmp_path):
    path = tmp_path / "v.pepo"
    save_policy(make_record("velocity"), path)
    with pytest.raises(ModalityMismatchError):
        load_policy(path, expected_modality="rate")
    assert load_policy(path, expected_modality="velocity").modality == "velocity"


def test_record_validation():
    with pytest.raises(ValueError):
        PolicyRecord("x", "referee", "rate", 0, policy=small_policy())
    with pytest.raises(ValueError):
        PolicyRecord("x", "pursuer", "rate", 0)
    with pytest.raises(ValueError):
        PolicyRecord("x", "pursuer", "velocity", 0, policy=small_policy("rate"))
