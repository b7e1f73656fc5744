import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadjump.env import BanditEnv
from quadjump.learner import (
    Adam,
    ActorCritic,
    DivergenceError,
    PolicyConfig,
    RolloutBatch,
    TrainConfig,
    collect_rollouts,
    gaussian_kl,
    load_checkpoint,
    log_prob,
    normalize_advantages,
    policy_forward,
    ppo_loss_and_grads,
    ppo_update,
    sample_action,
    save_checkpoint,
    train,
)

TINY = PolicyConfig(hidden=(2,), state_dim=3, action_dim=2)


def toy_batch(policy, rng, n=16, scale=1.0):
    states = rng.normal(size=(n, policy.cfg.state_dim))
    mean, std, values = policy.forward(states)
    actions, logp = sample_action(mean, std, rng)
    rewards = rng.normal(size=n) * scale
    return RolloutBatch(states=states, actions=actions, raw_actions=actions, log_probs=logp, rewards=rewards,
                        values=values, advantages=normalize_advantages(rewards - values), old_mean=mean,
                        old_log_std=policy.log_std.copy())


def perturbed_policy(seed):
    """A tiny policy moved away from its initialisation so no gradient vanishes by symmetry."""
    pol = ActorCritic(TINY, seed=seed)
    rng = np.random.default_rng(seed + 100)
    pol.set_params({k: v + rng.normal(scale=0.3, size=v.shape) for k, v in pol.named_params().items()})
    return pol


def total_loss(policy, batch, cfg):
    return ppo_loss_and_grads(policy, batch, cfg)[0]["loss"]


# ---------------------------------------------------------------------------
# policy

def test_fresh_policy_unit_std():
    mean, std, value = policy_forward(ActorCritic(), np.zeros(6))
    assert mean.shape == (13,) and np.all(std == 1.0)
    assert np.all(np.abs(mean) < 0.1)


def test_forward_deterministic():
    pol = ActorCritic()
    s = np.array([0.4, -0.1, 0.2, 0.1, -0.1, 1.2])
    a, b = policy_forward(pol, s), policy_forward(pol, s)
    assert np.array_equal(a[0], b[0]) and a[2] == b[2]


def test_forward_finite_on_region_boundary():
    pol = ActorCritic()
    corners = np.array([[x, y, z, r, p, w] for x in (-0.6, 1.2) for y in (-0.6, 0.6) for z in (-0.4, 0.4)
                        for r in (-0.26, 0.26) for p in (-0.26, 0.26) for w in (-1.57, 1.57)])
    mean, std, value = pol.forward(corners)
    assert np.all(np.isfinite(mean)) and np.all(np.isfinite(value))


def test_log_prob_matches_scalar_formula():
    rng = np.random.default_rng(0)
    mean, log_std = rng.normal(size=(5, 3)), rng.normal(size=3) * 0.3
    a = rng.normal(size=(5, 3))
    std = np.exp(log_std)
    expected = [sum(-0.5 * ((a[i, j] - mean[i, j]) / std[j]) ** 2 - math.log(std[j] * math.sqrt(2 * math.pi))
                    for j in range(3)) for i in range(5)]
    np.testing.assert_allclose(log_prob(a, mean, log_std), expected, rtol=1e-13)


def test_sample_zero_std_returns_mean():
    mean = np.array([0.1, -0.2, 0.3])
    a, _ = sample_action(mean, np.zeros(3), np.random.default_rng(0))
    np.testing.assert_array_equal(a, mean)


def test_sample_reproducible_and_unbiased():
    mean, std = np.array([0.3, -1.0]), np.array([0.5, 2.0])
    a1, _ = sample_action(np.tile(mean, (100000, 1)), np.tile(std, (100000, 1)), np.random.default_rng(4))
    a2, _ = sample_action(np.tile(mean, (100000, 1)), np.tile(std, (100000, 1)), np.random.default_rng(4))
    assert np.array_equal(a1, a2)
    assert np.all(np.abs(a1.mean(axis=0) - mean) <= 4 * std / math.sqrt(100000))


def test_gaussian_kl_examples():
    z = np.zeros((1, 2))
    assert gaussian_kl(z, np.zeros(2), z, np.zeros(2)) == 0.0
    assert gaussian_kl(z, np.zeros(2), z + 1.0, np.zeros(2)) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# gradients

def fd_gradient(policy, batch, cfg, key, h=1e-6):
    base = {k: v.copy() for k, v in policy.named_params().items()}
    grad = np.zeros_like(base[key])
    for idx in np.ndindex(grad.shape):
        for sign in (1, -1):
            p = {k: v.copy() for k, v in base.items()}
            p[key][idx] += sign * h
            policy.set_params(p)
            grad[idx] += sign * total_loss(policy, batch, cfg) / (2 * h)
    policy.set_params(base)
    return grad


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    pol = perturbed_policy(seed)
    rng = np.random.default_rng(seed)
    batch = toy_batch(pol, rng)
    # shift the policy so some ratios leave the clip range
    pol.set_params({k: v + 0.05 for k, v in pol.named_params().items()})
    cfg = TrainConfig()
    _, grads = ppo_loss_and_grads(pol, batch, cfg)
    for key in grads:
        fd = fd_gradient(pol, batch, cfg, key)
        err = np.linalg.norm(grads[key] - fd) / max(np.linalg.norm(fd), 1e-8)
        assert err <= 1e-4, key


def test_vanilla_policy_gradient_direction():
    rng = np.random.default_rng(5)
    pol = perturbed_policy(5)
    batch = toy_batch(pol, rng, n=64)
    cfg = TrainConfig(clip=1e9, entropy_coef=0.0, value_coef=0.0)
    _, grads = ppo_loss_and_grads(pol, batch, cfg)
    # oracle: -mean(A * grad log pi), by finite differences of the log-likelihood objective
    base = {k: v.copy() for k, v in pol.named_params().items()}

    def objective():
        mean, _, _ = pol.forward(batch.states)
        return -np.mean(batch.advantages * log_prob(batch.actions, mean, pol.log_std))

    h = 1e-6
    keys = [k for k in grads if k.startswith("actor/") or k == "log_std"]
    g_ppo, g_pg = [], []
    for key in keys:
        g = np.zeros_like(base[key])
        for idx in np.ndindex(g.shape):
            for sign in (1, -1):
                p = {k: v.copy() for k, v in base.items()}
                p[key][idx] += sign * h
                pol.set_params(p)
                g[idx] += sign * objective() / (2 * h)
        pol.set_params(base)
        g_ppo.append(grads[key].ravel())
        g_pg.append(g.ravel())
    a, b = np.concatenate(g_ppo), np.concatenate(g_pg)
    assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) >= 0.999


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_normalization_keeps_ranking(adv):
    adv = np.array(adv)
    n = normalize_advantages(adv)
    # ties may collapse but strict order is never reversed
    for i in range(len(adv)):
        for j in range(len(adv)):
            if adv[i] < adv[j]:
                assert n[i] <= n[j]
    if np.ptp(adv) > 1e-3:
        assert abs(n.mean()) <= 1e-9 and n.std() == pytest.approx(1.0, rel=1e-6)


def test_single_sample_normalization():
    assert normalize_advantages([3.0]).tolist() == [0.0]


# ---------------------------------------------------------------------------
# update

def test_zero_advantage_keeps_mean():
    pol = ActorCritic(PolicyConfig(hidden=(8,), state_dim=3, action_dim=2))
    rng = np.random.default_rng(6)
    batch = toy_batch(pol, rng)
    batch.advantages = np.zeros_like(batch.advantages)
    cfg = TrainConfig(entropy_coef=0.0, value_coef=0.0)
    before = pol.forward(batch.states)[0]
    ppo_update(pol, Adam(), batch, cfg, 1e-3)
    np.testing.assert_allclose(pol.forward(batch.states)[0], before, atol=1e-12)


def test_large_kl_halves_learning_rate():
    pol = ActorCritic(PolicyConfig(hidden=(8,), state_dim=3, action_dim=2))
    rng = np.random.default_rng(7)
    batch = toy_batch(pol, rng)
    # pretend the rollout came from a policy far from the current one
    batch.old_mean = batch.old_mean + 3.0
    cfg = TrainConfig(epochs=1)
    m = ppo_update(pol, Adam(), batch, cfg, 1e-3)
    assert m["lr"] == 5e-4


def test_small_kl_doubles_learning_rate():
    pol = ActorCritic(PolicyConfig(hidden=(8,), state_dim=3, action_dim=2))
    rng = np.random.default_rng(8)
    batch = toy_batch(pol, rng)
    batch.old_mean = batch.old_mean + 0.01
    m = ppo_update(pol, Adam(), batch, TrainConfig(epochs=1), 1e-3)
    assert m["lr"] == 2e-3


def test_nonfinite_reward_raises_divergence():
    pol = ActorCritic(PolicyConfig(hidden=(8,), state_dim=3, action_dim=2))
    batch = toy_batch(pol, np.random.default_rng(9))
    batch.rewards = batch.rewards.copy()
    batch.rewards[0] = np.inf
    before = {k: v.copy() for k, v in pol.named_params().items()}
    with pytest.raises(DivergenceError):
        ppo_update(pol, Adam(), batch, TrainConfig(), 1e-3)
    for k, v in pol.named_params().items():
        np.testing.assert_array_equal(v, before[k])


def test_rollout_batch_shapes_and_determinism():
    pol = ActorCritic(PolicyConfig(hidden=(16,)))
    env = BanditEnv(n_envs=1)
    b = collect_rollouts(pol, env, seed=3)
    assert b.states.shape == (1, 6) and b.actions.shape == (1, 13)
    env = BanditEnv(n_envs=32)
    b1, b2 = collect_rollouts(pol, env, 3, 5), collect_rollouts(pol, env, 3, 5)
    assert np.array_equal(b1.actions, b2.actions) and np.array_equal(b1.rewards, b2.rewards)


def test_zero_std_rollouts_deterministic():
    pol = ActorCritic(PolicyConfig(hidden=(16,)))
    pol.log_std = np.full(13, -np.inf)
    env = BanditEnv(n_envs=8)
    r1 = collect_rollouts(pol, env, 1, 0).rewards
    r2 = collect_rollouts(pol, env, 2, 0).rewards
    np.testing.assert_array_equal(r1, r2)


# ---------------------------------------------------------------------------
# checkpoints and training

def test_checkpoint_round_trip_bitwise(tmp_path):
    pol = perturbed_policy(3)
    opt = Adam()
    opt.step(pol.named_params(), {k: np.ones_like(v) for k, v in pol.named_params().items()}, 1e-3)
    path = save_checkpoint(tmp_path / "c.npz", pol, opt, iteration=7, lr=3e-4)
    pol2, arrays = load_checkpoint(path)
    s = np.random.default_rng(0).normal(size=(10, 3))
    for x, y in zip(pol.forward(s), pol2.forward(s)):
        assert x.tobytes() == y.tobytes()
    assert int(arrays["meta/iteration"]) == 7 and float(arrays["meta/lr"]) == 3e-4
    opt2 = Adam()
    opt2.load(arrays)
    assert opt2.t == 1 and set(opt2.m) == set(opt.m)


def test_checkpoint_rejects_unknown_version(tmp_path):
    np.savez(tmp_path / "bad.npz", format_version=np.array(99))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.npz")


def test_bandit_converges():
    env = BanditEnv(n_envs=64)
    pol = ActorCritic(PolicyConfig(hidden=(64, 64)), seed=0)
    opt, cfg = Adam(), TrainConfig()
    lr = cfg.lr
    for it in range(500):
        batch = collect_rollouts(pol, env, 0, it)
        lr = ppo_update(pol, opt, batch, cfg, lr)["lr"]
    mean = policy_forward(pol, np.zeros(6))[0]
    assert np.linalg.norm(mean - env.optimum) <= 0.05


def test_train_seed_determinism_and_resume(tmp_path):
    pcfg = PolicyConfig(hidden=(16, 16))
    tcfg = TrainConfig(iterations=12, n_envs=16, checkpoint_every=5)
    env = BanditEnv(n_envs=16)
    full = train(pcfg, tcfg, env, tmp_path / "a")
    again = train(pcfg, tcfg, env, tmp_path / "b")
    assert full.metrics.read_bytes() == again.metrics.read_bytes()
    assert full.checkpoint.read_bytes() == again.checkpoint.read_bytes()

    # stop after 10 iterations (last checkpoint), then resume to 12
    from dataclasses import replace
    train(pcfg, replace(tcfg, iterations=10), env, tmp_path / "c")
    resumed = train(pcfg, tcfg, env, tmp_path / "c", resume=True)
    assert resumed.metrics.read_bytes() == full.metrics.read_bytes()
    rows = list(csv.reader(resumed.metrics.open()))
    assert rows[0][:3] == ["iteration", "mean_reward", "mean_total_penalty"]
    assert rows[0][-2:] == ["approx_kl", "lr"]
    assert len(rows) == 13


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(activation="relu")
    with pytest.raises(ValueError):
        TrainConfig(clip=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
