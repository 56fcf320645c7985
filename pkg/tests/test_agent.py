import numpy as np
import pytest

from lrslab.agent import (
    Adam,
    Batch,
    NoveltyCounter,
    PpoConfig,
    TabularParams,
    actor_critic_update,
    discounted_returns,
    entropy,
    gae_advantages,
    normalize,
    ppo_update,
    softmax,
    surrogate_gradient,
    surrogate_objective,
)


def naive_gae(rewards, values, dones, gamma, lam, last_value):
    n = len(rewards)
    adv = np.zeros(n)
    for t in range(n):
        total, weight = 0.0, 1.0
        for k in range(t, n):
            nv = last_value if k == n - 1 else values[k + 1]
            delta = rewards[k] + gamma * nv * (1 - dones[k]) - values[k]
            total += weight * delta
            if dones[k]:
                break
            weight *= gamma * lam
        adv[t] = total
    return adv


def test_softmax_stable_and_normalised():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    assert p == pytest.approx([0.5, 0.5, 0.0])
    assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))


def test_gae_matches_naive_sum():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 15))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = rng.random(n) < 0.2
        last = float(rng.normal())
        got = gae_advantages(r, v, d, 0.97, 0.9, last)
        assert got == pytest.approx(naive_gae(r, v, d, 0.97, 0.9, last), abs=1e-12)


def test_gae_vectorised_over_envs():
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    d = rng.random((6, 3)) < 0.3
    last = rng.normal(size=3)
    got = gae_advantages(r, v, d, 0.99, 0.95, last)
    for e in range(3):
        assert got[:, e] == pytest.approx(gae_advantages(r[:, e], v[:, e], d[:, e], 0.99, 0.95, last[e]))
    with pytest.raises(ValueError):
        gae_advantages(r, v[:3], d, 0.99, 0.95)


def test_gae_with_lambda_one_is_return_minus_value():
    r = np.array([0.0, 0.0, 1.0])
    v = np.array([0.2, 0.1, 0.3])
    d = np.array([False, False, True])
    adv = gae_advantages(r, v, d, 0.5, 1.0)
    assert adv == pytest.approx(discounted_returns(r, 0.5) - v)


def _random_batch(rng, n_states=4, n=40):
    theta = rng.normal(size=(n_states, 8))
    states = rng.integers(0, n_states, n)
    actions = rng.integers(0, 8, n)
    old = np.log(softmax(theta[states] + rng.normal(scale=0.3, size=(n, 8)))[np.arange(n), actions])
    return theta, Batch(states, actions, old, rng.normal(size=n), rng.normal(size=n), rng.normal(size=n))


def test_surrogate_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(5):
        theta, batch = _random_batch(rng)
        g = surrogate_gradient(theta, batch, 0.2, 0.01)
        h = 1e-6
        fd = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            up, down = theta.copy(), theta.copy()
            up[idx] += h
            down[idx] -= h
            fd[idx] = (surrogate_objective(up, batch, 0.2, 0.01) - surrogate_objective(down, batch, 0.2, 0.01)) / (2 * h)
        assert g == pytest.approx(fd, abs=1e-6)


def test_adam_ascends():
    x = np.array([0.0])
    opt = Adam(x.shape, lr=0.1)
    for _ in range(200):
        opt.step(x, -2 * (x - 3.0))
    assert x[0] == pytest.approx(3.0, abs=0.05)


def test_ppo_update_raises_advantaged_action():
    rng = np.random.default_rng(0)
    n = 64
    states = np.zeros(n, dtype=int)
    actions = rng.integers(0, 8, n)
    adv = np.where(actions == 3, 1.0, -0.2)
    batch = Batch(states, actions, np.full(n, np.log(1 / 8)), adv, np.ones(n), np.zeros(n))
    params = TabularParams.zeros(2)
    ppo_update(batch, params, PpoConfig(learning_rate=0.05), rng)
    assert softmax(params.theta[0]).argmax() == 3
    assert params.v_ext[0] > 0 and params.v_ext[1] == 0
    with pytest.raises(ValueError):
        ppo_update(batch.subset(np.array([], dtype=int)), params, PpoConfig(), rng)


def test_ppo_config_validation():
    assert PpoConfig().batch_size == 1024
    with pytest.raises(ValueError):
        PpoConfig(learning_rate=0)
    with pytest.raises(ValueError):
        PpoConfig(gamma_env=1.5)
    with pytest.raises(ValueError):
        PpoConfig(entropy_coef=-1)


def test_novelty_bonus_decays():
    c = NoveltyCounter(3)
    assert c.peek(1) == 1.0
    assert c.bonus(1) == 1.0
    assert c.bonus(1) == pytest.approx(1 / np.sqrt(2))
    assert c.counts.tolist() == [0, 2, 0]
    c.merge(np.array([1, 0, 2]))
    assert c.peek(2) == pytest.approx(1 / np.sqrt(3))


def test_actor_critic_update_moves_toward_return():
    theta = np.zeros((2, 8))
    q = np.zeros((2, 8))
    theta2, q2 = actor_critic_update([0, 1], [2, 5], [1.0, 1.0], theta, q, 0.5, 0.5)
    assert q2[0, 2] == 0.5 and q2[1, 5] == 0.5
    assert softmax(theta2[0]).argmax() == 2
    assert theta.sum() == 0 and q.sum() == 0


def test_normalize():
    x = normalize(np.array([1.0, 2.0, 3.0]))
    assert x.mean() == pytest.approx(0.0) and x.std() == pytest.approx(1.0)
    assert normalize(np.ones(3)).tolist() == [0.0, 0.0, 0.0]
