"""Tabular softmax agents: PPO with GAE, a Monte Carlo actor-critic, and a
count-based novelty bonus.

All gradients are written out in closed form. For a softmax row
``pi = softmax(theta[s])`` the score function is ``d log pi(a) / d theta[s] =
onehot(a) - pi``, which is all the policy terms below need.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import N_ACTIONS

INTRINSIC_CLIP = (0.0, 5.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_probs(theta: np.ndarray, s: int) -> np.ndarray:
    """Action distribution at state ``s``; ``.max()`` gives the confidence."""
    return softmax(theta[s])


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-300, 1.0)
    return -(probs * np.log(p)).sum(axis=-1)


# -- novelty --------------------------------------------------------------

class NoveltyCounter:
    """Visit counts with the bonus ``1 / sqrt(N[s] + 1)`` paid before counting."""

    def __init__(self, n_states: int):
        self.counts = np.zeros(n_states, dtype=np.int64)

    def bonus(self, s: int) -> float:
        b = 1.0 / np.sqrt(self.counts[s] + 1.0)
        self.counts[s] += 1
        return float(min(max(b, INTRINSIC_CLIP[0]), INTRINSIC_CLIP[1]))

    def peek(self, s: int) -> float:
        return float(1.0 / np.sqrt(self.counts[s] + 1.0))

    def merge(self, delta: np.ndarray) -> None:
        self.counts += delta


def novelty_bonus(counter: NoveltyCounter, s: int) -> float:
    return counter.bonus(s)


# -- advantages -----------------------------------------------------------

def gae_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    last_value: np.ndarray | float = 0.0,
) -> np.ndarray:
    """Generalised advantage estimates along axis 0.

    ``dones[t]`` marks that the episode ended at step ``t`` so nothing is
    bootstrapped across it; ``last_value`` is the value of the state reached
    after the final step (used when the rollout was cut mid-episode).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must have the same shape")
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0]) if rewards.ndim > 1 else 0.0
    next_value = np.broadcast_to(np.asarray(last_value, dtype=float), rewards.shape[1:]).copy() if rewards.ndim > 1 else float(last_value)
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv


def normalize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return (x - x.mean()) / (std if std > 1e-8 else 1.0)


# -- PPO ------------------------------------------------------------------

@dataclass
class PpoConfig:
    learning_rate: float = 1e-4
    rollout_length: int = 128
    n_envs: int = 8
    gamma_env: float = 0.99
    gamma_lang: float = 0.99
    gamma_int: float = 0.99
    gae_lambda: float = 0.95
    n_minibatches: int = 4
    n_epochs: int = 4
    entropy_coef: float = 0.001
    clip_ratio: float = 0.2
    ext_coef: float = 3.0
    int_coef: float = 1.0
    value_lr: float = 0.1

    def __post_init__(self):
        for name in ("learning_rate", "rollout_length", "n_envs", "n_minibatches", "n_epochs", "clip_ratio", "value_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("gamma_env", "gamma_lang", "gamma_int", "gae_lambda"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be non-negative")

    @property
    def batch_size(self) -> int:
        return self.rollout_length * self.n_envs

    @property
    def minibatch_size(self) -> int:
        return self.batch_size // self.n_minibatches


class Adam:
    def __init__(self, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Gradient *ascent* step on ``params`` in place."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params += self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TabularParams:
    theta: np.ndarray
    v_ext: np.ndarray
    v_int: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int = N_ACTIONS) -> "TabularParams":
        return cls(np.zeros((n_states, n_actions)), np.zeros(n_states), np.zeros(n_states))


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    advantages: np.ndarray
    ret_ext: np.ndarray
    ret_int: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def subset(self, idx: np.ndarray) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in ("states", "actions", "old_logp", "advantages", "ret_ext", "ret_int")))


def surrogate_objective(theta: np.ndarray, batch: Batch, clip: float, entropy_coef: float) -> float:
    """Mean clipped surrogate plus entropy bonus (the quantity PPO ascends)."""
    probs = softmax(theta[batch.states])
    logp = np.log(probs[np.arange(len(batch)), batch.actions])
    ratio = np.exp(logp - batch.old_logp)
    adv = batch.advantages
    surr = np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)
    return float(surr.mean() + entropy_coef * entropy(probs).mean())


def surrogate_gradient(theta: np.ndarray, batch: Batch, clip: float, entropy_coef: float) -> np.ndarray:
    """Closed-form gradient of :func:`surrogate_objective` with respect to ``theta``."""
    n = len(batch)
    probs = softmax(theta[batch.states])
    rows = np.arange(n)
    ratio = probs[rows, batch.actions] / np.exp(batch.old_logp)
    adv = batch.advantages
    # the min picks the clipped branch (zero gradient) when the ratio has
    # moved past the clip boundary in the direction the advantage favours
    active = ~(((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip)))
    coef = np.where(active, adv * ratio, 0.0)
    g = -probs * coef[:, None]
    g[rows, batch.actions] += coef
    if entropy_coef:
        logp = np.log(np.clip(probs, 1e-300, 1.0))
        h = -(probs * logp).sum(axis=1)
        g += entropy_coef * (-probs * (logp + h[:, None]))
    out = np.zeros_like(theta)
    np.add.at(out, batch.states, g)
    return out / n


def value_gradient(values: np.ndarray, states: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of ``-0.5 * mean((V[s] - target)^2)`` (ascent direction)."""
    out = np.zeros_like(values)
    np.add.at(out, states, targets - values[states])
    return out / len(states)


class PpoLearner:
    """Owns the parameter tables and their optimiser state."""

    def __init__(self, n_states: int, config: PpoConfig):
        self.config = config
        self.params = TabularParams.zeros(n_states)
        self.opt = Adam(self.params.theta.shape, config.learning_rate)

    def update(self, batch: Batch, rng: np.random.Generator) -> None:
        ppo_update(batch, self.params, self.config, rng, self.opt)


def ppo_update(batch: Batch, params: TabularParams, config: PpoConfig, rng: np.random.Generator, opt: Adam | None = None) -> TabularParams:
    """Clipped-surrogate ascent over shuffled minibatches, in place."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    opt = opt or Adam(params.theta.shape, config.learning_rate)
    n = len(batch)
    size = max(1, n // config.n_minibatches)
    for _ in range(config.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n - size + 1, size):
            mb = batch.subset(order[start:start + size])
            opt.step(params.theta, surrogate_gradient(params.theta, mb, config.clip_ratio, config.entropy_coef))
            params.v_ext += config.value_lr * _visit_scaled(value_gradient(params.v_ext, mb.states, mb.ret_ext), mb.states)
            params.v_int += config.value_lr * _visit_scaled(value_gradient(params.v_int, mb.states, mb.ret_int), mb.states)
    return params


def _visit_scaled(grad: np.ndarray, states: np.ndarray) -> np.ndarray:
    # per-state mean error rather than batch mean, so rarely visited states
    # still move toward their targets at rate value_lr
    counts = np.bincount(states, minlength=len(grad)).astype(float)
    scale = np.where(counts > 0, len(states) / np.maximum(counts, 1.0), 0.0)
    return grad * scale


# -- actor-critic ---------------------------------------------------------

def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def actor_critic_update(
    states,
    actions,
    returns,
    theta: np.ndarray,
    q: np.ndarray,
    alpha_theta: float,
    alpha_phi: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One pass over an episode with Monte Carlo returns.

    The critic takes a gradient step on ``(G - Q[s, a])^2 / 2`` and the actor
    ascends ``Q[s, a] * grad log pi(a|s)`` with the updated critic.
    """
    theta = theta.copy()
    q = q.copy()
    for s, a, g in zip(states, actions, returns):
        q[s, a] += alpha_phi * (g - q[s, a])
        p = softmax(theta[s])
        score = -p
        score[a] += 1.0
        theta[s] += alpha_theta * q[s, a] * score
    return theta, q


@dataclass
class EpisodeLog:
    steps: int
    env_r: float
    lang_r: float
    int_r: float
    win: bool
    states: list = field(default_factory=list, repr=False)
    actions: list = field(default_factory=list, repr=False)
