"""Exact checks of subgoal shaping on small, fully enumerable MDPs.

Two results are verified numerically:

* Shaping with ``F_t = Phi_t - Phi_{t-1} / gamma`` telescopes, so the greedy
  policy of value iteration is the same with or without it.
* For a softmax distribution over the enumerated deterministic policies, the
  gradient of the expected return splits into a term driven by the rewards
  paid to goal-unreachable "partially matched" policies and a term pointing
  at the goal-reaching set. Rewarding the partial set therefore slows the
  growth of ``P(pi in Pi_G)``; :func:`convergence_rate_sweep` measures this.

MDPs here are deterministic with ``done`` flags on transitions rather than
terminal states, so a one-state bandit is simply a state whose actions all
end the episode.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .agent import softmax
from .shaping import shaping_term

MAX_POLICIES = 1_000_000
TIE_TOLERANCE = 1e-9


class EnumerationError(ValueError):
    pass


@dataclass(frozen=True)
class EnumerableMdp:
    """Deterministic MDP small enough to enumerate every policy.

    ``next_state[s, a]`` is the successor, ``reward[s, a]`` the environment
    reward and ``done[s, a]`` marks transitions that end the episode. The goal
    is reached by any transition with positive reward.
    """

    next_state: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    gamma: float = 0.9
    start: int = 0
    horizon: int = 50
    name: str = "mdp"

    def __post_init__(self):
        shape = self.next_state.shape
        if self.reward.shape != shape or self.done.shape != shape:
            raise ValueError("next_state, reward and done must share one (states, actions) shape")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.start < shape[0]:
            raise ValueError("start state out of range")
        if self.next_state.min() < 0 or self.next_state.max() >= shape[0]:
            raise ValueError("successor out of range")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


@dataclass(frozen=True)
class Path:
    """The unique trajectory of a deterministic policy from the start state."""

    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    terminated: bool
    cycle_start: int | None = None

    @property
    def reached_goal(self) -> bool:
        return any(r > 0 for r in self.rewards)

    @property
    def next_states(self) -> tuple[int, ...]:
        return self.states[1:]


def follow(mdp: EnumerableMdp, policy: Sequence[int], steps: int | None = None) -> Path:
    """Roll ``policy`` out from the start.

    Without ``steps`` the rollout stops at termination or at the first
    repeated state, recording where the cycle starts so infinite-horizon
    returns can be summed exactly. With ``steps`` it runs that many steps at
    most.
    """
    s = mdp.start
    states, actions, rewards = [s], [], []
    seen = {s: 0}
    limit = steps if steps is not None else mdp.n_states + 1
    for _ in range(limit):
        a = int(policy[s])
        actions.append(a)
        rewards.append(float(mdp.reward[s, a]))
        nxt = int(mdp.next_state[s, a])
        states.append(nxt)
        if mdp.done[s, a]:
            return Path(tuple(states), tuple(actions), tuple(rewards), True)
        if steps is None and nxt in seen:
            return Path(tuple(states), tuple(actions), tuple(rewards), False, seen[nxt])
        seen[nxt] = len(states) - 1
        s = nxt
    return Path(tuple(states), tuple(actions), tuple(rewards), False)


def discounted_value(rewards: Sequence[float], gamma: float, cycle_start: int | None = None) -> float:
    """Discounted sum of ``rewards``; the tail from ``cycle_start`` repeats forever."""
    if cycle_start is None:
        return math.fsum(r * gamma**t for t, r in enumerate(rewards))
    prefix = math.fsum(r * gamma**t for t, r in enumerate(rewards[:cycle_start]))
    loop = rewards[cycle_start:]
    if not loop:
        return prefix
    if gamma >= 1.0:
        if any(loop):
            raise ValueError("undiscounted reward cycle has no finite value")
        return prefix
    body = math.fsum(r * gamma**t for t, r in enumerate(loop))
    return prefix + gamma**cycle_start * body / (1.0 - gamma ** len(loop))


# -- policy enumeration ----------------------------------------------------

@dataclass
class PolicyPartition:
    """Every deterministic policy, split by outcome.

    ``goal`` marks policies whose path earns environment reward, ``partial``
    those the supplied predicate accepts among the rest, and ``remainder``
    everything else. The masks are disjoint and cover all policies.
    """

    mdp: EnumerableMdp
    policies: np.ndarray
    paths: list[Path]
    goal: np.ndarray
    partial: np.ndarray

    @property
    def remainder(self) -> np.ndarray:
        return ~(self.goal | self.partial)

    def __len__(self) -> int:
        return len(self.policies)


PartialPredicate = Callable[[Path], bool]


def enumerate_policies(mdp: EnumerableMdp, partial: PartialPredicate | None = None, limit: int = MAX_POLICIES) -> PolicyPartition:
    count = mdp.n_actions**mdp.n_states
    if count > limit:
        raise EnumerationError(f"{count} policies exceed the enumeration limit of {limit}")
    policies = np.array(list(itertools.product(range(mdp.n_actions), repeat=mdp.n_states)), dtype=np.int64)
    policies = policies.reshape(count, mdp.n_states)
    paths = [follow(mdp, p, mdp.horizon) for p in policies]
    goal = np.array([p.reached_goal for p in paths], dtype=bool)
    if partial is None:
        part = np.zeros(count, dtype=bool)
    else:
        part = np.array([bool(partial(p)) for p in paths], dtype=bool) & ~goal
    return PolicyPartition(mdp, policies, paths, goal, part)


def visits_marked(cell: int) -> PartialPredicate:
    """Partial-match predicate: the path enters ``cell``. Goal paths are
    excluded by :func:`enumerate_policies` itself."""
    return lambda path: cell in path.states


# -- value iteration and shaping -------------------------------------------

def value_iteration(
    mdp: EnumerableMdp,
    reward: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    tie_tolerance: float = TIE_TOLERANCE,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal Q and its greedy policy (lowest action index among near-ties).

    ``reward[s, a]`` overrides the MDP reward; it may be the environment
    reward plus a shaping term.
    """
    r = mdp.reward if reward is None else np.asarray(reward, dtype=float)
    if mdp.gamma >= 1.0:
        raise ValueError("value iteration needs gamma < 1")
    cont = mdp.gamma * (~mdp.done)
    q = np.zeros_like(r, dtype=float)
    for _ in range(max_iter):
        v = q.max(axis=1)
        new = r + cont * v[mdp.next_state]
        delta = np.abs(new - q).max()
        q = new
        if delta < tol * (1.0 - mdp.gamma):
            return q, greedy(q, tie_tolerance)
    raise RuntimeError(f"value iteration did not converge in {max_iter} iterations")


def greedy(q: np.ndarray, tie_tolerance: float = TIE_TOLERANCE) -> np.ndarray:
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tolerance, axis=1)


def shaped_reward(mdp: EnumerableMdp, psi: np.ndarray) -> np.ndarray:
    """Environment reward plus ``Phi(s, a) - Phi(prev) / gamma`` per transition.

    The potential of a step is ``psi`` of the state it leads to, so the
    previous step's potential is ``psi[s]``. The episode's end is absorbing
    with potential zero.
    """
    psi = np.asarray(psi, dtype=float)
    phi_next = np.where(mdp.done, 0.0, psi[mdp.next_state])
    return mdp.reward + phi_next - psi[:, None] / mdp.gamma


def shaping_series(potentials: Sequence[float], gamma: float, initial: float = 0.0) -> list[float]:
    """Per-step shaping terms for a potential sequence ``Phi_0 .. Phi_T``."""
    out, prev = [], initial
    for phi in potentials:
        out.append(shaping_term(prev, phi, gamma))
        prev = phi
    return out


def telescoping_residual(potentials: Sequence[float], gamma: float, initial: float = 0.0) -> float:
    """``|sum_t gamma^t F_t - (gamma^T Phi_T - Phi_{-1} / gamma)|``."""
    terms = shaping_series(potentials, gamma, initial)
    total = math.fsum(f * gamma**t for t, f in enumerate(terms))
    big_t = len(potentials) - 1
    closed = gamma**big_t * potentials[-1] - initial / gamma if len(potentials) else -initial / gamma
    return abs(total - closed)


@dataclass
class InvarianceReport:
    greedy_plain: np.ndarray
    greedy_shaped: np.ndarray
    max_telescoping_residual: float
    best_plain: frozenset
    best_shaped: frozenset

    @property
    def greedy_equal(self) -> bool:
        return bool(np.array_equal(self.greedy_plain, self.greedy_shaped))

    @property
    def ok(self) -> bool:
        return self.greedy_equal and self.best_plain == self.best_shaped and self.max_telescoping_residual < 1e-10


def check_policy_invariance(mdp: EnumerableMdp, psi: np.ndarray, partition: PolicyPartition | None = None) -> InvarianceReport:
    """Compare plain and shaped problems at the argmax level.

    Three things are measured: the greedy policies of value iteration, the
    telescoping residual of every enumerated policy's path (potentials
    ``psi`` of the visited states, ``Phi_{-1} = 0``), and the set of
    policies with maximal infinite-horizon return.
    """
    psi = np.asarray(psi, dtype=float)
    _, g_plain = value_iteration(mdp)
    _, g_shaped = value_iteration(mdp, shaped_reward(mdp, psi))
    partition = partition or enumerate_policies(mdp)
    shaped = shaped_reward(mdp, psi)
    worst = 0.0
    plain_v, shaped_v = [], []
    for pol, path in zip(partition.policies, partition.paths):
        phis = [float(psi[s]) for s in path.next_states]
        if phis:
            terms = shaping_series(phis, mdp.gamma)
            total = math.fsum(f * mdp.gamma**t for t, f in enumerate(terms))
            worst = max(worst, abs(total - mdp.gamma ** (len(phis) - 1) * phis[-1]))
        loop = follow(mdp, pol)
        plain_v.append(discounted_value(loop.rewards, mdp.gamma, loop.cycle_start))
        sr = [float(shaped[s, a]) for s, a in zip(loop.states, loop.actions)]
        shaped_v.append(discounted_value(sr, mdp.gamma, loop.cycle_start))
    plain_v = np.asarray(plain_v)
    # every path starts at s0, so the shaped values carry the constant -psi[s0]/gamma
    shaped_v = np.asarray(shaped_v) + psi[mdp.start] / mdp.gamma
    best_p = frozenset(np.flatnonzero(plain_v >= plain_v.max() - 1e-9).tolist())
    best_s = frozenset(np.flatnonzero(shaped_v >= shaped_v.max() - 1e-9).tolist())
    return InvarianceReport(g_plain, g_shaped, worst, best_p, best_s)


# -- softmax over policies ---------------------------------------------------

@dataclass
class ReturnTable:
    """Return of every enumerated policy with its class masks."""

    returns: np.ndarray
    goal: np.ndarray
    partial: np.ndarray

    @property
    def remainder(self) -> np.ndarray:
        return ~(self.goal | self.partial)

    @classmethod
    def from_partition(cls, partition: PolicyPartition, goal_return: float = 1.0, partial_return: float = 0.0) -> "ReturnTable":
        """Outcome-level returns: ``goal_return`` on the goal set (a fully
        matched episode earns the full reward once) and ``partial_return`` on
        the partially matched set."""
        g = np.where(partition.goal, goal_return, np.where(partition.partial, partial_return, 0.0))
        return cls(g.astype(float), partition.goal.copy(), partition.partial.copy())

    def probabilities(self, theta: np.ndarray) -> dict[str, float]:
        p = softmax(theta)
        return {"goal": float(p[self.goal].sum()), "partial": float(p[self.partial].sum()), "remainder": float(p[self.remainder].sum())}

    def conditional_mean(self, theta: np.ndarray, mask: np.ndarray) -> float:
        p = softmax(theta)
        mass = p[mask].sum()
        return float((p[mask] * self.returns[mask]).sum() / mass) if mass > 0 else 0.0


def expected_return(theta: np.ndarray, table: ReturnTable) -> float:
    return float(softmax(theta) @ table.returns)


def expected_return_gradient(theta: np.ndarray, table: ReturnTable) -> np.ndarray:
    p = softmax(theta)
    return p * (table.returns - p @ table.returns)


def _mass_gradient(p: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return p * mask - p[mask].sum() * p


def _mean_gradient(p: np.ndarray, mask: np.ndarray, g: np.ndarray) -> np.ndarray:
    mass = p[mask].sum()
    if mass <= 0:
        return np.zeros_like(p)
    mean = (p[mask] * g[mask]).sum() / mass
    return p * mask * (g - mean) / mass


@dataclass
class DecompositionReport:
    direct: np.ndarray
    deviation: np.ndarray
    target: np.ndarray
    finite_difference: np.ndarray
    const: float
    mean_goal: float
    mean_partial: float
    p_goal: float
    simplified_gap: float

    @property
    def residual(self) -> float:
        return float(np.abs(self.direct - self.deviation - self.target).max())

    @property
    def fd_relative_error(self) -> float:
        scale = max(np.linalg.norm(self.direct), 1e-300)
        return float(np.linalg.norm(self.finite_difference - self.direct) / scale)


def gradient_decomposition_check(table: ReturnTable, theta: np.ndarray, h: float = 1e-5) -> DecompositionReport:
    """Split ``grad E[G]`` as ``grad(const * m_L) + grad((m_G - m_L) * P_G)``.

    With no reward off the goal and partial sets, ``E[G] = P_G m_G + P_L m_L``
    and ``P_L = const - P_G`` where ``const = 1 - P(remainder)``. The first
    term is the deviation caused by rewarding partial matches; the second
    moves mass toward the goal set at a rate set by ``m_G - m_L``. Both are
    evaluated exactly with the product rule; ``simplified_gap`` reports how
    far the direct gradient is from ``(m_G - m_L) grad P_G``, the form that
    treats ``const`` and the conditional means as fixed.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(table.returns[table.remainder] != 0):
        raise ValueError("precondition violated: policies outside the goal and partial sets earn reward")
    p = softmax(theta)
    g = table.returns
    direct = expected_return_gradient(theta, table)
    const = 1.0 - p[table.remainder].sum()
    m_g = table.conditional_mean(theta, table.goal)
    m_l = table.conditional_mean(theta, table.partial)
    p_g = p[table.goal].sum()
    d_const = -_mass_gradient(p, table.remainder)
    d_pg = _mass_gradient(p, table.goal)
    d_mg = _mean_gradient(p, table.goal, g)
    d_ml = _mean_gradient(p, table.partial, g)
    deviation = m_l * d_const + const * d_ml
    target = (m_g - m_l) * d_pg + p_g * (d_mg - d_ml)
    fd = np.zeros_like(theta)
    for i in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (expected_return(up, table) - expected_return(down, table)) / (2 * h)
    gap = float(np.abs(direct - (m_g - m_l) * d_pg).max())
    return DecompositionReport(direct, deviation, target, fd, float(const), m_g, m_l, float(p_g), gap)


@dataclass
class SweepRow:
    magnitude: float
    iterations: int
    censored: bool
    final_p_goal: float


def iterations_to_threshold(table: ReturnTable, step_size: float = 1.0, threshold: float = 0.9, cap: int = 100_000) -> tuple[int, bool, float]:
    """Exact gradient ascent from uniform weights until ``P_G >= threshold``."""
    theta = np.zeros(len(table.returns))
    for it in range(cap + 1):
        p = softmax(theta)
        p_goal = float(p[table.goal].sum())
        if p_goal >= threshold:
            return it, False, p_goal
        theta += step_size * p * (table.returns - p @ table.returns)
    return cap, True, p_goal


def convergence_rate_sweep(
    partition: PolicyPartition,
    magnitudes: Sequence[float],
    goal_return: float = 1.0,
    step_size: float = 1.0,
    threshold: float = 0.9,
    cap: int = 100_000,
) -> list[SweepRow]:
    rows = []
    for m in magnitudes:
        table = ReturnTable.from_partition(partition, goal_return, m)
        it, censored, p_goal = iterations_to_threshold(table, step_size, threshold, cap)
        rows.append(SweepRow(float(m), it, censored, p_goal))
    return rows


# -- testbeds --------------------------------------------------------------

LEFT, RIGHT = 0, 1


def chain_mdp(n: int = 4, gamma: float = 0.9, left_kills: bool = False, horizon: int | None = None) -> EnumerableMdp:
    """``n`` cells in a row; Right from the last cell reaches the goal.

    Left steps back (staying put at cell 0) or, with ``left_kills``, ends the
    episode with no reward.
    """
    if n < 1:
        raise ValueError("chain needs at least one cell")
    nxt = np.zeros((n, 2), dtype=np.int64)
    rew = np.zeros((n, 2))
    done = np.zeros((n, 2), dtype=bool)
    for s in range(n):
        nxt[s, LEFT] = max(s - 1, 0)
        done[s, LEFT] = left_kills
        nxt[s, RIGHT] = min(s + 1, n - 1)
        if s == n - 1:
            rew[s, RIGHT] = 1.0
            done[s, RIGHT] = True
    return EnumerableMdp(nxt, rew, done, gamma, 0, horizon or 4 * n, f"chain{n}")


def bandit_mdp(n_actions: int = 2, winning: int = 0) -> EnumerableMdp:
    """One state; every action ends the episode and ``winning`` pays 1."""
    rew = np.zeros((1, n_actions))
    rew[0, winning] = 1.0
    return EnumerableMdp(np.zeros((1, n_actions), dtype=np.int64), rew, np.ones((1, n_actions), dtype=bool), 0.9, 0, 1, "bandit")


def branch_mdp(gamma: float = 0.9) -> EnumerableMdp:
    """A corridor 0-1-2-goal with a side pocket 3 off cell 1.

    Actions are Left, Right and Down. Down from cell 1 enters the pocket,
    which looks like progress (it is the marked cell) but only leads back.
    """
    nxt = np.array([[0, 1, 0], [0, 2, 3], [1, 2, 2], [3, 3, 1]], dtype=np.int64)
    # from the pocket: Left/Right stay, Down climbs back to cell 1
    rew = np.zeros((4, 3))
    done = np.zeros((4, 3), dtype=bool)
    rew[2, RIGHT] = 1.0
    done[2, RIGHT] = True
    return EnumerableMdp(nxt, rew, done, gamma, 0, 16, "branch")


def random_mdp(rng: np.random.Generator, n_states: int | None = None, n_actions: int | None = None) -> EnumerableMdp:
    """A random deterministic MDP with one rewarding exit and some deadly ones."""
    n = int(n_states or rng.integers(3, 8))
    k = int(n_actions or rng.integers(2, 4))
    nxt = rng.integers(0, n, size=(n, k))
    done = rng.random((n, k)) < 0.15
    rew = np.zeros((n, k))
    s, a = int(rng.integers(0, n)), int(rng.integers(0, k))
    rew[s, a] = 1.0
    done[s, a] = True
    gamma = float(rng.uniform(0.7, 0.99))
    return EnumerableMdp(nxt, rew, done, gamma, 0, 4 * n, "random")


def random_subgoal_potential(rng: np.random.Generator, n_states: int, alpha: float | None = None) -> np.ndarray:
    """``alpha`` times a random subgoal count per state."""
    alpha = float(alpha if alpha is not None else rng.uniform(0.1, 2.0))
    return alpha * rng.integers(0, 4, size=n_states).astype(float)


def testbeds() -> list[tuple[PolicyPartition, str]]:
    """Theory testbeds with their partial-match predicates applied."""
    chain = chain_mdp(4)
    branch = branch_mdp()
    kill = chain_mdp(4, left_kills=True)
    return [
        (enumerate_policies(chain, visits_marked(2)), "chain4"),
        (enumerate_policies(kill, visits_marked(2)), "chain4-deadly"),
        (enumerate_policies(branch, visits_marked(3)), "branch"),
    ]
