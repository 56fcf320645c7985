import numpy as np
import pytest

from lrslab import theory
from lrslab.theory import (
    EnumerableMdp,
    EnumerationError,
    ReturnTable,
    bandit_mdp,
    branch_mdp,
    chain_mdp,
    check_policy_invariance,
    convergence_rate_sweep,
    discounted_value,
    enumerate_policies,
    expected_return,
    expected_return_gradient,
    follow,
    gradient_decomposition_check,
    greedy,
    random_mdp,
    random_subgoal_potential,
    shaped_reward,
    shaping_series,
    telescoping_residual,
    value_iteration,
    visits_marked,
)


def test_mdp_validation():
    z = np.zeros((2, 2), dtype=np.int64)
    with pytest.raises(ValueError):
        EnumerableMdp(z, np.zeros((2, 3)), np.zeros((2, 2), bool))
    with pytest.raises(ValueError):
        EnumerableMdp(z + 5, np.zeros((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(ValueError):
        EnumerableMdp(z, np.zeros((2, 2)), np.zeros((2, 2), bool), gamma=0.0)


def test_value_iteration_on_short_chain():
    q, pol = value_iteration(chain_mdp(1, gamma=0.5))
    assert q == pytest.approx(np.array([[0.5, 1.0]]))
    assert pol.tolist() == [1]
    q, pol = value_iteration(chain_mdp(3, gamma=0.9))
    assert q[0].max() == pytest.approx(0.81)
    assert pol.tolist() == [1, 1, 1]
    with pytest.raises(ValueError):
        value_iteration(chain_mdp(2, gamma=1.0))


def test_greedy_tie_break_is_lowest_index():
    assert greedy(np.array([[1.0, 1.0 + 1e-12, 0.5]])).tolist() == [0]
    assert greedy(np.array([[1.0, 2.0]])).tolist() == [1]


def test_follow_detects_cycles():
    mdp = chain_mdp(3)
    path = follow(mdp, [0, 0, 0])
    assert not path.terminated and path.cycle_start == 0
    assert follow(mdp, [1, 1, 1]).reached_goal
    assert len(follow(mdp, [0, 0, 0], steps=5).actions) == 5


def test_discounted_value_with_cycle():
    assert discounted_value([1.0, 1.0], 0.5, cycle_start=0) == pytest.approx(2.0)
    assert discounted_value([0.0, 1.0], 0.5, cycle_start=1) == pytest.approx(1.0)
    assert discounted_value([1.0, 2.0], 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        discounted_value([1.0], 1.0, cycle_start=0)


def test_enumeration_partition():
    part = enumerate_policies(chain_mdp(3), visits_marked(1))
    assert len(part) == 8
    assert part.goal.sum() == 1
    assert not (part.goal & part.partial).any()
    assert (part.goal | part.partial | part.remainder).all()
    with pytest.raises(EnumerationError):
        enumerate_policies(chain_mdp(30))


def test_branch_testbed_sizes():
    part = enumerate_policies(branch_mdp(), visits_marked(3))
    assert len(part) == 81
    assert part.goal.sum() == 3
    assert part.partial.sum() > 0


def test_shaped_reward_terminal_potential_zero():
    mdp = chain_mdp(2, gamma=0.5)
    psi = np.array([1.0, 3.0])
    r = shaped_reward(mdp, psi)
    assert r[0, 1] == pytest.approx(3.0 - 1.0 / 0.5)
    assert r[1, 1] == pytest.approx(1.0 + 0.0 - 3.0 / 0.5)


def test_shaping_series_telescopes():
    rng = np.random.default_rng(0)
    for _ in range(50):
        phis = rng.normal(size=int(rng.integers(1, 30)))
        g = float(rng.uniform(0.5, 1.0))
        init = float(rng.normal())
        assert telescoping_residual(phis, g, init) < 1e-10
    assert shaping_series([1.0, 2.0], 0.5) == [1.0, 0.0]


def test_invariance_on_random_mdps():
    rng = np.random.default_rng(7)
    for _ in range(5):
        mdp = random_mdp(rng)
        report = check_policy_invariance(mdp, random_subgoal_potential(rng, mdp.n_states))
        assert report.ok, report


def test_gradient_matches_finite_difference_and_decomposes():
    part = enumerate_policies(chain_mdp(4), visits_marked(2))
    table = ReturnTable.from_partition(part, 1.0, 0.5)
    theta = np.random.default_rng(1).normal(size=len(part))
    rep = gradient_decomposition_check(table, theta)
    assert rep.residual < 1e-12
    assert rep.fd_relative_error < 1e-6
    assert rep.const == pytest.approx(1 - softmax_mass(theta, table.remainder))
    assert expected_return_gradient(theta, table).sum() == pytest.approx(0.0, abs=1e-12)
    assert 0 < expected_return(theta, table) < 1


def softmax_mass(theta, mask):
    p = np.exp(theta - theta.max())
    p /= p.sum()
    return p[mask].sum()


def test_decomposition_precondition():
    part = enumerate_policies(bandit_mdp())
    table = ReturnTable(np.array([1.0, 0.3]), part.goal, part.partial)
    with pytest.raises(ValueError):
        gradient_decomposition_check(table, np.zeros(2))


def test_partial_reward_slows_convergence():
    for part, name in theory.testbeds():
        rows = convergence_rate_sweep(part, [0.0, 0.25, 0.5], cap=20_000)
        its = [r.iterations for r in rows]
        assert its == sorted(its), name
        assert not rows[0].censored


def test_bandit_converges_quickly():
    part = enumerate_policies(bandit_mdp())
    (row,) = convergence_rate_sweep(part, [0.0])
    assert not row.censored and row.final_p_goal >= 0.9
