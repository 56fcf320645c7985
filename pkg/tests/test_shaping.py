import numpy as np
import pytest

from lrslab.instruction import MatchLevel, match_level, parse_instruction, shipped_instruction
from lrslab.mdp import N_ACTIONS, Action, build_room, rollout, room_script, scripted_policy, shipped_room
from lrslab.shaping import (
    LanguageReward,
    PotentialConfig,
    ProgressState,
    RewardRule,
    Rule,
    combine_rewards,
    episode_rewards,
    lrs_step_reward,
    potential,
    shaping_term,
)


def a2_run(script="instructed"):
    env = build_room(shipped_room("A2"))
    return rollout(env, scripted_policy(room_script("A2", script)), seed=0)


@pytest.mark.parametrize(
    "variant, instructed, shortcut",
    [(Rule.FULLY_MATCHED, 6.0, 0.0), (Rule.PARTIALLY_MATCHED, 6.0, 0.5), (Rule.RELAXED_ORDERING, 6.0, 2.5)],
)
def test_a2_episode_totals(variant, instructed, shortcut):
    ins = shipped_instruction("A2")
    rule = RewardRule(variant)
    assert episode_rewards(rule, a2_run(), ins).sum() == pytest.approx(instructed)
    assert episode_rewards(rule, a2_run("shortcut"), ins).sum() == pytest.approx(shortcut)


def test_rule1_pays_at_completion_steps():
    r = episode_rewards(RewardRule(Rule.FULLY_MATCHED), a2_run(), shipped_instruction("A2"))
    assert list(np.flatnonzero(r)) == [7, 9, 11, 16, 19, 29]
    assert set(r[r > 0]) == {1.0}


def test_rule2_partial_then_top_up():
    r = episode_rewards(RewardRule(Rule.PARTIALLY_MATCHED), a2_run(), shipped_instruction("A2"))
    # the Down action meets the ladder sentence's action set on step 5
    assert r[5] == pytest.approx(0.5)
    assert r[7] == pytest.approx(0.5)


def test_rule_validation():
    with pytest.raises(ValueError):
        RewardRule(Rule.PARTIALLY_MATCHED, r_full=1.0, r_partial=1.0)
    assert RewardRule.named("RULE3").variant == Rule.RELAXED_ORDERING


@pytest.mark.parametrize("variant", list(Rule))
def test_full_match_dominates_random_trajectories(variant):
    """No trajectory that is not fully matched earns the full-match total."""
    ins = shipped_instruction("A2")
    env = build_room(shipped_room("A2"))
    rule = RewardRule(variant)
    best = len(ins) * rule.r_full
    rng = np.random.default_rng(3)
    script = room_script("A2")
    for k in range(200):
        # perturbations of the instructed script plus uniform noise
        acts = list(script) if k % 2 else [Action(int(a)) for a in rng.integers(0, N_ACTIONS, 60)]
        if k % 2:
            i = int(rng.integers(0, len(acts)))
            acts[i] = Action(int(rng.integers(0, N_ACTIONS)))
        traj = rollout(env, scripted_policy(acts), seed=k)
        total = episode_rewards(rule, traj, ins).sum()
        assert total <= best + 1e-12
        if match_level(traj, ins).level != MatchLevel.FULL:
            assert total < best


def test_pure_step_does_not_mutate():
    ins = shipped_instruction("A2")
    traj = a2_run().transitions
    prog = ProgressState.start(len(ins))
    reward, after = lrs_step_reward(RewardRule(Rule.RELAXED_ORDERING), traj[:6], ins, prog)
    assert prog.pointer == 0 and prog.paid == [0.0] * len(ins)
    # Down meets the action sets of both Down sentences at once
    assert reward == pytest.approx(1.0)
    assert after.paid == [0.5, 0.0, 0.0, 0.5, 0.0, 0.0]


def test_two_sentences_completing_on_one_step():
    text = (
        "[sentence.a]\nactions = Right\nsegment = Right -> col=2\n"
        "[sentence.b]\nstates = col=2\nsegment = * -> col=2\n"
    )
    ins = parse_instruction(text)
    env = build_room(shipped_room("chain"))
    traj = rollout(env, scripted_policy(["Right"]), seed=0)
    assert episode_rewards(RewardRule(Rule.FULLY_MATCHED), traj, ins).tolist() == [2.0]


def test_potential_and_shaping_term():
    cfg = PotentialConfig(alpha=2.0, gamma=0.5)
    assert potential(3, cfg) == 6.0
    assert shaping_term(2.0, 3.0, 0.5) == pytest.approx(-1.0)
    with pytest.raises(ZeroDivisionError):
        shaping_term(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        shaping_term(0.0, 1.0, 1.5)
    with pytest.raises(ValueError):
        PotentialConfig(alpha=0.0)


def test_potential_stream_telescopes():
    ins = shipped_instruction("A2")
    gamma = 0.9
    lrs = LanguageReward(ins, "potential_shaping", potential_config=PotentialConfig(alpha=1.0, gamma=gamma))
    traj = a2_run()
    f = np.array([lrs.step(tr) for tr in traj])
    disc = gamma ** np.arange(len(f))
    phi_last = len(ins)
    expected = gamma ** (len(f) - 1) * phi_last - 0.0 / gamma
    assert abs((disc * f).sum() - expected) < 1e-10
    lrs.reset()
    assert lrs.history == [] and lrs.progress.count == 0


def test_language_reward_modes():
    ins = shipped_instruction("A2")
    with pytest.raises(ValueError):
        LanguageReward(ins, "rule9")
    lrs = LanguageReward(ins, "rule1")
    total = sum(lrs.step(tr) for tr in a2_run())
    assert total == pytest.approx(6.0)


def test_combine_rewards_clips_streams():
    assert combine_rewards(1.0, 0.5, 0.2) == pytest.approx(3 * 1.5 + 0.2)
    assert combine_rewards(1.0, 2.0, 9.0) == pytest.approx(3 * 2.0 + 5.0)
    assert combine_rewards(0.0, -1.0, -1.0) == 0.0
    assert combine_rewards(1.0, 0.0, 0.0, coefficients=(2.0, 0.5)) == 2.0
