"""Simulated language reward rules and potential-based shaping.

Rewards are paid per sentence at the step it completes. A sentence is
*fully* completed when its target segment ends at the current step, and a
*component* (its action set or its state predicates) is completed once every
element of that set has been seen. Each sentence's payments add up to at
most ``r_full``.

* Rule 1 pays ``r_full`` for each sentence that completes in order with its
  own action and state constraints met, and nothing for partial matches.
* Rule 2 follows a pointer over the sentences. Only the active sentence is
  rewarded: ``r_partial`` when one component has been met since it became
  active, topped up to ``r_full`` on full completion, which also advances
  the pointer.
* Rule 3 watches every sentence from the start of the episode. A component
  or full completion of any sentence pays ``r_partial``; a full completion in
  pointer order tops the sentence up to ``r_full``.

Under every rule a fully matched episode earns more than any other, since an
episode that is not fully matched leaves at least one sentence below
``r_full``. The engine returns raw per-step sums; clipping to ``[0, 1]``
happens when the reward streams are combined.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .instruction import Instruction, segment_matches_at
from .mdp import Transition


class Rule(enum.Enum):
    FULLY_MATCHED = "rule1"
    PARTIALLY_MATCHED = "rule2"
    RELAXED_ORDERING = "rule3"


@dataclass(frozen=True)
class RewardRule:
    variant: Rule
    r_full: float = 1.0
    r_partial: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.r_partial < self.r_full:
            raise ValueError("partial reward must lie in [0, r_full)")

    @classmethod
    def named(cls, name: str, **kw) -> "RewardRule":
        return cls(Rule(name.lower()), **kw)


@dataclass
class ProgressState:
    """Per-episode matching progress for one instruction."""

    pointer: int
    completed: list[bool]
    paid: list[float]
    actions_seen: list[set]
    states_seen: list[set]
    activated_at: int = 0
    steps: int = 0
    actions_total: set = field(default_factory=set)
    states_total: set = field(default_factory=set)

    @classmethod
    def start(cls, m: int) -> "ProgressState":
        return cls(0, [False] * m, [0.0] * m, [set() for _ in range(m)], [set() for _ in range(m)])

    @property
    def count(self) -> int:
        return sum(self.completed)

    def copy(self) -> "ProgressState":
        return ProgressState(
            self.pointer,
            list(self.completed),
            list(self.paid),
            [set(s) for s in self.actions_seen],
            [set(s) for s in self.states_seen],
            self.activated_at,
            self.steps,
            set(self.actions_total),
            set(self.states_total),
        )


@dataclass(frozen=True)
class PotentialConfig:
    alpha: float = 1.0
    gamma: float = 0.99
    initial: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def potential(progress: ProgressState | int, config: PotentialConfig) -> float:
    count = progress if isinstance(progress, int) else progress.count
    return config.alpha * count


def shaping_term(phi_prev: float, phi_cur: float, gamma: float) -> float:
    if gamma == 0:
        raise ZeroDivisionError("gamma must be non-zero")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    return phi_cur - phi_prev / gamma


def combine_rewards(
    env_r: float,
    lang_r: float,
    intrinsic_r: float,
    coefficients: tuple[float, float] = (3.0, 1.0),
    clips: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 5.0)),
) -> float:
    """``c_ext * (env + lang) + c_int * intrinsic`` after per-stream clipping."""
    (lo, hi), (ilo, ihi) = clips
    ext = min(max(env_r, lo), hi) + min(max(lang_r, lo), hi)
    return coefficients[0] * ext + coefficients[1] * min(max(intrinsic_r, ilo), ihi)


# -- the rule engine ------------------------------------------------------

def _components_met(instruction: Instruction, i: int, progress: ProgressState) -> bool:
    s = instruction.sentences[i]
    if s.actions and s.actions <= progress.actions_seen[i]:
        return True
    return bool(s.states) and len(progress.states_seen[i]) == len(s.states)


def _observe(instruction: Instruction, progress: ProgressState, tr: Transition, which: Sequence[int]) -> None:
    nxt = tr.next_state
    for i in which:
        s = instruction.sentences[i]
        if tr.action in s.actions:
            progress.actions_seen[i].add(tr.action)
        for k, p in enumerate(s.states):
            if k not in progress.states_seen[i] and p(nxt):
                progress.states_seen[i].add(k)


def _reset_tracking(progress: ProgressState, i: int, t: int) -> None:
    progress.actions_seen[i] = set()
    progress.states_seen[i] = set()
    progress.activated_at = t


def _pay(progress: ProgressState, i: int, target: float) -> float:
    due = max(0.0, target - progress.paid[i])
    progress.paid[i] += due
    return due


def _sentence_match(instruction: Instruction, i: int, history: Sequence[Transition], progress: ProgressState) -> bool:
    """Sentence ``i``'s action and state constraints hold on the history so far."""
    s = instruction.sentences[i]
    if not s.actions <= progress.actions_total:
        return False
    texts = [p.text for p in instruction.state_constraint]
    return all(texts.index(p.text) in progress.states_total for p in s.states)


def advance(rule: RewardRule, history: Sequence[Transition], instruction: Instruction, progress: ProgressState) -> float:
    """Update ``progress`` in place for the last transition of ``history``."""
    t = len(history) - 1
    tr = history[t]
    m = len(instruction.sentences)
    progress.steps = t + 1
    progress.actions_total.add(tr.action)
    for k, p in enumerate(instruction.state_constraint):
        if k not in progress.states_total and (p(tr.state) or p(tr.next_state)):
            progress.states_total.add(k)

    variant = rule.variant
    if variant == Rule.RELAXED_ORDERING:
        _observe(instruction, progress, tr, range(m))
    elif progress.pointer < m:
        _observe(instruction, progress, tr, (progress.pointer,))

    reward = 0.0
    if variant == Rule.RELAXED_ORDERING:
        for i in range(m):
            if progress.paid[i] < rule.r_partial and (
                _components_met(instruction, i, progress) or segment_matches_at(instruction.sentences[i].segment, history, t)
            ):
                reward += _pay(progress, i, rule.r_partial)
    elif variant == Rule.PARTIALLY_MATCHED and progress.pointer < m:
        i = progress.pointer
        if _components_met(instruction, i, progress):
            reward += _pay(progress, i, rule.r_partial)

    # in-order full completions; several sentences may finish on one step
    while progress.pointer < m and segment_matches_at(instruction.sentences[progress.pointer].segment, history, t):
        i = progress.pointer
        progress.completed[i] = True
        progress.pointer += 1
        if variant != Rule.FULLY_MATCHED or _sentence_match(instruction, i, history, progress):
            reward += _pay(progress, i, rule.r_full)
        if progress.pointer < m:
            _reset_tracking(progress, progress.pointer, t)
    return reward


def lrs_step_reward(
    rule: RewardRule,
    history: Sequence[Transition],
    instruction: Instruction,
    progress: ProgressState,
) -> tuple[float, ProgressState]:
    """Pure form of :func:`advance`: returns the reward and a new progress."""
    nxt = progress.copy()
    return advance(rule, history, instruction, nxt), nxt


class LanguageReward:
    """Stateful per-episode reward stream for one environment."""

    def __init__(self, instruction: Instruction, mode: str, rule: RewardRule | None = None, potential_config: PotentialConfig | None = None):
        if mode not in ("rule1", "rule2", "rule3", "potential_shaping"):
            raise ValueError(f"unknown LRS mode {mode!r}")
        self.instruction = instruction
        self.mode = mode
        self.rule = rule or RewardRule(Rule(mode) if mode != "potential_shaping" else Rule.FULLY_MATCHED)
        self.potential_config = potential_config or PotentialConfig()
        self.reset()

    def reset(self) -> None:
        self.history: list[Transition] = []
        self.progress = ProgressState.start(len(self.instruction.sentences))
        self.phi_prev = self.potential_config.initial

    def step(self, tr: Transition) -> float:
        self.history.append(tr)
        if self.mode == "potential_shaping":
            advance(RewardRule(Rule.FULLY_MATCHED), self.history, self.instruction, self.progress)
            phi = potential(self.progress, self.potential_config)
            out = shaping_term(self.phi_prev, phi, self.potential_config.gamma)
            self.phi_prev = phi
            return out
        return advance(self.rule, self.history, self.instruction, self.progress)


def episode_rewards(rule: RewardRule, trajectory: Sequence[Transition], instruction: Instruction) -> np.ndarray:
    """Language reward at every step of a finished trajectory."""
    progress = ProgressState.start(len(instruction.sentences))
    history: list[Transition] = []
    out = []
    for tr in trajectory:
        history.append(tr)
        out.append(advance(rule, history, instruction, progress))
    return np.asarray(out, dtype=float)
