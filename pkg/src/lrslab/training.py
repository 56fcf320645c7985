"""Training loops: lockstep PPO over several environments and episodic
actor-critic. Both return a :class:`TrainingOutcome` holding per-episode
logs, a visit heatmap and the winning trajectories' route labels."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .agent import (
    Batch,
    EpisodeLog,
    NoveltyCounter,
    PpoConfig,
    PpoLearner,
    actor_critic_update,
    discounted_returns,
    gae_advantages,
    normalize,
    softmax,
)
from .instruction import Instruction, MatchLevel, match_level
from .mdp import CLIFF, Action, Environment, State, Transition
from .shaping import LanguageReward, PotentialConfig, RewardRule, Rule

LRS_MODES = ("off", "rule1", "rule2", "rule3", "potential_shaping")


def classify_route(transitions: list[Transition], env: Environment, instruction: Instruction | None) -> str:
    """``instructed`` if the episode fully matches the instruction, ``shortcut``
    if it jumped off a cliff tile, ``other`` otherwise."""
    if instruction is not None and match_level(transitions, instruction).level == MatchLevel.FULL:
        return "instructed"
    for tr in transitions:
        if tr.action in (Action.JUMP_LEFT, Action.JUMP_RIGHT) and env.tile(tr.state.row, tr.state.col) == CLIFF:
            return "shortcut"
    return "other"


@dataclass
class TrainingOutcome:
    episodes: list[EpisodeLog]
    visits: np.ndarray
    routes: list[tuple[int, str]] = field(default_factory=list)
    last_win: list[Transition] | None = None

    @property
    def wins(self) -> int:
        return sum(e.win for e in self.episodes)


class _Recorder:
    def __init__(self, env: Environment, instruction: Instruction | None, episodes: int, win_cap: int):
        self.env = env
        self.instruction = instruction
        self.budget = episodes
        self.win_cap = win_cap
        self.logs: list[EpisodeLog] = []
        self.visits = np.zeros((env.spec.height, env.spec.width), dtype=np.int64)
        self.routes: list[tuple[int, str]] = []
        self.last_win = None
        self.wins = 0

    @property
    def finished(self) -> bool:
        return len(self.logs) >= self.budget or self.wins >= self.win_cap

    def close(self, transitions: list[Transition], lang: float, intrinsic: float) -> None:
        if self.finished:
            return
        first = transitions[0].state
        self.visits[first.row, first.col] += 1
        for tr in transitions:
            s = tr.next_state
            self.visits[s.row, s.col] += 1
        win = transitions[-1].env_reward > 0
        env_r = sum(tr.env_reward for tr in transitions)
        self.logs.append(EpisodeLog(len(transitions), env_r, lang, intrinsic, win))
        if win:
            self.wins += 1
            self.routes.append((len(self.logs), classify_route(transitions, self.env, self.instruction)))
            self.last_win = list(transitions)

    def outcome(self) -> TrainingOutcome:
        return TrainingOutcome(self.logs, self.visits, self.routes, self.last_win)


@dataclass(frozen=True)
class LrsSettings:
    """Reward magnitudes for the rule engines and the potential scale."""

    r_full: float = 1.0
    r_partial: float = 0.5
    potential_alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.r_partial < self.r_full:
            raise ValueError("r_partial must lie in [0, r_full)")
        if self.potential_alpha <= 0:
            raise ValueError("potential_alpha must be positive")


def _make_lrs(instruction, mode, gamma_lang, settings: LrsSettings):
    if mode == "off":
        return None
    if instruction is None:
        raise ValueError(f"LRS mode {mode!r} needs an instruction")
    variant = Rule.FULLY_MATCHED if mode == "potential_shaping" else Rule(mode)
    return LanguageReward(
        instruction,
        mode,
        rule=RewardRule(variant, settings.r_full, settings.r_partial),
        potential_config=PotentialConfig(alpha=settings.potential_alpha, gamma=gamma_lang),
    )


def train_ppo(
    make_env: Callable[[], Environment],
    config: PpoConfig,
    *,
    seed: int,
    episodes: int,
    win_cap: int = 1500,
    novelty: bool = True,
    lrs_mode: str = "off",
    instruction: Instruction | None = None,
    route_instruction: Instruction | None = None,
    lrs_settings: LrsSettings = LrsSettings(),
) -> TrainingOutcome:
    """Train a tabular PPO agent until ``episodes`` finish or ``win_cap`` wins.

    ``route_instruction`` labels winning routes (defaults to ``instruction``);
    it lets a degraded instruction drive the reward while routes are still
    judged against the full one.
    """
    if lrs_mode not in LRS_MODES:
        raise ValueError(f"unknown LRS mode {lrs_mode!r}")
    rng = np.random.default_rng(seed)
    envs = [make_env() for _ in range(config.n_envs)]
    env0 = envs[0]
    learner = PpoLearner(env0.n_states, config)
    params = learner.params
    counter = NoveltyCounter(env0.n_states) if novelty else None
    lrs = [_make_lrs(instruction, lrs_mode, config.gamma_lang, lrs_settings) for _ in envs]
    clip_lang = lrs_mode != "potential_shaping"
    rec = _Recorder(env0, route_instruction or instruction, episodes, win_cap)

    def new_seed() -> int:
        return int(rng.integers(0, 2**31 - 1))

    states: list[State] = [e.reset(new_seed()) for e in envs]
    histories: list[list[Transition]] = [[] for _ in envs]
    ep_lang = [0.0] * len(envs)
    ep_int = [0.0] * len(envs)
    L, n = config.rollout_length, config.n_envs
    buf_s = np.zeros((L, n), dtype=np.int64)
    buf_a = np.zeros((L, n), dtype=np.int64)
    buf_logp = np.zeros((L, n))
    buf_rext = np.zeros((L, n))
    buf_rint = np.zeros((L, n))
    buf_done = np.zeros((L, n), dtype=bool)

    while not rec.finished:
        for t in range(L):
            idx = np.fromiter((e.state_index(s) for e, s in zip(envs, states)), dtype=np.int64, count=n)
            probs = softmax(params.theta[idx])
            u = rng.random(n)
            acts = np.minimum((probs.cumsum(axis=1) < u[:, None]).sum(axis=1), probs.shape[1] - 1)
            buf_s[t] = idx
            buf_a[t] = acts
            buf_logp[t] = np.log(probs[np.arange(n), acts])
            for i, env in enumerate(envs):
                tr = env.step(states[i], Action(int(acts[i])))
                histories[i].append(tr)
                lang = lrs[i].step(tr) if lrs[i] is not None else 0.0
                if clip_lang:
                    lang = min(max(lang, 0.0), 1.0)
                intr = counter.bonus(env.state_index(tr.next_state)) if counter is not None else 0.0
                buf_rext[t, i] = min(max(tr.env_reward, 0.0), 1.0) + lang
                buf_rint[t, i] = intr
                ep_lang[i] += lang
                ep_int[i] += intr
                ended = tr.done or len(histories[i]) >= env.max_steps
                buf_done[t, i] = ended
                if ended:
                    rec.close(histories[i], ep_lang[i], ep_int[i])
                    histories[i] = []
                    ep_lang[i] = ep_int[i] = 0.0
                    if lrs[i] is not None:
                        lrs[i].reset()
                    states[i] = env.reset(new_seed())
                else:
                    states[i] = tr.next_state
            if rec.finished:
                break
        if rec.finished:
            break
        last = np.fromiter((e.state_index(s) for e, s in zip(envs, states)), dtype=np.int64, count=n)
        v_ext = params.v_ext[buf_s]
        v_int = params.v_int[buf_s]
        a_ext = gae_advantages(buf_rext, v_ext, buf_done, config.gamma_env, config.gae_lambda, params.v_ext[last])
        a_int = gae_advantages(buf_rint, v_int, np.zeros_like(buf_done), config.gamma_int, config.gae_lambda, params.v_int[last])
        adv = normalize(config.ext_coef * a_ext + config.int_coef * a_int)
        batch = Batch(
            buf_s.ravel(),
            buf_a.ravel(),
            buf_logp.ravel(),
            adv.ravel(),
            (a_ext + v_ext).ravel(),
            (a_int + v_int).ravel(),
        )
        learner.update(batch, rng)
    return rec.outcome()


def train_actor_critic(
    make_env: Callable[[], Environment],
    *,
    seed: int,
    episodes: int,
    win_cap: int = 1500,
    gamma: float = 0.99,
    alpha_theta: float = 0.1,
    alpha_phi: float = 0.1,
    lrs_mode: str = "off",
    instruction: Instruction | None = None,
    route_instruction: Instruction | None = None,
    lrs_settings: LrsSettings = LrsSettings(),
) -> TrainingOutcome:
    """Episodic Monte Carlo actor-critic on a single environment."""
    if lrs_mode not in LRS_MODES:
        raise ValueError(f"unknown LRS mode {lrs_mode!r}")
    rng = np.random.default_rng(seed)
    env = make_env()
    theta = np.zeros((env.n_states, len(Action)))
    q = np.zeros_like(theta)
    lrs = _make_lrs(instruction, lrs_mode, gamma, lrs_settings)
    clip_lang = lrs_mode != "potential_shaping"
    rec = _Recorder(env, route_instruction or instruction, episodes, win_cap)
    while not rec.finished:
        s = env.reset(int(rng.integers(0, 2**31 - 1)))
        if lrs is not None:
            lrs.reset()
        history: list[Transition] = []
        rewards, idx, acts = [], [], []
        lang_total = 0.0
        while True:
            i = env.state_index(s)
            p = softmax(theta[i])
            a = int(min(np.searchsorted(p.cumsum(), rng.random(), side="right"), len(p) - 1))
            tr = env.step(s, Action(a))
            history.append(tr)
            lang = lrs.step(tr) if lrs is not None else 0.0
            if clip_lang:
                lang = min(max(lang, 0.0), 1.0)
            lang_total += lang
            rewards.append(tr.env_reward + lang)
            idx.append(i)
            acts.append(a)
            s = tr.next_state
            if tr.done or len(history) >= env.max_steps:
                break
        rec.close(history, lang_total, 0.0)
        theta, q = actor_critic_update(idx, acts, discounted_returns(rewards, gamma), theta, q, alpha_theta, alpha_phi)
    return rec.outcome()
