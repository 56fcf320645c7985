"""Experiment configuration, orchestration across seeds, and result files.

A run directory holds::

    config.ini            every setting the run consumed, plus its hash
    summary.ini           AUC mean/std, success rate, provenance
    auc.csv               per-seed AUC, win count and first win
    heatmap.csv/.pgm      visit counts summed over seeds
    seed_<n>/record.csv   one row per episode
    seed_<n>/routes.csv   route label of every winning episode
    seed_<n>/heatmap.csv  visit counts of that seed
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .agent import PpoConfig
from .instruction import Instruction, degrade_type1, degrade_type2, shipped_instruction
from .mdp import ROOM_IDS, build_room, shipped_room
from .metrics import (
    ConditionSummary,
    Heatmap,
    RunRecord,
    auc,
    mean_distance_from_start,
    significance,
    success_rate,
)
from .training import LRS_MODES, LrsSettings, TrainingOutcome, train_actor_critic, train_ppo

AGENTS = ("ppo", "ppo_novelty", "actor_critic")
OUTPUT_ROOT_ENV = "LRSLAB_OUTPUT_ROOT"
_GRANULARITY = re.compile(r"^(full|type2|type1(?:\((\d+)\))?)$")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ActorCriticSettings:
    gamma: float = 0.99
    alpha_theta: float = 0.1
    alpha_phi: float = 0.1


@dataclass(frozen=True)
class RoomSettings:
    max_steps: int = 300
    sticky_prob: float = 0.0
    noop_starts: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    room: str = "A2"
    agent: str = "ppo_novelty"
    lrs: str = "off"
    granularity: str = "full"
    seeds: tuple[int, ...] = tuple(range(1, 11))
    episodes: int = 4000
    win_cap: int = 1500
    output: str = ""
    ppo: PpoConfig = field(default_factory=PpoConfig)
    actor_critic: ActorCriticSettings = ActorCriticSettings()
    reward: LrsSettings = LrsSettings()
    room_settings: RoomSettings = RoomSettings()

    def __post_init__(self):
        if self.room not in ROOM_IDS:
            raise ConfigError(f"unknown room {self.room!r}; choose from {', '.join(ROOM_IDS)}")
        if self.agent not in AGENTS:
            raise ConfigError(f"unknown agent {self.agent!r}; choose from {', '.join(AGENTS)}")
        if self.lrs not in LRS_MODES:
            raise ConfigError(f"unknown LRS mode {self.lrs!r}; choose from {', '.join(LRS_MODES)}")
        if not _GRANULARITY.match(self.granularity):
            raise ConfigError(f"granularity must be full, type1, type1(n) or type2, not {self.granularity!r}")
        if self.granularity != "full" and self.lrs == "off":
            raise ConfigError("a degraded instruction needs an LRS mode other than off")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be non-empty and distinct")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if self.episodes < 1 or self.win_cap < 1:
            raise ConfigError("episodes and win_cap must be >= 1")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw) if kw else self

    # -- persistence ----------------------------------------------------

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {
            "name": self.name,
            "room": self.room,
            "agent": self.agent,
            "lrs": self.lrs,
            "granularity": self.granularity,
            "seeds": ",".join(str(s) for s in self.seeds),
            "episodes": str(self.episodes),
            "win_cap": str(self.win_cap),
            "output": self.output,
        }
        cp["room"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in dataclasses.asdict(self.room_settings).items()}
        cp["ppo"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in dataclasses.asdict(self.ppo).items()}
        cp["actor_critic"] = {k: repr(v) for k, v in dataclasses.asdict(self.actor_critic).items()}
        cp["reward"] = {k: repr(v) for k, v in dataclasses.asdict(self.reward).items()}
        return cp

    def echo(self) -> str:
        buf = io.StringIO()
        self.to_parser().write(buf)
        return buf.getvalue()

    @property
    def config_hash(self) -> str:
        """Hash of every setting except the output directory."""
        cp = self.to_parser()
        cp["experiment"]["output"] = ""
        buf = io.StringIO()
        cp.write(buf)
        return hashlib.sha256(buf.getvalue().encode()).hexdigest()[:16]


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"1-10"``, ``"1,2,5"`` or a mix such as ``"1-3,7"``."""
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        lo, dash, hi = part.partition("-")
        try:
            out.extend(range(int(lo), int(hi) + 1) if dash else [int(lo)])
        except ValueError:
            raise ConfigError(f"bad seed list {text!r}") from None
    return tuple(out)


def _typed(section: configparser.SectionProxy | None, where: str, base):
    """Copy of ``base`` with the section's keys parsed to the fields' types."""
    if section is None:
        return base
    names = {f.name for f in dataclasses.fields(base)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"[{where}] has unknown keys: {', '.join(sorted(unknown))}")
    kw = {}
    for k, raw in section.items():
        kind = type(getattr(base, k))
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"[{where}] {k} = {raw!r} is not a number") from None
        if kind is int:
            if value != int(value):
                raise ConfigError(f"[{where}] {k} must be an integer")
            value = int(value)
        kw[k] = value
    try:
        return dataclasses.replace(base, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_config(text: str, name: str = "experiment") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if "experiment" not in cp:
        raise ConfigError("config needs an [experiment] section")
    known = {"experiment", "room", "ppo", "actor_critic", "reward"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    ex = cp["experiment"]
    allowed = {"name", "room", "agent", "lrs", "granularity", "seeds", "episodes", "win_cap", "output"}
    unknown = set(ex) - allowed
    if unknown:
        raise ConfigError(f"[experiment] has unknown keys: {', '.join(sorted(unknown))}")
    try:
        episodes = int(ex.get("episodes", "4000"))
        win_cap = int(ex.get("win_cap", "1500"))
    except ValueError:
        raise ConfigError("episodes and win_cap must be integers") from None
    room = ex.get("room", "A2")
    room_defaults = RoomSettings()
    if room in ROOM_IDS:
        spec = shipped_room(room)
        room_defaults = RoomSettings(spec.max_steps, spec.sticky_prob, spec.noop_starts)
    return ExperimentConfig(
        name=ex.get("name", name),
        room=room,
        agent=ex.get("agent", "ppo_novelty"),
        lrs=ex.get("lrs", "off"),
        granularity=ex.get("granularity", "full"),
        seeds=parse_seeds(ex.get("seeds", "1-10")),
        episodes=episodes,
        win_cap=win_cap,
        output=ex.get("output", ""),
        ppo=_typed(cp["ppo"] if "ppo" in cp else None, "ppo", PpoConfig()),
        actor_critic=_typed(cp["actor_critic"] if "actor_critic" in cp else None, "actor_critic", ActorCriticSettings()),
        reward=_typed(cp["reward"] if "reward" in cp else None, "reward", LrsSettings()),
        room_settings=_typed(cp["room"] if "room" in cp else None, "room", room_defaults),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), name=path.stem)


def output_dir(config: ExperimentConfig, out: str | Path | None = None) -> Path:
    """``--out`` wins, then the config's ``output``, then the environment root."""
    if out:
        return Path(out)
    if config.output:
        return Path(config.output)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / config.name


# -- running -------------------------------------------------------------------

def resolve_instruction(config: ExperimentConfig) -> tuple[Instruction | None, Instruction]:
    """(instruction driving the reward, full instruction used to label routes)."""
    full = shipped_instruction(config.room)
    if config.lrs == "off":
        return None, full
    m = _GRANULARITY.match(config.granularity)
    if config.granularity == "full":
        return full, full
    if config.granularity == "type2":
        return degrade_type2(full), full
    stride = int(m.group(2)) if m.group(2) else 2
    return degrade_type1(full, stride), full


def train_seed(config: ExperimentConfig, seed: int) -> TrainingOutcome:
    rs = config.room_settings
    spec = shipped_room(config.room, max_steps=rs.max_steps, sticky_prob=rs.sticky_prob, noop_starts=rs.noop_starts)
    instruction, full = resolve_instruction(config)

    def make_env():
        return build_room(spec)

    if config.agent == "actor_critic":
        ac = config.actor_critic
        return train_actor_critic(
            make_env,
            seed=seed,
            episodes=config.episodes,
            win_cap=config.win_cap,
            gamma=ac.gamma,
            alpha_theta=ac.alpha_theta,
            alpha_phi=ac.alpha_phi,
            lrs_mode=config.lrs,
            instruction=instruction,
            route_instruction=full,
            lrs_settings=config.reward,
        )
    return train_ppo(
        make_env,
        config.ppo,
        seed=seed,
        episodes=config.episodes,
        win_cap=config.win_cap,
        novelty=config.agent == "ppo_novelty",
        lrs_mode=config.lrs,
        instruction=instruction,
        route_instruction=full,
        lrs_settings=config.reward,
    )


@dataclass
class SeedResult:
    seed: int
    record: RunRecord
    heatmap: Heatmap
    routes: list[tuple[int, str]]

    @property
    def first_win(self) -> int:
        wins = self.record.wins
        return int(np.argmax(wins)) + 1 if wins.any() else 0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    directory: Path
    seeds: list[SeedResult]

    @property
    def records(self) -> list[RunRecord]:
        return [s.record for s in self.seeds]

    @property
    def aucs(self) -> list[float]:
        return [auc(r, self.config.episodes, self.config.win_cap) for r in self.records]

    @property
    def summary(self) -> ConditionSummary:
        return ConditionSummary(self.aucs, success_rate(self.records), [s.seed for s in self.seeds])

    @property
    def heatmap(self) -> Heatmap:
        total = self.seeds[0].heatmap
        for s in self.seeds[1:]:
            total = total + s.heatmap
        return total

    @property
    def route_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for s in self.seeds:
            for _, r in s.routes:
                out[r] = out.get(r, 0) + 1
        return out


def _seed_dir(root: Path, seed: int) -> Path:
    return root / f"seed_{seed:02d}"


def _write_seed(root: Path, result: SeedResult) -> None:
    d = _seed_dir(root, result.seed)
    d.mkdir(parents=True, exist_ok=True)
    result.record.write(d / "record.csv")
    (d / "heatmap.csv").write_text(result.heatmap.to_csv())
    with open(d / "routes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "route"])
        w.writerows(result.routes)


def run_seed(config: ExperimentConfig, seed: int) -> SeedResult:
    outcome = train_seed(config, seed)
    start = shipped_room(config.room).find("S")[0]
    record = RunRecord.from_logs(outcome.episodes, seed, config.config_hash)
    return SeedResult(seed, record, Heatmap(outcome.visits.copy(), start), list(outcome.routes))


def run_experiment(config: ExperimentConfig, out: str | Path | None = None, progress=None) -> ExperimentResult:
    """Train every seed, writing per-seed files as each one finishes."""
    root = output_dir(config, out)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.ini").write_text(f"# config_hash = {config.config_hash}\n" + config.echo())
    except OSError as exc:
        raise ConfigError(f"cannot write to output directory {root}: {exc}") from None
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    seeds = []
    for seed in config.seeds:
        res = run_seed(config, seed)
        _write_seed(root, res)
        seeds.append(res)
        if progress is not None:
            progress(res)
    result = ExperimentResult(config, root, seeds)
    _write_summary(result, started)
    return result


def _write_summary(result: ExperimentResult, started: str) -> None:
    root, cfg = result.directory, result.config
    with open(root / "auc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "auc", "wins", "first_win", "episodes"])
        for s, a in zip(result.seeds, result.aucs):
            w.writerow([s.seed, repr(a), int(s.record.wins.sum()), s.first_win, len(s.record)])
    hm = result.heatmap
    (root / "heatmap.csv").write_text(hm.to_csv())
    (root / "heatmap.pgm").write_bytes(hm.to_pgm())
    summ = result.summary
    cp = configparser.ConfigParser(interpolation=None)
    cp["summary"] = {
        "name": cfg.name,
        "room": cfg.room,
        "agent": cfg.agent,
        "lrs": cfg.lrs,
        "granularity": cfg.granularity,
        "episodes": str(cfg.episodes),
        "win_cap": str(cfg.win_cap),
        "seeds": ",".join(str(s) for s in summ.seeds),
        "mean_auc": repr(summ.mean),
        "std_auc": repr(summ.std),
        "success_rate": repr(summ.success),
        "mean_distance_from_start": repr(mean_distance_from_start(hm)),
        "routes": ",".join(f"{k}:{v}" for k, v in sorted(result.route_counts.items())),
    }
    cp["provenance"] = {
        "config_hash": cfg.config_hash,
        "code_version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(root / "summary.ini", "w") as fh:
        cp.write(fh)


def load_result(directory: str | Path) -> ExperimentResult:
    """Rebuild a result from the files of a finished run directory."""
    root = Path(directory)
    if not (root / "config.ini").exists():
        raise ConfigError(f"{root} is not a run directory (no config.ini)")
    cfg = load_config(root / "config.ini")
    start = shipped_room(cfg.room).find("S")[0]
    seeds = []
    for seed in cfg.seeds:
        d = _seed_dir(root, seed)
        if not (d / "record.csv").exists():
            raise ConfigError(f"missing record for seed {seed} in {root}")
        record = RunRecord.read(d / "record.csv", seed, cfg.config_hash)
        hm = Heatmap.read_csv(d / "heatmap.csv", start)
        with open(d / "routes.csv", newline="") as fh:
            routes = [(int(row["episode"]), row["route"]) for row in csv.DictReader(fh)]
        seeds.append(SeedResult(seed, record, hm, routes))
    return ExperimentResult(cfg, root, seeds)


# -- comparison ------------------------------------------------------------------

@dataclass
class Comparison:
    name_a: str
    name_b: str
    a: ConditionSummary
    b: ConditionSummary
    p_a_less: float
    p_b_less: float

    def text(self) -> str:
        lines = [
            f"{'condition':<24} {'AUC mean':>9} {'std':>7} {'SR':>6}",
            f"{self.name_a:<24} {self.a.mean:9.4f} {self.a.std:7.4f} {self.a.success:6.0%}",
            f"{self.name_b:<24} {self.b.mean:9.4f} {self.b.std:7.4f} {self.b.success:6.0%}",
            f"one-sided Mann-Whitney p({self.name_a} < {self.name_b}) = {self.p_a_less:.4g}",
            f"one-sided Mann-Whitney p({self.name_b} < {self.name_a}) = {self.p_b_less:.4g}",
        ]
        return "\n".join(lines)


def compare(result_a: ExperimentResult, result_b: ExperimentResult) -> Comparison:
    ca, cb = result_a.config, result_b.config
    if ca.room != cb.room:
        raise ConfigError(f"cannot compare rooms {ca.room} and {cb.room}")
    if (ca.episodes, ca.win_cap) != (cb.episodes, cb.win_cap):
        raise ConfigError("cannot compare runs with different episode budgets or win caps")
    sa, sb = result_a.summary, result_b.summary
    p_ab = significance(sa.aucs, sb.aucs).p_value
    p_ba = significance(sb.aucs, sa.aucs).p_value
    return Comparison(ca.name, cb.name, sa, sb, p_ab, p_ba)


# -- granularity sweep -------------------------------------------------------------

GRANULARITY_VARIANTS = ("full", "type1(2)", "type2")


@dataclass
class GranularityRow:
    variant: str
    summary: ConditionSummary
    p_lower_than_full: float


def sweep_granularity(config: ExperimentConfig, out: str | Path | None = None, progress=None) -> list[GranularityRow]:
    """Run the full, Type-1 and Type-2 instructions and compare each with full."""
    if config.lrs == "off":
        raise ConfigError("the granularity sweep needs an LRS mode")
    root = output_dir(config, out)
    results: dict[str, ExperimentResult] = {}
    for variant in GRANULARITY_VARIANTS:
        tag = variant.replace("(", "").replace(")", "")
        cfg = dataclasses.replace(config, granularity=variant, name=f"{config.name}-{tag}", output="")
        results[variant] = run_experiment(cfg, root / tag, progress)
    full = results["full"].summary
    rows = []
    for variant, res in results.items():
        p = 1.0 if variant == "full" else significance(res.summary.aucs, full.aucs).p_value
        rows.append(GranularityRow(variant, res.summary, p))
    with open(root / "granularity.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "auc"])
        for row in rows:
            for seed, a in zip(row.summary.seeds, row.summary.aucs):
                w.writerow([row.variant, seed, repr(a)])
    with open(root / "granularity_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "mean_auc", "std_auc", "success_rate", "p_lower_than_full"])
        for row in rows:
            w.writerow([row.variant, repr(row.summary.mean), repr(row.summary.std), repr(row.summary.success), repr(row.p_lower_than_full)])
    return rows


# -- theory report ---------------------------------------------------------------

@dataclass
class TheoryCheck:
    name: str
    passed: bool
    detail: str


def verify_theory(seed: int = 0, n_random: int = 20, n_episodes: int = 500) -> tuple[list[TheoryCheck], str]:
    """Run the telescoping, invariance, decomposition and sweep checks.

    Returns the pass/fail lines and the sweep table as CSV text.
    """
    from . import theory

    rng = np.random.default_rng(seed)
    checks = []

    worst = 0.0
    for _ in range(n_episodes):
        length = int(rng.integers(1, 300))
        alpha = float(rng.uniform(0.1, 3.0))
        gamma = float(rng.uniform(0.8, 1.0))
        counts = np.cumsum(rng.random(length) < 0.05)
        worst = max(worst, theory.telescoping_residual(list(alpha * counts), gamma))
    checks.append(TheoryCheck("telescoping", worst < 1e-10, f"max residual {worst:.2e} over {n_episodes} episodes"))

    ok, worst_tel = 0, 0.0
    for _ in range(n_random):
        mdp = theory.random_mdp(rng)
        rep = theory.check_policy_invariance(mdp, theory.random_subgoal_potential(rng, mdp.n_states))
        ok += rep.ok
        worst_tel = max(worst_tel, rep.max_telescoping_residual)
    checks.append(TheoryCheck("policy invariance", ok == n_random, f"{ok}/{n_random} random MDPs keep their greedy policy (telescoping residual {worst_tel:.1e})"))

    chain = theory.enumerate_policies(theory.chain_mdp(4), theory.visits_marked(2))
    table = theory.ReturnTable.from_partition(chain, 1.0, 0.5)
    rep = theory.gradient_decomposition_check(table, rng.normal(size=len(chain)))
    checks.append(
        TheoryCheck(
            "gradient decomposition",
            rep.residual < 1e-8 and rep.fd_relative_error < 1e-4,
            f"residual {rep.residual:.1e}, finite-difference relative error {rep.fd_relative_error:.1e}, "
            f"gap to the fixed-const form {rep.simplified_gap:.3f}",
        )
    )

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["testbed", "magnitude", "iterations", "censored", "final_p_goal"])
    monotone = True
    for partition, name in theory.testbeds():
        rows = theory.convergence_rate_sweep(partition, [0.0, 0.25, 0.5, 1.0], cap=20_000)
        its = [r.iterations for r in rows[:3]]
        monotone &= all(x <= y for x, y in zip(its, its[1:])) and not any(r.censored for r in rows[:3])
        for r in rows:
            w.writerow([name, r.magnitude, r.iterations, int(r.censored), f"{r.final_p_goal:.6f}"])
    checks.append(TheoryCheck("convergence slowdown", monotone, "iterations to P(goal) >= 0.9 non-decreasing over magnitudes 0, 0.25, 0.5"))
    return checks, buf.getvalue()
