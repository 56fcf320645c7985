"""Learning-efficiency metrics, rank tests and movement heatmaps.

AUC here is the area under the cumulative-wins curve, with the cumulative
count capped at the win cap ``W`` and the sum divided by ``T * W``, so a
learner that wins every episode from the first one scores 1.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mdp import SOLID, RoomSpec, State, Trajectory

RECORD_FIELDS = ("episode", "steps", "env_r", "lang_r", "int_r", "win")
EXACT_LIMIT = 12


# -- run records -----------------------------------------------------------

@dataclass(frozen=True)
class EpisodeRow:
    episode: int
    steps: int
    env_r: float
    lang_r: float
    int_r: float
    win: int


@dataclass
class RunRecord:
    rows: list[EpisodeRow]
    seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        for i, row in enumerate(self.rows, start=1):
            if row.episode != i:
                raise ValueError(f"episode indices must run 1..n; row {i} has {row.episode}")
            if row.win not in (0, 1):
                raise ValueError("win flag must be 0 or 1")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def wins(self) -> np.ndarray:
        return np.array([r.win for r in self.rows], dtype=np.int64)

    @classmethod
    def from_logs(cls, logs, seed: int = 0, config_hash: str = "") -> "RunRecord":
        rows = [EpisodeRow(i, int(e.steps), float(e.env_r), float(e.lang_r), float(e.int_r), int(bool(e.win))) for i, e in enumerate(logs, start=1)]
        return cls(rows, seed, config_hash)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in self.rows:
            w.writerow([r.episode, r.steps, repr(r.env_r), repr(r.lang_r), repr(r.int_r), r.win])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read(cls, path: str | Path, seed: int = 0, config_hash: str = "") -> "RunRecord":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
                raise ValueError(f"{path}: expected header {','.join(RECORD_FIELDS)}")
            rows = [
                EpisodeRow(int(d["episode"]), int(d["steps"]), float(d["env_r"]), float(d["lang_r"]), float(d["int_r"]), int(d["win"]))
                for d in reader
            ]
        return cls(rows, seed, config_hash)


# -- AUC and success -------------------------------------------------------

def auc(run: RunRecord | Sequence[int], budget: int, win_cap: int = 1500) -> float:
    """``sum_i min(cumwins_i, W) / (T * W)`` over episodes ``1..T``.

    A record shorter than ``T`` (a run stopped at the win cap) holds its last
    cumulative count through episode ``T``; extra episodes beyond ``T`` are
    ignored.
    """
    wins = run.wins if isinstance(run, RunRecord) else np.asarray(run, dtype=np.int64)
    if len(wins) == 0:
        raise ValueError("empty run record")
    if budget < 1 or win_cap < 1:
        raise ValueError("budget and win cap must be >= 1")
    cum = np.minimum(np.cumsum(wins[:budget]), win_cap)
    if len(cum) < budget:
        cum = np.concatenate([cum, np.full(budget - len(cum), cum[-1])])
    return float(cum.sum()) / (budget * win_cap)


def success_rate(runs: Sequence[RunRecord | Sequence[int]]) -> float:
    """Fraction of runs with at least one win."""
    if not runs:
        raise ValueError("need at least one run")
    won = [bool((r.wins if isinstance(r, RunRecord) else np.asarray(r)).any()) for r in runs]
    return sum(won) / len(won)


# -- Mann-Whitney U ----------------------------------------------------------

@dataclass(frozen=True)
class RankTest:
    """One-sided Mann-Whitney result for the alternative "a tends to be smaller"."""

    p_value: float
    u_statistic: float
    method: str
    degenerate: bool = False


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_lower_tail(doubled_ranks: Sequence[int], n_a: int, observed: int) -> float:
    """P(sum of ``n_a`` ranks drawn without replacement <= observed).

    Counts subsets by rank sum with a knapsack-style table, which stays exact
    when ties give repeated midranks.
    """
    total = sum(doubled_ranks)
    table = np.zeros((n_a + 1, total + 1), dtype=object)
    table[0, 0] = 1
    for r in doubled_ranks:
        for k in range(n_a, 0, -1):
            table[k, r:] = table[k, r:] + table[k - 1, : total + 1 - r]
    counts = table[n_a]
    return float(sum(counts[: observed + 1]) / sum(counts))


def significance(sample_a: Sequence[float], sample_b: Sequence[float]) -> RankTest:
    """One-sided Mann-Whitney U test of "a < b".

    Exact (tie-aware permutation distribution of the rank sum) when both
    samples have at most 12 values, otherwise the normal approximation with
    tie-corrected variance and a continuity correction.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 3 or len(b) < 3:
        raise ValueError("each sample needs at least 3 values")
    n, m = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    rank_sum = float(ranks[:n].sum())
    u = rank_sum - n * (n + 1) / 2.0
    if np.all(pooled == pooled[0]):
        return RankTest(1.0, u, "degenerate", True)
    if n <= EXACT_LIMIT and m <= EXACT_LIMIT:
        doubled = [int(round(2 * r)) for r in ranks]
        p = _exact_lower_tail(doubled, n, int(round(2 * rank_sum)))
        return RankTest(min(p, 1.0), u, "exact")
    big_n = n + m
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float((counts**3 - counts).sum()) / (big_n * (big_n - 1))
    var = n * m / 12.0 * ((big_n + 1) - tie_term)
    z = (u - n * m / 2.0 + 0.5) / math.sqrt(var)
    return RankTest(0.5 * math.erfc(-z / math.sqrt(2.0)), u, "normal")


# -- heatmaps ----------------------------------------------------------------

class RoomMismatch(ValueError):
    pass


@dataclass
class Heatmap:
    counts: np.ndarray
    start: tuple[int, int] = (0, 0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "Heatmap") -> "Heatmap":
        if self.counts.shape != other.counts.shape:
            raise RoomMismatch("heatmaps come from rooms of different shape")
        return Heatmap(self.counts + other.counts, self.start)

    def to_csv(self) -> str:
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.counts) + "\n"

    def to_pgm(self) -> bytes:
        """Plain-text graymap; brighter cells were visited more (log scale)."""
        h, w = self.counts.shape
        scaled = np.log1p(self.counts.astype(float))
        top = scaled.max()
        grey = np.zeros_like(scaled, dtype=int) if top == 0 else np.rint(255 * scaled / top).astype(int)
        lines = ["P2", f"{w} {h}", "255"] + [" ".join(str(v) for v in row) for row in grey]
        return ("\n".join(lines) + "\n").encode("ascii")

    @classmethod
    def read_csv(cls, path: str | Path, start: tuple[int, int] = (0, 0)) -> "Heatmap":
        rows = [[int(v) for v in line.split(",")] for line in Path(path).read_text().splitlines() if line.strip()]
        return cls(np.array(rows, dtype=np.int64), start)


def _start_cell(room: RoomSpec) -> tuple[int, int]:
    return room.find("S")[0]


def heatmap(trajectories: Iterable[Trajectory | Sequence], room: RoomSpec) -> Heatmap:
    """Visit counts: each trajectory's initial state once plus every next state."""
    counts = np.zeros((room.height, room.width), dtype=np.int64)
    for traj in trajectories:
        transitions = traj.transitions if isinstance(traj, Trajectory) else list(traj)
        if not transitions:
            continue
        cells: list[State] = [transitions[0].state] + [t.next_state for t in transitions]
        for s in cells:
            if not (0 <= s.row < room.height and 0 <= s.col < room.width) or room.tiles[s.row][s.col] in SOLID:
                raise RoomMismatch(f"cell ({s.row}, {s.col}) is not an open cell of room {room.name}")
            counts[s.row, s.col] += 1
    return Heatmap(counts, _start_cell(room))


def mean_distance_from_start(hm: Heatmap) -> float:
    """Visit-weighted mean Manhattan distance of visited cells from the start."""
    if hm.total == 0:
        return 0.0
    rows, cols = np.indices(hm.counts.shape)
    dist = np.abs(rows - hm.start[0]) + np.abs(cols - hm.start[1])
    return float((dist * hm.counts).sum() / hm.total)


# -- summaries ---------------------------------------------------------------

@dataclass
class ConditionSummary:
    aucs: list[float]
    success: float
    seeds: list[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def std(self) -> float:
        return float(np.std(self.aucs, ddof=1)) if len(self.aucs) > 1 else 0.0


def summarize(records: Sequence[RunRecord], budget: int, win_cap: int) -> ConditionSummary:
    return ConditionSummary([auc(r, budget, win_cap) for r in records], success_rate(records), [r.seed for r in records])
