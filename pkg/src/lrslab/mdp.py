"""Side-view grid rooms with sparse goal reward.

A room is a rectangular tile map seen from the side. The agent occupies one
cell; gravity applies whenever the cell below offers no support. Tile legend:

    #   wall / floor (solid)
    .   empty space
    S   start cell (empty space)
    H   ladder
    R   rope
    >   conveyor belt drifting right (solid, like a floor)
    <   conveyor belt drifting left
    X   hazard (entering it kills)
    K   key (empty space holding the key)
    D   door; entering it with the key is the goal
    c   cliff edge (empty space); a sideways jump started here survives
        the long fall below it

Falls of more than one row kill the agent unless the fall began with a jump
from a cliff edge. If a room has no key, the door opens without one.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterator, Sequence


class RoomError(ValueError):
    """Raised for malformed room layouts."""


class TerminalStateError(RuntimeError):
    """Raised when stepping from a goal or death state."""


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    UP = 2
    DOWN = 3
    JUMP = 4
    JUMP_LEFT = 5
    JUMP_RIGHT = 6
    NOOP = 7

    @property
    def label(self) -> str:
        return _ACTION_LABELS[self]

    @classmethod
    def from_name(cls, name: str) -> "Action":
        key = name.strip().replace("_", "").replace("-", "").lower()
        for action, label in _ACTION_LABELS.items():
            if label.lower() == key:
                return action
        raise KeyError(f"unknown action {name!r}")


_ACTION_LABELS = {
    Action.LEFT: "Left",
    Action.RIGHT: "Right",
    Action.UP: "Up",
    Action.DOWN: "Down",
    Action.JUMP: "Jump",
    Action.JUMP_LEFT: "JumpLeft",
    Action.JUMP_RIGHT: "JumpRight",
    Action.NOOP: "NoOp",
}

N_ACTIONS = len(Action)

WALL, EMPTY, START, LADDER, ROPE = "#", ".", "S", "H", "R"
CONVEYOR_RIGHT, CONVEYOR_LEFT = ">", "<"
HAZARD, KEY, DOOR, CLIFF = "X", "K", "D", "c"

TILES = frozenset("#.SHR><XKDc")
SOLID = frozenset("#><")
MAX_SAFE_FALL = 1


@dataclass(frozen=True)
class State:
    row: int
    col: int
    has_key: bool = False
    on_ladder: bool = False
    on_rope: bool = False
    on_conveyor: bool = False
    alive: bool = True

    @property
    def pos(self) -> tuple[int, int]:
        return (self.row, self.col)


STATE_FIELDS = ("row", "col", "has_key", "on_ladder", "on_rope", "on_conveyor", "alive")


@dataclass(frozen=True)
class Transition:
    state: State
    action: Action
    next_state: State
    env_reward: float
    done: bool
    death: bool


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple[Transition, ...] = ()

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]

    @property
    def actions(self) -> list[Action]:
        return [t.action for t in self.transitions]

    def states(self) -> list[State]:
        """Visited states: the initial state followed by every next_state."""
        if not self.transitions:
            return []
        return [self.transitions[0].state] + [t.next_state for t in self.transitions]

    @property
    def won(self) -> bool:
        return any(t.env_reward > 0 for t in self.transitions)

    @property
    def env_return(self) -> float:
        return sum(t.env_reward for t in self.transitions)


@dataclass(frozen=True)
class RoomSpec:
    """Tile map plus episode settings. See the module docstring for the legend."""

    tiles: tuple[str, ...]
    name: str = "room"
    max_steps: int = 300
    sticky_prob: float = 0.0
    noop_starts: int = 0

    @property
    def height(self) -> int:
        return len(self.tiles)

    @property
    def width(self) -> int:
        return len(self.tiles[0]) if self.tiles else 0

    def find(self, ch: str) -> list[tuple[int, int]]:
        return [(r, c) for r, line in enumerate(self.tiles) for c, t in enumerate(line) if t == ch]


def parse_room(text: str, name: str = "room", **overrides) -> RoomSpec:
    """Parse a plain-text room file.

    Lines starting with ``;`` are comments; ``; key = value`` comments set
    ``max_steps``, ``sticky_prob`` or ``noop_starts``.
    """
    options: dict = {}
    rows = []
    for raw in text.splitlines():
        line = raw.rstrip("\n")
        if line.startswith(";"):
            body = line[1:].strip()
            if "=" in body:
                k, v = (s.strip() for s in body.split("=", 1))
                if k in ("max_steps", "noop_starts"):
                    options[k] = int(v)
                elif k == "sticky_prob":
                    options[k] = float(v)
                elif k == "name":
                    name = v
            continue
        if line.strip():
            rows.append(line.rstrip())
    options.update(overrides)
    return RoomSpec(tiles=tuple(rows), name=name, **options)


def load_room(path: str | Path, **overrides) -> RoomSpec:
    path = Path(path)
    return parse_room(path.read_text(), name=path.stem, **overrides)


class Environment:
    """Deterministic room dynamics with optional sticky actions.

    The environment owns a per-episode RNG (seeded by :meth:`reset`) used
    only for sticky actions and random no-op starts. One instance must not
    be stepped from two workers at once.
    """

    def __init__(self, spec: RoomSpec):
        _validate(spec)
        self.spec = spec
        self.tiles = spec.tiles
        self.height = spec.height
        self.width = spec.width
        self.start = spec.find(START)[0]
        self.door = spec.find(DOOR)[0]
        keys = spec.find(KEY)
        self.key = keys[0] if keys else None
        self.max_steps = spec.max_steps
        self.rng = random.Random(0)
        self._last_action = Action.NOOP

    # -- geometry ---------------------------------------------------------
    def tile(self, r: int, c: int) -> str:
        if 0 <= r < self.height and 0 <= c < self.width:
            return self.tiles[r][c]
        return WALL

    def _solid(self, r: int, c: int) -> bool:
        return self.tile(r, c) in SOLID

    def _supported(self, r: int, c: int) -> bool:
        below = self.tile(r + 1, c)
        return below in SOLID or below == LADDER

    @property
    def n_states(self) -> int:
        return self.height * self.width * 2

    def state_index(self, s: State) -> int:
        return (s.row * self.width + s.col) * 2 + int(s.has_key)

    def initial_state(self) -> State:
        return self._settle(self.start[0], self.start[1], False, True)

    def is_goal(self, s: State) -> bool:
        return s.pos == self.door

    def is_terminal(self, s: State) -> bool:
        return (not s.alive) or self.is_goal(s)

    # -- episode API ------------------------------------------------------
    def reset(self, seed: int) -> State:
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.rng = random.Random(seed)
        self._last_action = Action.NOOP
        s = self.initial_state()
        if self.spec.noop_starts > 0:
            for _ in range(self.rng.randint(0, self.spec.noop_starts)):
                s = self._dynamics(s, Action.NOOP)
        return s

    def step(self, state: State, action: Action) -> Transition:
        if self.is_terminal(state):
            raise TerminalStateError(f"cannot step terminal state {state}")
        action = Action(action)
        if self.spec.sticky_prob > 0 and self.rng.random() < self.spec.sticky_prob:
            action_taken = self._last_action
        else:
            action_taken = action
        self._last_action = action_taken
        nxt = self._dynamics(state, action_taken)
        goal = nxt.alive and self.is_goal(nxt)
        death = not nxt.alive
        return Transition(state, action, nxt, 1.0 if goal else 0.0, goal or death, death)

    # -- physics ----------------------------------------------------------
    def _settle(self, r: int, c: int, has_key: bool, alive: bool) -> State:
        t = self.tile(r, c)
        on_conveyor = t not in (LADDER, ROPE) and self.tile(r + 1, c) in (CONVEYOR_LEFT, CONVEYOR_RIGHT)
        return State(r, c, has_key, t == LADDER, t == ROPE, alive and on_conveyor, alive)

    def _door_open(self, has_key: bool) -> bool:
        return has_key or self.key is None

    def _enter(self, r, c, has_key, jumped_from_cliff=False, dist=0):
        """Occupy (r, c), then fall if unsupported. Returns (r, c, has_key, alive).

        ``dist`` counts rows already dropped before reaching (r, c).
        """
        t = self.tile(r, c)
        if t == HAZARD:
            return r, c, has_key, False
        if t == KEY:
            has_key = True
        if t in (LADDER, ROPE, DOOR) or self._supported(r, c):
            return r, c, has_key, True
        while True:
            nr = r + 1
            nt = self.tile(nr, c)
            if nt in SOLID:
                break
            r, dist = nr, dist + 1
            if nt == HAZARD:
                return r, c, has_key, False
            if nt == KEY:
                has_key = True
            if nt in (LADDER, ROPE) or self._supported(r, c):
                break
        if dist > MAX_SAFE_FALL and not jumped_from_cliff:
            return r, c, has_key, False
        return r, c, has_key, True

    def _blocked(self, r, c, has_key) -> bool:
        t = self.tile(r, c)
        return t in SOLID or (t == DOOR and not self._door_open(has_key))

    def _dynamics(self, s: State, a: Action) -> State:
        r, c, key = s.row, s.col, s.has_key
        here = self.tile(r, c)
        alive = True
        if a in (Action.LEFT, Action.RIGHT):
            d = -1 if a == Action.LEFT else 1
            if not s.on_rope and not self._blocked(r, c + d, key):
                r, c, key, alive = self._enter(r, c + d, key)
        elif a == Action.UP:
            if (s.on_ladder or s.on_rope) and not self._solid(r - 1, c):
                above = self.tile(r - 1, c)
                if s.on_ladder or above == ROPE:
                    r, c, key, alive = self._enter(r - 1, c, key)
        elif a == Action.DOWN:
            below = self.tile(r + 1, c)
            if s.on_ladder or s.on_rope:
                if below not in SOLID:
                    dropped = 0 if below in (LADDER, ROPE) else 1
                    r, c, key, alive = self._enter(r + 1, c, key, dist=dropped)
            elif below == LADDER:
                r, c, key, alive = self._enter(r + 1, c, key)
        elif a in (Action.JUMP_LEFT, Action.JUMP_RIGHT):
            if not s.on_ladder:
                d = -1 if a == Action.JUMP_LEFT else 1
                if not self._blocked(r, c + d, key):
                    land = c + d if self._blocked(r, c + 2 * d, key) else c + 2 * d
                    r, c, key, alive = self._enter(r, land, key, jumped_from_cliff=here == CLIFF)
        # Jump and NoOp leave the position unchanged
        if alive and not (r, c) == self.door:
            r, c, key, alive = self._drift(r, c, key)
        return self._settle(r, c, key, alive)

    def _drift(self, r, c, key):
        t = self.tile(r, c)
        if t in (LADDER, ROPE):
            return r, c, key, True
        below = self.tile(r + 1, c)
        if below == CONVEYOR_RIGHT:
            d = 1
        elif below == CONVEYOR_LEFT:
            d = -1
        else:
            return r, c, key, True
        if self._blocked(r, c + d, key):
            return r, c, key, True
        return self._enter(r, c + d, key)


def _validate(spec: RoomSpec) -> None:
    if not spec.tiles:
        raise RoomError("empty tile map")
    width = len(spec.tiles[0])
    if any(len(line) != width for line in spec.tiles):
        raise RoomError("tile map rows must have equal length")
    bad = {ch for line in spec.tiles for ch in line} - TILES
    if bad:
        raise RoomError(f"unknown tile characters: {sorted(bad)}")
    for ch, label in ((START, "start"), (DOOR, "goal door")):
        n = len(spec.find(ch))
        if n != 1:
            raise RoomError(f"room must have exactly one {label}, found {n}")
    if len(spec.find(KEY)) > 1:
        raise RoomError("room may have at most one key")
    if any(ch not in SOLID for ch in spec.tiles[-1]):
        raise RoomError("bottom row must be solid")
    if spec.max_steps < 1:
        raise RoomError("max_steps must be >= 1")
    if not 0.0 <= spec.sticky_prob < 1.0:
        raise RoomError("sticky_prob must lie in [0, 1)")
    (sr, sc), = spec.find(START)
    below = spec.tiles[sr + 1][sc] if sr + 1 < spec.height else WALL
    if below not in SOLID and below != LADDER:
        raise RoomError("start cell must be supported")


def build_room(spec: RoomSpec) -> Environment:
    return Environment(spec)


Policy = Callable[[State], Action]


def rollout(env: Environment, policy: Policy, seed: int, max_steps: int | None = None) -> Trajectory:
    """Run ``policy`` from a fresh reset until done or ``max_steps``."""
    max_steps = env.max_steps if max_steps is None else max_steps
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    s = env.reset(seed)
    out = []
    for _ in range(max_steps):
        tr = env.step(s, policy(s))
        out.append(tr)
        s = tr.next_state
        if tr.done:
            break
    return Trajectory(tuple(out))


def scripted_policy(actions: Sequence[Action | str]) -> Policy:
    """Replay a fixed action list, then NoOp forever."""
    script = [a if isinstance(a, Action) else Action.from_name(a) for a in actions]
    it = iter(script)

    def policy(_state: State) -> Action:
        return next(it, Action.NOOP)

    return policy


def parse_script(text: str) -> list[Action]:
    """Parse ``"Right*3 Down JumpRight"`` style action scripts."""
    out: list[Action] = []
    for tok in text.split():
        name, _, count = tok.partition("*")
        out.extend([Action.from_name(name)] * (int(count) if count else 1))
    return out


DATA_DIR = Path(__file__).parent / "data"
ROOM_IDS = ("A1", "A2", "B3", "chain")


def room_path(room_id: str) -> Path:
    path = DATA_DIR / "rooms" / f"{room_id}.txt"
    if not path.exists():
        raise KeyError(f"unknown room {room_id!r}; shipped rooms: {ROOM_IDS}")
    return path


def shipped_room(room_id: str, **overrides) -> RoomSpec:
    return load_room(room_path(room_id), **overrides)


def room_script(room_id: str, name: str = "instructed") -> list[Action]:
    """Stored solution scripts, one ``name: actions`` entry per line."""
    path = DATA_DIR / "rooms" / f"{room_id}.scripts"
    for line in path.read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, body = line.partition(":")
            if key.strip() == name:
                return parse_script(body)
    raise KeyError(f"no script {name!r} for room {room_id}")
