"""Instructions as action, state and temporal constraints over trajectories.

An instruction is an ordered list of atomic sentences. Each sentence carries
an action constraint (actions that must occur), a state constraint
(predicates that must hold at some visited state) and a target segment: a
short contiguous pattern of (action, next-state predicate) steps whose
completion marks the sentence as done. The temporal constraint is an LTL
formula over the sentences' ``done_<id>`` propositions, by default their
execution order.

Binding files are INI documents::

    [instruction]
    name = A2
    ; optional, defaults to the sentence order
    temporal = F (done_ladder & F done_key)

    [propositions]
    fell = !alive

    [sentence.ladder]
    text = Climb down the ladder
    actions = Down
    states = on_ladder
    segment = Down -> row=4,col=4

Segment steps are separated by ``;``. Either side of ``->`` may be ``*``.
"""
from __future__ import annotations

import configparser
import enum
import operator
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .ltl import TRUE, And, Atom, Formula, Next, Not, TrueF, Until, atoms, compile_order, eval_ltl, parse_ltl, to_text
from .mdp import DATA_DIR, STATE_FIELDS, Action, State, Trajectory, Transition


class InstructionError(ValueError):
    pass


_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<=": operator.le,
    ">=": operator.ge,
    "<": operator.lt,
    ">": operator.gt,
}
_CLAUSE = re.compile(r"^\s*(!?)\s*([A-Za-z_]+)\s*(?:(<=|>=|!=|=|<|>)\s*(\S+))?\s*$")
_BOOL_FIELDS = {"has_key", "on_ladder", "on_rope", "on_conveyor", "alive"}


def _coerce(field_name: str, raw: str):
    if field_name in _BOOL_FIELDS:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise InstructionError(f"expected a boolean for {field_name}, got {raw!r}")
    try:
        return int(raw)
    except ValueError:
        raise InstructionError(f"expected an integer for {field_name}, got {raw!r}") from None


@dataclass(frozen=True)
class StatePredicate:
    """Conjunction of clauses over State fields, e.g. ``row=4,col>=9,on_rope``."""

    text: str
    clauses: tuple = field(compare=False, repr=False, default=())

    @classmethod
    def parse(cls, text: str) -> "StatePredicate":
        clauses = []
        for part in text.split(","):
            m = _CLAUSE.match(part)
            if not m:
                raise InstructionError(f"malformed predicate clause {part!r}")
            neg, name, op, raw = m.groups()
            if name not in STATE_FIELDS:
                raise InstructionError(f"predicate references unknown state field {name!r}")
            if op is None:
                if name not in _BOOL_FIELDS:
                    raise InstructionError(f"field {name!r} needs a comparison")
                clauses.append((name, operator.eq, not neg))
            else:
                if neg:
                    raise InstructionError(f"cannot negate a comparison: {part!r}")
                clauses.append((name, _OPS[op], _coerce(name, raw)))
        canon = ",".join(p.strip() for p in text.split(","))
        return cls(canon, tuple(clauses))

    def __call__(self, s: State) -> bool:
        for name, op, value in self.clauses:
            if not op(getattr(s, name), value):
                return False
        return True


@dataclass(frozen=True)
class SegmentStep:
    actions: frozenset | None = None
    predicate: StatePredicate | None = None

    def matches(self, tr: Transition) -> bool:
        if self.actions is not None and tr.action not in self.actions:
            return False
        return self.predicate is None or self.predicate(tr.next_state)

    def text(self) -> str:
        acts = "*" if self.actions is None else "|".join(a.label for a in sorted(self.actions))
        pred = "*" if self.predicate is None else self.predicate.text
        return f"{acts} -> {pred}"


def parse_segment(text: str) -> tuple[SegmentStep, ...]:
    steps = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        acts, sep, pred = chunk.partition("->")
        if not sep:
            raise InstructionError(f"segment step needs '->': {chunk!r}")
        acts, pred = acts.strip(), pred.strip()
        actions = None if acts in ("", "*") else frozenset(Action.from_name(a) for a in acts.split("|"))
        predicate = None if pred in ("", "*") else StatePredicate.parse(pred)
        steps.append(SegmentStep(actions, predicate))
    if not steps:
        raise InstructionError("empty segment pattern")
    return tuple(steps)


def segment_matches_at(segment: Sequence[SegmentStep], transitions: Sequence[Transition], t: int) -> bool:
    """Whether the segment's last step coincides with transition ``t``."""
    start = t - len(segment) + 1
    if start < 0:
        return False
    for k, step in enumerate(segment):
        if not step.matches(transitions[start + k]):
            return False
    return True


@dataclass(frozen=True)
class AtomicSentence:
    ident: str
    text: str
    actions: frozenset = frozenset()
    states: tuple[StatePredicate, ...] = ()
    segment: tuple[SegmentStep, ...] = ()

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z0-9_]+", self.ident):
            raise InstructionError(f"sentence id must be an identifier: {self.ident!r}")
        if not self.actions and not self.states:
            raise InstructionError(f"sentence {self.ident!r} has neither action nor state constraints")
        if not self.segment:
            raise InstructionError(f"sentence {self.ident!r} has no target segment")

    @property
    def done_prop(self) -> str:
        return f"done_{self.ident}"


@dataclass(frozen=True)
class Instruction:
    sentences: tuple[AtomicSentence, ...]
    temporal: Formula | None = None  # None means "sentence order"
    propositions: tuple[tuple[str, StatePredicate], ...] = ()
    name: str = "instruction"

    def __post_init__(self):
        if not self.sentences:
            raise InstructionError("instruction needs at least one sentence")
        ids = [s.ident for s in self.sentences]
        if len(set(ids)) != len(ids):
            raise InstructionError("duplicate sentence ids")
        if self.temporal is not None:
            unknown = atoms(self.temporal) - self.known_props()
            if unknown:
                raise InstructionError(f"temporal formula uses unknown propositions {sorted(unknown)}")

    @property
    def ctemporal(self) -> Formula:
        if self.temporal is None:
            return compile_order([s.done_prop for s in self.sentences])
        return self.temporal

    @property
    def action_constraint(self) -> frozenset:
        out: set = set()
        for s in self.sentences:
            out |= s.actions
        return frozenset(out)

    @property
    def state_constraint(self) -> tuple[StatePredicate, ...]:
        seen: dict[str, StatePredicate] = {}
        for s in self.sentences:
            for p in s.states:
                seen.setdefault(p.text, p)
        return tuple(seen.values())

    def known_props(self) -> set[str]:
        props = {s.done_prop for s in self.sentences}
        props |= {_action_prop(a) for a in Action}
        props |= {name for name, _ in self.propositions}
        for s in self.sentences:
            props |= {_state_prop(s.ident, k) for k in range(len(s.states))}
        return props

    def __len__(self) -> int:
        return len(self.sentences)


def _action_prop(a: Action) -> str:
    return f"act_{a.label}"


def _state_prop(ident: str, k: int) -> str:
    return f"st_{ident}_{k}"


# -- checks ---------------------------------------------------------------

def check_action_constraint(trajectory: Trajectory | Sequence[Transition], c_a: Iterable[Action]) -> bool:
    taken = {tr.action for tr in trajectory}
    return all(a in taken for a in c_a)


def _visited(trajectory) -> list[State]:
    trs = list(trajectory)
    if not trs:
        return []
    return [trs[0].state] + [tr.next_state for tr in trs]


def check_state_constraint(trajectory: Trajectory | Sequence[Transition], c_s: Iterable[StatePredicate]) -> bool:
    visited = _visited(trajectory)
    return all(any(p(s) for s in visited) for p in c_s)


def label_events(trajectory: Trajectory | Sequence[Transition], instruction: Instruction | Sequence[AtomicSentence]) -> list[frozenset]:
    """One proposition set per transition.

    Step ``t`` holds the taken action's ``act_<Name>`` proposition, every
    sentence predicate ``st_<id>_<k>`` and named proposition true of
    ``next_state``, and ``done_<id>`` whenever sentence ``id``'s target
    segment ends at ``t``.
    """
    trs = list(trajectory)
    if isinstance(instruction, Instruction):
        sentences, named = instruction.sentences, instruction.propositions
    else:
        sentences, named = tuple(instruction), ()
    trace = []
    for t, tr in enumerate(trs):
        ev = {_action_prop(tr.action)}
        nxt = tr.next_state
        for s in sentences:
            for k, p in enumerate(s.states):
                if p(nxt):
                    ev.add(_state_prop(s.ident, k))
            if segment_matches_at(s.segment, trs, t):
                ev.add(s.done_prop)
        for name, p in named:
            if p(nxt):
                ev.add(name)
        trace.append(frozenset(ev))
    return trace


def done_steps(trajectory, instruction: Instruction) -> dict[str, list[int]]:
    trs = list(trajectory)
    return {
        s.ident: [t for t in range(len(trs)) if segment_matches_at(s.segment, trs, t)]
        for s in instruction.sentences
    }


class MatchLevel(enum.Enum):
    FULL = "full"
    PARTIAL = "partial"
    NONE = "none"


@dataclass(frozen=True)
class MatchReport:
    action_ok: bool
    state_ok: bool
    temporal_ok: bool
    completions: dict
    level: MatchLevel


def _sentence_progressed(trs, s: AtomicSentence, completions) -> bool:
    if completions[s.ident]:
        return True
    if s.actions and check_action_constraint(trs, s.actions):
        return True
    return bool(s.states) and check_state_constraint(trs, s.states)


def match_level(trajectory: Trajectory | Sequence[Transition], instruction: Instruction) -> MatchReport:
    trs = list(trajectory)
    a_ok = check_action_constraint(trs, instruction.action_constraint)
    s_ok = check_state_constraint(trs, instruction.state_constraint)
    t_ok = bool(trs) and eval_ltl(instruction.ctemporal, label_events(trs, instruction), 0)
    completions = done_steps(trs, instruction)
    if a_ok and s_ok and t_ok:
        level = MatchLevel.FULL
    elif not (a_ok or s_ok or t_ok):
        level = MatchLevel.NONE
    elif not any(_sentence_progressed(trs, s, completions) for s in instruction.sentences):
        level = MatchLevel.NONE
    else:
        level = MatchLevel.PARTIAL
    return MatchReport(a_ok, s_ok, t_ok, completions, level)


# -- granularity ----------------------------------------------------------

def _substitute(phi: Formula, dropped: set[str]) -> Formula:
    if isinstance(phi, Atom):
        return TRUE if phi.name in dropped else phi
    if isinstance(phi, TrueF):
        return phi
    if isinstance(phi, Not):
        return Not(_substitute(phi.arg, dropped))
    if isinstance(phi, Next):
        return Next(_substitute(phi.arg, dropped))
    if isinstance(phi, And):
        return And(_substitute(phi.left, dropped), _substitute(phi.right, dropped))
    return Until(_substitute(phi.left, dropped), _substitute(phi.right, dropped))


def degrade_type1(instruction: Instruction, stride: int) -> Instruction:
    """Skip intermediate sentences: keep positions 0, n, 2n, ... and the last."""
    if stride < 2:
        raise ValueError("stride must be >= 2")
    m = len(instruction.sentences)
    if m < 3:
        return instruction
    keep = [s for i, s in enumerate(instruction.sentences) if i % stride == 0 or i == m - 1]
    temporal = instruction.temporal
    if temporal is not None:
        dropped = {s.done_prop for s in instruction.sentences if s not in keep}
        temporal = _substitute(temporal, dropped)
    return replace(instruction, sentences=tuple(keep), temporal=temporal, name=f"{instruction.name}-type1")


def degrade_type2(instruction: Instruction) -> Instruction:
    """Drop the action dimension: empty every C_a and unconstrain segment actions."""
    sentences = []
    for s in instruction.sentences:
        if not s.states:
            raise InstructionError(f"sentence {s.ident!r} would have no constraints left")
        segment = tuple(SegmentStep(None, step.predicate) for step in s.segment)
        sentences.append(replace(s, actions=frozenset(), segment=segment))
    name = instruction.name if instruction.name.endswith("-type2") else f"{instruction.name}-type2"
    return replace(instruction, sentences=tuple(sentences), name=name)


# -- files ----------------------------------------------------------------

def parse_instruction(text: str, name: str = "instruction") -> Instruction:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InstructionError(str(exc)) from exc
    head = cp["instruction"] if cp.has_section("instruction") else {}
    name = head.get("name", name)
    props = tuple(
        (key, StatePredicate.parse(val)) for key, val in (cp["propositions"].items() if cp.has_section("propositions") else [])
    )
    sentences = []
    for section in cp.sections():
        if not section.startswith("sentence."):
            continue
        body = cp[section]
        ident = section.split(".", 1)[1]
        acts = body.get("actions", "").strip()
        actions = frozenset(Action.from_name(a) for a in re.split(r"[,\s]+", acts) if a)
        states_raw = body.get("states", "").strip()
        states = tuple(StatePredicate.parse(p) for p in states_raw.split(";") if p.strip())
        if "segment" not in body:
            raise InstructionError(f"sentence {ident!r} lacks a segment")
        sentences.append(AtomicSentence(ident, body.get("text", ident), actions, states, parse_segment(body["segment"])))
    temporal_text = head.get("temporal", "").strip()
    temporal = parse_ltl(temporal_text) if temporal_text else None
    return Instruction(tuple(sentences), temporal, props, name)


def load_instruction(path: str | Path) -> Instruction:
    path = Path(path)
    return parse_instruction(path.read_text(), name=path.stem)


def shipped_instruction(room_id: str) -> Instruction:
    path = DATA_DIR / "instructions" / f"{room_id}.ini"
    if not path.exists():
        raise KeyError(f"no shipped instruction for room {room_id!r}")
    return load_instruction(path)


def format_instruction(instruction: Instruction) -> str:
    """Inverse of :func:`parse_instruction` (up to comments and ordering)."""
    lines = ["[instruction]", f"name = {instruction.name}"]
    if instruction.temporal is not None:
        lines.append(f"temporal = {to_text(instruction.temporal)}")
    if instruction.propositions:
        lines += ["", "[propositions]"] + [f"{n} = {p.text}" for n, p in instruction.propositions]
    for s in instruction.sentences:
        lines += ["", f"[sentence.{s.ident}]", f"text = {s.text}"]
        lines.append("actions = " + ", ".join(a.label for a in sorted(s.actions)))
        lines.append("states = " + "; ".join(p.text for p in s.states))
        lines.append("segment = " + "; ".join(step.text() for step in s.segment))
    return "\n".join(lines) + "\n"
