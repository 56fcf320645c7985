"""Linear temporal logic over finite event traces.

Grammar (abstract)::

    phi ::= true | p | phi & phi | !phi | X phi | phi U phi

with the derived operators ``F phi := true U phi`` and ``G phi := !F!phi``.
``F`` and ``G`` are expanded at construction time, so an AST only ever holds
the six primitive node types.

Concrete syntax, loosest to tightest binding: ``&`` (left-assoc), ``U``
(right-assoc), then the prefix operators ``! X F G``. Parentheses group.

Semantics are the finite-trace reading: ``X phi`` is false at the last
index, and ``phi1 U phi2`` needs its witness inside the trace.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union


class LtlSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class Next:
    arg: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"


Formula = Union[TrueF, Atom, And, Not, Next, Until]
TRUE = TrueF()

EventTrace = Sequence[frozenset]


def Eventually(phi: Formula) -> Formula:
    return Until(TRUE, phi)


def Always(phi: Formula) -> Formula:
    return Not(Eventually(Not(phi)))


def atoms(phi: Formula) -> set[str]:
    if isinstance(phi, Atom):
        return {phi.name}
    if isinstance(phi, TrueF):
        return set()
    if isinstance(phi, (Not, Next)):
        return atoms(phi.arg)
    return atoms(phi.left) | atoms(phi.right)


# -- printing -------------------------------------------------------------

def to_text(phi: Formula) -> str:
    """Render ``phi`` in the concrete syntax; ``parse_ltl`` inverts it."""
    if isinstance(phi, TrueF):
        return "true"
    if isinstance(phi, Atom):
        return phi.name
    if isinstance(phi, Until) and phi.left == TRUE:
        return f"F {_wrap(phi.right)}"
    if isinstance(phi, Not):
        inner = phi.arg
        if isinstance(inner, Until) and inner.left == TRUE and isinstance(inner.right, Not):
            return f"G {_wrap(inner.right.arg)}"
        return f"!{_wrap(inner)}"
    if isinstance(phi, Next):
        return f"X {_wrap(phi.arg)}"
    if isinstance(phi, And):
        return f"({to_text(phi.left)} & {to_text(phi.right)})"
    if isinstance(phi, Until):
        return f"({to_text(phi.left)} U {to_text(phi.right)})"
    raise TypeError(f"not a formula: {phi!r}")


def _wrap(phi: Formula) -> str:
    text = to_text(phi)
    if isinstance(phi, (TrueF, Atom, And)) or (isinstance(phi, Until) and phi.left != TRUE):
        return text
    return f"({text})"


# -- parsing --------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[&!()]))")
_PREFIX = {"!", "X", "F", "G"}


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m:
            raise LtlSyntaxError(f"unknown token {text[pos]!r}", pos)
        start = m.start("ident") if m.group("ident") else m.start("op")
        tokens.append((m.group("ident") or m.group("op"), start))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def pos(self) -> int:
        return self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text)

    def take(self) -> str:
        tok = self.tokens[self.i][0]
        self.i += 1
        return tok

    def parse(self) -> Formula:
        if not self.tokens:
            raise LtlSyntaxError("empty formula", 0)
        phi = self.conjunction()
        if self.peek() is not None:
            raise LtlSyntaxError(f"unexpected token {self.peek()!r}", self.pos())
        return phi

    def conjunction(self) -> Formula:
        phi = self.until()
        while self.peek() == "&":
            self.take()
            phi = And(phi, self.until())
        return phi

    def until(self) -> Formula:
        left = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self) -> Formula:
        tok = self.peek()
        if tok in _PREFIX:
            self.take()
            arg = self.unary()
            if tok == "!":
                return Not(arg)
            if tok == "X":
                return Next(arg)
            return Eventually(arg) if tok == "F" else Always(arg)
        return self.primary()

    def primary(self) -> Formula:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError("unexpected end of formula", self.pos())
        if tok == "(":
            self.take()
            phi = self.conjunction()
            if self.peek() != ")":
                raise LtlSyntaxError("expected ')'", self.pos())
            self.take()
            return phi
        if tok in ("&", ")", "U"):
            raise LtlSyntaxError(f"unexpected token {tok!r}", self.pos())
        self.take()
        return TRUE if tok == "true" else Atom(tok)


def parse_ltl(text: str) -> Formula:
    return _Parser(text).parse()


# -- evaluation -----------------------------------------------------------

def _sat_vector(phi: Formula, trace: EventTrace, memo: dict) -> list[bool]:
    got = memo.get(phi)
    if got is not None:
        return got
    n = len(trace)
    if isinstance(phi, TrueF):
        out = [True] * n
    elif isinstance(phi, Atom):
        out = [phi.name in e for e in trace]
    elif isinstance(phi, Not):
        out = [not v for v in _sat_vector(phi.arg, trace, memo)]
    elif isinstance(phi, And):
        a = _sat_vector(phi.left, trace, memo)
        b = _sat_vector(phi.right, trace, memo)
        out = [x and y for x, y in zip(a, b)]
    elif isinstance(phi, Next):
        a = _sat_vector(phi.arg, trace, memo)
        out = a[1:] + [False]
    elif isinstance(phi, Until):
        a = _sat_vector(phi.left, trace, memo)
        b = _sat_vector(phi.right, trace, memo)
        out = [False] * n
        later = False
        for i in range(n - 1, -1, -1):
            later = b[i] or (a[i] and later)
            out[i] = later
    else:
        raise TypeError(f"not a formula: {phi!r}")
    memo[phi] = out
    return out


def eval_ltl(phi: Formula, trace: EventTrace, index: int = 0) -> bool:
    """Whether ``trace`` satisfies ``phi`` from position ``index``."""
    if not 0 <= index < len(trace):
        raise IndexError(f"index {index} outside trace of length {len(trace)}")
    return _sat_vector(phi, trace, {})[index]


def satisfaction(phi: Formula, trace: EventTrace) -> list[bool]:
    """Truth value of ``phi`` at every index of ``trace``."""
    return list(_sat_vector(phi, trace, {}))


def compile_order(props: Iterable[Union[str, Formula]]) -> Formula:
    """``F(p1 & F(p2 & ... F pm))``: the propositions occur in this order."""
    items = [Atom(p) if isinstance(p, str) else p for p in props]
    if not items:
        raise ValueError("compile_order needs at least one proposition")
    phi = Eventually(items[-1])
    for p in reversed(items[:-1]):
        phi = Eventually(And(p, phi))
    return phi
