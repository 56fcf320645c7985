import random

import pytest

from lrslab.ltl import (
    TRUE,
    Always,
    And,
    Atom,
    Eventually,
    LtlSyntaxError,
    Next,
    Not,
    Until,
    atoms,
    compile_order,
    eval_ltl,
    parse_ltl,
    satisfaction,
    to_text,
)
from oracles import naive_holds, random_formula, random_trace


def tr(*steps):
    return [frozenset(s.split()) for s in steps]


def test_atom_and_negation():
    trace = tr("p", "q")
    assert eval_ltl(Atom("p"), trace)
    assert not eval_ltl(Atom("q"), trace)
    assert eval_ltl(Not(Atom("q")), trace)
    assert eval_ltl(Atom("q"), trace, 1)


def test_next_is_false_at_last_index():
    trace = tr("p", "p")
    assert eval_ltl(Next(Atom("p")), trace, 0)
    assert not eval_ltl(Next(Atom("p")), trace, 1)
    assert not eval_ltl(Next(TRUE), trace, 1)


def test_until_needs_witness_inside_trace():
    phi = Until(Atom("p"), Atom("q"))
    assert eval_ltl(phi, tr("p", "p", "q"))
    assert not eval_ltl(phi, tr("p", "p", "p"))
    assert not eval_ltl(phi, tr("p", "", "q"))
    assert eval_ltl(phi, tr("q"))


def test_always_and_eventually():
    assert eval_ltl(Always(Atom("p")), tr("p", "p q", "p"))
    assert not eval_ltl(Always(Atom("p")), tr("p", "q"))
    assert eval_ltl(Eventually(Atom("q")), tr("", "", "q"))
    assert not eval_ltl(Eventually(Atom("q")), tr("", ""))


def test_compile_order_requires_sequence():
    phi = compile_order(["a", "b", "c"])
    assert eval_ltl(phi, tr("a", "", "b", "c"))
    assert eval_ltl(phi, tr("a b c"))
    assert not eval_ltl(phi, tr("b", "a", "c"))
    assert not eval_ltl(phi, tr("a", "c"))
    with pytest.raises(ValueError):
        compile_order([])


def test_index_out_of_range():
    with pytest.raises(IndexError):
        eval_ltl(TRUE, tr("p"), 1)


def test_satisfaction_vector():
    assert satisfaction(Eventually(Atom("q")), tr("", "q", "")) == [True, True, False]


@pytest.mark.parametrize(
    "text, expected",
    [
        ("p", Atom("p")),
        ("true", TRUE),
        ("!p", Not(Atom("p"))),
        ("X p", Next(Atom("p"))),
        ("p U q", Until(Atom("p"), Atom("q"))),
        ("p U q U r", Until(Atom("p"), Until(Atom("q"), Atom("r")))),
        ("p & q & r", And(And(Atom("p"), Atom("q")), Atom("r"))),
        ("p & q U r", And(Atom("p"), Until(Atom("q"), Atom("r")))),
        ("F p", Until(TRUE, Atom("p"))),
        ("G p", Not(Until(TRUE, Not(Atom("p"))))),
        ("!(p & q)", Not(And(Atom("p"), Atom("q")))),
    ],
)
def test_parse_precedence(text, expected):
    assert parse_ltl(text) == expected


@pytest.mark.parametrize("text", ["", "p &", "(p", "p q", "& p", "p )", "U p", "p $ q"])
def test_parse_errors(text):
    with pytest.raises(LtlSyntaxError):
        parse_ltl(text)


def test_text_round_trip():
    rng = random.Random(5)
    for _ in range(300):
        phi = random_formula(rng, 4)
        assert parse_ltl(to_text(phi)) == phi


def test_atoms():
    assert atoms(parse_ltl("F (a & X b) U !c")) == {"a", "b", "c"}


def test_matches_naive_semantics():
    rng = random.Random(11)
    for _ in range(300):
        phi = random_formula(rng, 4)
        trace = random_trace(rng)
        expected = [naive_holds(phi, trace, i) for i in range(len(trace))]
        assert satisfaction(phi, trace) == expected, to_text(phi)
