import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circuittag.expr import (
    And, Const, ExprSyntaxError, Not, Or, Var, VariableLimitExceeded, Xor, canonical, equivalent,
    evaluate, parse_expr, to_text, truth_table, variables,
)
from conftest import random_expr

NAMES = ["a", "b", "c", "d", "R1", "U_7", "x.y", "bus[3]"]


def test_canonical_order():
    assert to_text(And((Var("b"), Var("a")))) == "(a & b)"
    assert to_text(Or((Var("long_name"), Var("z")))) == "(z | long_name)"


def test_printing_invariant_under_child_permutation():
    e1 = Or((Not(Var("R2")), Xor((Var("R1"), Var("R2")))))
    e2 = Or((Xor((Var("R1"), Var("R2"))), Not(Var("R2"))))
    assert to_text(Not(e1)) == to_text(Not(e2)) == "!(!R2 | (R1 ^ R2))"


@pytest.mark.parametrize(
    "text, expected",
    [
        ("(a & b)", And((Var("a"), Var("b")))),
        ("!a|b", Or((Not(Var("a")), Var("b")))),
        ("a | b & c", Or((Var("a"), And((Var("b"), Var("c")))))),
        ("a ^ b | c", Or((Xor((Var("a"), Var("b"))), Var("c")))),
        ("a ^ b ^ c", Xor((Xor((Var("a"), Var("b"))), Var("c")))),
        ("a & b & c", And((Var("a"), Var("b"), Var("c")))),
        ("!!0", Not(Not(Const(0)))),
    ],
)
def test_parse_precedence(text, expected):
    assert parse_expr(text) == expected


@pytest.mark.parametrize("text, pos", [("a &", 3), ("(a | b", 6), ("a b", 2), ("", 0), ("a # b", 2)])
def test_parse_errors_carry_position(text, pos):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text)
    assert info.value.pos == pos


@pytest.mark.parametrize(
    "text, bits",
    [("a ^ b", "0110"), ("a & !a", "00"), ("!(!R2 | (R1 ^ R2))", "0001"), ("a & !b", "0100")],
)
def test_truth_tables(text, bits):
    assert truth_table(parse_expr(text)).to_bitstring() == bits


def test_truth_table_var_order():
    t = truth_table(parse_expr("b & !a"))
    assert t.vars == ("a", "b") or list(t.vars) == ["a", "b"]


def test_variable_limit():
    e = And(tuple(Var(f"v{i:02d}") for i in range(17)))
    with pytest.raises(VariableLimitExceeded):
        truth_table(e)


@pytest.mark.parametrize(
    "x, y",
    [("!(a | b)", "!a & !b"), ("a ^ b", "(a & !b) | (!a & b)"), ("a & (b | c)", "(a & b) | (a & c)")],
)
def test_known_equivalences(x, y):
    r = equivalent(parse_expr(x), parse_expr(y))
    assert r and r.exact


def test_inequivalent():
    assert not equivalent(parse_expr("a | b"), parse_expr("a ^ b"))


def test_sampled_equivalence_beyond_16_vars():
    vs = [Var(f"v{i:02d}") for i in range(20)]
    e1 = Not(Or(tuple(vs)))
    e2 = And(tuple(Not(v) for v in vs))
    r = equivalent(e1, e2)
    assert r.equal and not r.exact
    assert not equivalent(Or(tuple(vs)), And(tuple(vs))).equal


def test_round_trip_1000_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        e = random_expr(rng, NAMES, depth=5)
        assert parse_expr(to_text(e)) == canonical(e)


def test_truth_table_matches_evaluate_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        e = random_expr(rng, NAMES[:5], depth=4)
        vs = variables(e)
        rows = np.arange(1 << len(vs))
        env = {v: ((rows >> j) & 1).astype(bool) for j, v in enumerate(vs)}
        expect = np.broadcast_to(evaluate(e, env), rows.shape)
        assert np.array_equal(truth_table(e).bits[: len(rows)], expect)


@st.composite
def exprs(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        return Var(draw(st.sampled_from(NAMES)))
    kind = draw(st.sampled_from(["not", "and", "or", "xor"]))
    if kind == "not":
        return Not(draw(exprs(depth=depth - 1)))
    if kind == "xor":
        return Xor((draw(exprs(depth=depth - 1)), draw(exprs(depth=depth - 1))))
    kids = tuple(draw(st.lists(exprs(depth=depth - 1), min_size=2, max_size=3)))
    return And(kids) if kind == "and" else Or(kids)


@settings(max_examples=200, deadline=None)
@given(exprs())
def test_property_print_parse_round_trip(e):
    text = to_text(e)
    assert to_text(parse_expr(text)) == text
    assert equivalent(e, parse_expr(text))


def test_structural_validation():
    with pytest.raises(ValueError):
        And((Var("a"),))
    with pytest.raises(ValueError):
        Xor((Var("a"), Var("b"), Var("c")))
    with pytest.raises(ValueError):
        Var("1bad")
    with pytest.raises(ValueError):
        Const(2)
