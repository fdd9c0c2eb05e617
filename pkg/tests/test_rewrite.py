import zlib
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circuittag.expr import Const, Not, Var, Xor, equivalent, parse_expr, to_text, truth_table, variables
from circuittag.rewrite import RULES, NoApplicableRule, apply_rule, rewrite_equiv, rule_sites
from conftest import random_expr


def test_demorgan_step():
    assert to_text(apply_rule(parse_expr("!(a | b)"), "demorgan_push")) == "(!a & !b)"


def test_xor_collapse_step():
    e = parse_expr("(a & !b) | (!a & b)")
    assert rule_sites(e, "xor_collapse") == [()]
    assert apply_rule(e, "xor_collapse") == parse_expr("a ^ b")


def test_leaf_double_negated():
    for seed in range(5):
        assert rewrite_equiv(Var("a"), seed, 3) == Not(Not(Var("a")))
    assert rewrite_equiv(Const(1), 0, 1) == Not(Not(Const(1)))


def test_steps_must_be_positive():
    with pytest.raises(ValueError):
        rewrite_equiv(parse_expr("a & b"), 0, 0)


def test_rule_not_applicable():
    with pytest.raises(NoApplicableRule):
        apply_rule(parse_expr("a & b"), "xor_expand")


@pytest.mark.parametrize("rule", sorted(RULES))
def test_every_rule_is_sound_where_it_applies(rule):
    rng = np.random.default_rng(zlib.crc32(rule.encode()))
    applied = 0
    for _ in range(1500):
        e = random_expr(rng, ["a", "b", "c", "d"], depth=4)
        if rule == "xor_collapse":
            e = apply_rule(Xor((e, Var("b"))), "xor_expand")
        sites = rule_sites(e, rule)
        if not sites:
            continue
        out = apply_rule(e, rule, sites[rng.integers(len(sites))], rng)
        assert equivalent(e, out), (rule, to_text(e), to_text(out))
        applied += 1
    assert applied > 0


def test_deterministic_given_seed():
    e = parse_expr("(a & b) | (c ^ d)")
    assert rewrite_equiv(e, 7, 6) == rewrite_equiv(e, 7, 6)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(0, 10_000))
def test_property_rewrite_sound(seed, steps, shape):
    e = random_expr(np.random.default_rng(shape), ["a", "b", "c", "d", "e"], depth=4)
    out = rewrite_equiv(e, seed, steps)
    names = sorted(set(variables(e)) | set(variables(out)))
    assert truth_table(e, names) == truth_table(out, names)
