"""Function-preserving random rewriting of Boolean expressions.

Each rule is a pair ``(matches, apply)`` acting on a single node; ``rewrite_equiv``
picks an applicable rule uniformly, then one of its sites uniformly.
"""

from __future__ import annotations

import numpy as np

from .expr import NARY, And, Const, Not, Or, Var, Xor, conj, disj, replace_at, subterms


class NoApplicableRule(ValueError):
    pass


def _demorgan_push_ok(e):
    return isinstance(e, Not) and isinstance(e.child, (And, Or))


def _demorgan_push(e, rng):
    inner = e.child
    flipped = Or if isinstance(inner, And) else And
    return flipped(tuple(Not(c) for c in inner.children))


def _demorgan_pull_ok(e):
    return isinstance(e, (And, Or)) and all(isinstance(c, Not) for c in e.children)


def _demorgan_pull(e, rng):
    flipped = Or if isinstance(e, And) else And
    return Not(flipped(tuple(c.child for c in e.children)))


def _distribute_ok(outer, inner):
    def ok(e):
        return isinstance(e, outer) and any(isinstance(c, inner) for c in e.children)

    return ok


def _distribute(outer, inner):
    join_outer = conj if outer is And else disj

    def apply(e, rng):
        idx = [i for i, c in enumerate(e.children) if isinstance(c, inner)]
        j = idx[rng.integers(len(idx))]
        rest = [c for i, c in enumerate(e.children) if i != j]
        return inner(tuple(join_outer(*rest, y) for y in e.children[j].children))

    return apply


def _common_child(e, inner):
    """A child shared by every (inner-typed) child of ``e``, or None."""
    if not all(isinstance(c, inner) for c in e.children):
        return None
    first = e.children[0].children
    for cand in first:
        if all(cand in c.children for c in e.children[1:]):
            return cand
    return None


def _factor_ok(outer, inner):
    def ok(e):
        return isinstance(e, outer) and _common_child(e, inner) is not None

    return ok


def _factor(outer, inner):
    join_inner = conj if inner is And else disj
    join_outer = disj if outer is Or else conj

    def apply(e, rng):
        common = _common_child(e, inner)
        rests = []
        for c in e.children:
            kids = list(c.children)
            kids.remove(common)
            rests.append(join_inner(*kids))
        return inner((common, join_outer(*rests)))

    return apply


def _commute_ok(e):
    return isinstance(e, NARY)


def _commute(e, rng):
    kids = list(e.children)
    if len(kids) == 2:
        return type(e)((kids[1], kids[0]))
    order = rng.permutation(len(kids))
    if list(order) == list(range(len(kids))):
        order = np.roll(order, 1)
    return type(e)(tuple(kids[i] for i in order))


def _group_ok(e):
    return isinstance(e, (And, Or)) and len(e.children) >= 3


def _group(e, rng):
    kids = list(e.children)
    i = int(rng.integers(len(kids) - 1))
    kids[i : i + 2] = [type(e)((kids[i], kids[i + 1]))]
    return type(e)(tuple(kids))


def _flatten_ok(e):
    return isinstance(e, (And, Or)) and any(type(c) is type(e) for c in e.children)


def _flatten(e, rng):
    idx = [i for i, c in enumerate(e.children) if type(c) is type(e)]
    j = idx[rng.integers(len(idx))]
    kids = list(e.children)
    kids[j : j + 1] = list(e.children[j].children)
    return type(e)(tuple(kids))


def _dneg_insert(e, rng):
    return Not(Not(e))


def _dneg_remove_ok(e):
    return isinstance(e, Not) and isinstance(e.child, Not)


def _dneg_remove(e, rng):
    return e.child.child


def _xor_expand(e, rng):
    a, b = e.children
    return Or((And((a, Not(b))), And((Not(a), b))))


def _xor_collapse_ok(e):
    if not (isinstance(e, Or) and len(e.children) == 2):
        return False
    p, q = e.children
    if not (isinstance(p, And) and isinstance(q, And) and len(p.children) == 2 and len(q.children) == 2):
        return False
    a, nb = p.children
    na, b = q.children
    return nb == Not(b) and na == Not(a)


def _xor_collapse(e, rng):
    a, _ = e.children[0].children
    _, b = e.children[1].children
    return Xor((a, b))


RULES = {
    "demorgan_push": (_demorgan_push_ok, _demorgan_push),
    "demorgan_pull": (_demorgan_pull_ok, _demorgan_pull),
    "distribute_and_over_or": (_distribute_ok(And, Or), _distribute(And, Or)),
    "distribute_or_over_and": (_distribute_ok(Or, And), _distribute(Or, And)),
    "factor_and_from_or": (_factor_ok(Or, And), _factor(Or, And)),
    "factor_or_from_and": (_factor_ok(And, Or), _factor(And, Or)),
    "commute": (_commute_ok, _commute),
    "associate_group": (_group_ok, _group),
    "associate_flatten": (_flatten_ok, _flatten),
    "double_negation_insert": (lambda e: True, _dneg_insert),
    "double_negation_remove": (_dneg_remove_ok, _dneg_remove),
    "xor_expand": (lambda e: isinstance(e, Xor), _xor_expand),
    "xor_collapse": (_xor_collapse_ok, _xor_collapse),
}


def rule_sites(e, rule: str) -> list[tuple]:
    matches = RULES[rule][0]
    return [path for path, node in subterms(e) if matches(node)]


def apply_rule(e, rule: str, path: tuple = (), rng=None):
    """Apply one named rule at ``path`` (root by default)."""
    matches, apply = RULES[rule]
    node = e
    for i in path:
        node = node.child if isinstance(node, Not) else node.children[i]
    if not matches(node):
        raise NoApplicableRule(f"{rule} does not apply at {path}")
    return replace_at(e, path, apply(node, rng if rng is not None else np.random.default_rng(0)))


def rewrite_equiv(e, seed: int, steps: int):
    """Apply ``steps`` random equivalence-preserving rewrites.

    A bare variable or constant is returned double negated.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if isinstance(e, (Var, Const)):
        return Not(Not(e))
    rng = np.random.default_rng(seed)
    names = list(RULES)
    for _ in range(steps):
        sites = {name: rule_sites(e, name) for name in names}
        usable = [name for name in names if sites[name]]
        rule = usable[rng.integers(len(usable))]
        path = sites[rule][rng.integers(len(sites[rule]))]
        e = apply_rule(e, rule, path, rng)
    return e
