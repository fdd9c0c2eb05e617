"""Symbolic Boolean expressions: construction, printing, parsing and evaluation.

Grammar of the text form (also used for cell function templates)::

    expr    := xor ('|' xor)*
    xor     := conj ('^' conj)*          # left associative, binary
    conj    := unary ('&' unary)*
    unary   := '!' unary | atom
    atom    := IDENT | '0' | '1' | '(' expr ')'
    IDENT   := [A-Za-z_][A-Za-z0-9_.\\[\\]]*

Printing is fully parenthesized: every And/Or/Xor is wrapped in one pair of
parentheses, children separated by ``' & '``, ``' | '`` or ``' ^ '``, and the
children of every commutative node sorted by (printed length, text).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Mapping, NamedTuple, Union

import numpy as np

from . import _kernels as K

MAX_TABLE_VARS = 16
SAMPLED_VECTORS = 4096


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, pos: int, text: str):
        super().__init__(f"{message} at column {pos + 1}: {text!r}")
        self.pos = pos
        self.text = text


class VariableLimitExceeded(ValueError):
    pass


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if not _IDENT_RE.fullmatch(self.name):
            raise ValueError(f"invalid variable name {self.name!r}")


@dataclass(frozen=True)
class Const:
    value: int

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValueError("constant must be 0 or 1")


@dataclass(frozen=True)
class Not:
    child: "BoolExpr"


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("And needs at least two children")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("Or needs at least two children")


@dataclass(frozen=True)
class Xor:
    children: tuple

    def __post_init__(self):
        if len(self.children) != 2:
            raise ValueError("Xor takes exactly two children")


BoolExpr = Union[Var, Const, Not, And, Or, Xor]
NARY = (And, Or, Xor)
_SYMBOL = {And: "&", Or: "|", Xor: "^"}


def conj(*children):
    return children[0] if len(children) == 1 else And(tuple(children))


def disj(*children):
    return children[0] if len(children) == 1 else Or(tuple(children))


def is_leaf(e) -> bool:
    return isinstance(e, (Var, Const))


def variables(e) -> list[str]:
    """Sorted distinct variable names."""
    found = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            found.add(node.name)
        elif isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, NARY):
            stack.extend(node.children)
    return sorted(found)


def size(e) -> int:
    """Node count of the tree."""
    count = 0
    stack = [e]
    while stack:
        node = stack.pop()
        count += 1
        if isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, NARY):
            stack.extend(node.children)
    return count


def substitute(e, mapping: Mapping[str, "BoolExpr"]):
    """Replace variables by expressions (simultaneously)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Not):
        return Not(substitute(e.child, mapping))
    return type(e)(tuple(substitute(c, mapping) for c in e.children))


# ---------------------------------------------------------------- printing


def _text_and_canon(e):
    if isinstance(e, Var):
        return e.name, e
    if isinstance(e, Const):
        return str(e.value), e
    if isinstance(e, Not):
        text, child = _text_and_canon(e.child)
        return "!" + text, Not(child)
    parts = sorted((_text_and_canon(c) for c in e.children), key=lambda tc: (len(tc[0]), tc[0]))
    sep = f" {_SYMBOL[type(e)]} "
    return "(" + sep.join(t for t, _ in parts) + ")", type(e)(tuple(c for _, c in parts))


def to_text(e) -> str:
    """Canonical, fully parenthesized infix form."""
    return _text_and_canon(e)[0]


def canonical(e):
    """``e`` with every commutative node's children in printing order."""
    return _text_and_canon(e)[1]


# ----------------------------------------------------------------- parsing

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\[\]]*")
_TOKEN_RE = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_.\[\]]*)|([01])(?![0-9A-Za-z_])|([!&|^()]))")


def _tokenize(s: str):
    tokens = []
    pos = 0
    while True:
        while pos < len(s) and s[pos].isspace():
            pos += 1
        if pos >= len(s):
            break
        m = _TOKEN_RE.match(s, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {s[pos]!r}", pos, s)
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), m.lastindex, start))
        pos = m.end()
    tokens.append(("", 0, len(s)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message):
        raise ExprSyntaxError(message, self.peek()[2], self.text)

    def parse(self):
        if self.peek()[1] == 0:
            self.error("empty expression")
        e = self.expr()
        if self.peek()[1] != 0:
            self.error(f"unexpected token {self.peek()[0]!r}")
        return e

    def expr(self):
        items = [self.xor()]
        while self.peek()[0] == "|":
            self.take()
            items.append(self.xor())
        return disj(*items)

    def xor(self):
        left = self.conj()
        while self.peek()[0] == "^":
            self.take()
            left = Xor((left, self.conj()))
        return left

    def conj(self):
        items = [self.unary()]
        while self.peek()[0] == "&":
            self.take()
            items.append(self.unary())
        return conj(*items)

    def unary(self):
        if self.peek()[0] == "!":
            self.take()
            return Not(self.unary())
        return self.atom()

    def atom(self):
        value, kind, _ = self.peek()
        if kind == 1:
            self.take()
            return Var(value)
        if kind == 2:
            self.take()
            return Const(int(value))
        if value == "(":
            self.take()
            inner = self.expr()
            if self.peek()[0] != ")":
                self.error("expected ')'")
            self.take()
            return inner
        self.error("expected operand" if kind == 0 else f"unexpected token {value!r}")


def parse_expr(s: str):
    """Parse the text form; precedence ``!`` > ``&`` > ``^`` > ``|``."""
    return _Parser(s).parse()


# -------------------------------------------------------------- evaluation


def evaluate(e, env: Mapping[str, np.ndarray]):
    """Recursive numpy evaluation over bool arrays; independent of the compiled path."""
    if isinstance(e, Var):
        return np.asarray(env[e.name], dtype=bool)
    if isinstance(e, Const):
        return np.asarray(bool(e.value))
    if isinstance(e, Not):
        return ~evaluate(e.child, env)
    vals = [evaluate(c, env) for c in e.children]
    out = vals[0]
    for v in vals[1:]:
        if isinstance(e, And):
            out = out & v
        elif isinstance(e, Or):
            out = out | v
        else:
            out = out ^ v
    return out


def compile_expr(e, slots: Mapping[str, int], first_free: int, code: list) -> tuple[int, int]:
    """Append 3-address code computing ``e``; returns (result register, next free register)."""
    if isinstance(e, Var):
        return slots[e.name], first_free
    if isinstance(e, Const):
        code.append((K.OP_CONST1 if e.value else K.OP_CONST0, first_free, 0, 0))
        return first_free, first_free + 1
    if isinstance(e, Not):
        r, nxt = compile_expr(e.child, slots, first_free, code)
        code.append((K.OP_NOT, nxt, r, 0))
        return nxt, nxt + 1
    op = {And: K.OP_AND, Or: K.OP_OR, Xor: K.OP_XOR}[type(e)]
    acc, nxt = compile_expr(e.children[0], slots, first_free, code)
    for child in e.children[1:]:
        r, nxt = compile_expr(child, slots, nxt, code)
        code.append((op, nxt, acc, r))
        acc, nxt = nxt, nxt + 1
    return acc, nxt


def _eval_words(e, names, inputs):
    slots = {n: i for i, n in enumerate(names)}
    code: list = []
    out, n_regs = compile_expr(e, slots, len(names), code)
    regs = np.zeros((max(n_regs, 1), inputs.shape[1]), dtype=np.uint64)
    regs[: len(names)] = inputs
    K.exec_program(np.array(code, dtype=np.int64).reshape(-1, 4), regs)
    return regs[out].copy()


@dataclass(frozen=True, eq=False)
class TruthTable:
    """Exhaustive table; row ``i`` assigns bit ``j`` of ``i`` to ``vars[j]``."""

    vars: tuple
    words: np.ndarray

    @property
    def n_rows(self) -> int:
        return 1 << len(self.vars)

    @cached_property
    def bits(self) -> np.ndarray:
        return K.unpack_bits(self.words, self.n_rows)

    def to_bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def __eq__(self, other):
        if not isinstance(other, TruthTable):
            return NotImplemented
        return self.vars == other.vars and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.vars, self.bits.tobytes()))


def truth_table(e, vars: list[str] | None = None) -> TruthTable:
    """Exhaustive evaluation over ``vars`` (default: the sorted variables of ``e``)."""
    names = sorted(set(vars) if vars is not None else variables(e))
    missing = set(variables(e)) - set(names)
    if missing:
        raise ValueError(f"variables not in table order: {sorted(missing)}")
    if len(names) > MAX_TABLE_VARS:
        raise VariableLimitExceeded(f"{len(names)} variables > {MAX_TABLE_VARS}")
    words = _eval_words(e, names, K.exhaustive_patterns(len(names)))
    if len(names) < 6:
        words = words & np.uint64((1 << (1 << len(names))) - 1)
    return TruthTable(tuple(names), words)


class Equivalence(NamedTuple):
    equal: bool
    exact: bool

    def __bool__(self):
        return self.equal


def equivalent(e1, e2, seed: int = 0) -> Equivalence:
    """Functional equality over the union of variables.

    Exact (truth table) up to 16 variables; above that, agreement on
    4096 uniformly random vectors, returned with ``exact=False``.
    """
    names = sorted(set(variables(e1)) | set(variables(e2)))
    if len(names) <= MAX_TABLE_VARS:
        return Equivalence(truth_table(e1, names) == truth_table(e2, names), True)
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 2**63, size=(len(names), SAMPLED_VECTORS // 64), dtype=np.uint64)
    raw = raw ^ (rng.integers(0, 2, size=raw.shape, dtype=np.uint64) << np.uint64(63))
    same = np.array_equal(_eval_words(e1, names, raw), _eval_words(e2, names, raw))
    return Equivalence(bool(same), False)


def subterms(e, path=()) -> Iterator[tuple[tuple, "BoolExpr"]]:
    """Pre-order (path, node) pairs; a path is a tuple of child indices."""
    yield path, e
    if isinstance(e, Not):
        yield from subterms(e.child, path + (0,))
    elif isinstance(e, NARY):
        for i, c in enumerate(e.children):
            yield from subterms(c, path + (i,))


def replace_at(e, path, new):
    if not path:
        return new
    head, rest = path[0], path[1:]
    if isinstance(e, Not):
        return Not(replace_at(e.child, rest, new))
    children = list(e.children)
    children[head] = replace_at(children[head], rest, new)
    return type(e)(tuple(children))
