"""k-hop fan-in cone expressions for gates."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

from .expr import Var, size, substitute
from .netlist import PI_DRIVER, Netlist

log = logging.getLogger(__name__)

DEFAULT_HOPS = 2
MAX_EXPR_NODES = 10_000


class RegisterExpressionError(ValueError):
    pass


class ExpressionTooLarge(Exception):
    pass


def source_symbol(n: Netlist, net: int) -> str:
    """Leaf name for a net: the driver's instance name, or the net name for primary inputs."""
    d = n.driver[net]
    return n.nets[net].name if d == PI_DRIVER else n.gates[d].instance_name


def _expand(n: Netlist, gid: int, depth: int, k: int, budget: list):
    g = n.gates[gid]
    mapping = {}
    for pin, net in zip(g.cell.inputs, g.input_nets):
        d = n.driver[net]
        if d == PI_DRIVER:
            leaf = Var(n.nets[net].name)
        else:
            src = n.gates[d]
            if src.is_register:
                leaf = Var(src.instance_name)
            elif not src.cell.inputs:
                leaf = src.cell.function  # tie cell
            elif depth < k:
                leaf = _expand(n, d, depth + 1, k, budget)
            else:
                leaf = Var(src.instance_name)
        mapping[pin] = leaf
    out = substitute(g.cell.function, mapping)
    if budget is not None:
        budget[0] += size(out)
        if budget[0] > MAX_EXPR_NODES:
            raise ExpressionTooLarge
    return out


def expr_of_gate(n: Netlist, g: int, k: int = DEFAULT_HOPS):
    """Substitute driver functions backward through ``k`` combinational levels.

    Registers, primary inputs and gates at depth ``k`` become variables;
    tie cells are always folded in as constants.
    Expressions that would exceed 10,000 nodes fall back to ``k=1``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    gate = n.gates[g]
    if gate.is_register:
        raise RegisterExpressionError(
            f"{gate.instance_name} is a register; use the gate driving its data input"
        )
    if not gate.cell.inputs:
        return gate.cell.function
    try:
        return _expand(n, g, 1, k, [0])
    except ExpressionTooLarge:
        log.warning("expression of %s exceeds %d nodes at k=%d; using k=1", gate.instance_name, MAX_EXPR_NODES, k)
        return _expand(n, g, 1, 1, None)


def _exprs_chunk(args):
    n, ids, k = args
    return [expr_of_gate(n, g, k) for g in ids]


def gate_expressions(n: Netlist, k: int = DEFAULT_HOPS, workers: int = 1) -> dict:
    """Expressions for every combinational gate, keyed by gate id; identical for any worker count."""
    ids = [g.id for g in n.gates if not g.is_register]
    if workers <= 1 or len(ids) < 2:
        return {g: expr_of_gate(n, g, k) for g in ids}
    chunks = [ids[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_exprs_chunk, [(n, c, k) for c in chunks]))
    out = {}
    for chunk, exprs in zip(chunks, results):
        out.update(zip(chunk, exprs))
    return {g: out[g] for g in ids}

