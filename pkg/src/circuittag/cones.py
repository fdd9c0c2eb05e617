"""Chunking sequential netlists into per-register combinational cones."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .extract import DEFAULT_HOPS, expr_of_gate
from .netlist import PI_DRIVER, Netlist, topo_order

log = logging.getLogger(__name__)

CONE_SIZE_WARNING = 20_000


@dataclass(frozen=True)
class RegisterCone:
    """Next-state logic of one register, or of one primary output for ``kind == "output"``."""

    kind: str  # "register" | "output"
    root: int | None  # register gate id in the source netlist
    root_name: str
    data_net: int  # source-netlist net computed by the cone
    members: tuple  # source-netlist combinational gate ids
    frontier: tuple  # source symbols (register instance names / input net names)
    frontier_nets: tuple  # matching source-netlist net ids
    subnetlist: Netlist


@dataclass(frozen=True)
class ConeSet:
    circuit: str
    cones: tuple
    covered: int
    feeding: int

    @property
    def coverage(self) -> float:
        return 1.0 if self.feeding == 0 else self.covered / self.feeding

    @property
    def total_members(self) -> int:
        return sum(len(c.members) for c in self.cones)

    def register_cones(self) -> list:
        return [c for c in self.cones if c.kind == "register"]


def backward_cone(n: Netlist, net: int) -> tuple[list[int], list[int]]:
    """Combinational gates reachable backward from ``net`` and the frontier nets where the walk stops."""
    members, frontier = set(), set()
    stack = [net]
    seen = set()
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        d = n.driver[cur]
        if d == PI_DRIVER or n.gates[d].is_register:
            frontier.add(cur)
            continue
        members.add(d)
        stack.extend(n.gates[d].input_nets)
    return sorted(members), sorted(frontier)


def _symbol(n: Netlist, net: int) -> str:
    d = n.driver[net]
    return n.nets[net].name if d == PI_DRIVER else n.gates[d].instance_name


def extract_subnetlist(n: Netlist, name: str, output: int, members, frontier) -> Netlist:
    """Self-contained copy of ``members`` with frontier nets as primary inputs named by their source symbol."""
    keep = sorted(set(frontier) | {n.gates[g].output_net for g in members} | {output})
    member_nets = {n.gates[g].output_net for g in members}
    taken = {n.nets[i].name for i in keep if i in member_nets}
    names = []
    for i in keep:
        if i in frontier:
            sym = _symbol(n, i)
            names.append(sym if sym not in taken else n.nets[i].name)
            taken.add(names[-1])
        else:
            names.append(n.nets[i].name)
    local = {old: new for new, old in enumerate(keep)}
    gates = []
    for g in members:
        gate = n.gates[g]
        gates.append((gate.instance_name, gate.cell, [local[x] for x in gate.input_nets], local[gate.output_net]))
    return Netlist.build(name, names, gates, [local[f] for f in frontier], [local[output]])


def _make_cone(n: Netlist, kind, root, root_name, data_net):
    members, frontier = backward_cone(n, data_net)
    if len(members) > CONE_SIZE_WARNING:
        log.warning("cone %s has %d members", root_name, len(members))
    sub = extract_subnetlist(n, f"{n.name}.{root_name}", data_net, members, frontier)
    symbols = tuple(sub.nets[i].name for i in sub.primary_inputs)
    return RegisterCone(kind, root, root_name, data_net, tuple(members), symbols, tuple(frontier), sub)


def chunk(n: Netlist, workers: int = 1, include_outputs: bool = True) -> ConeSet:
    """One cone per register in register-id order, plus pseudo-cones for outputs with uncovered logic."""

    def one(rid):
        reg = n.gates[rid]
        return _make_cone(n, "register", rid, reg.instance_name, reg.input_nets[0])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cones = list(pool.map(one, n.registers))
    else:
        cones = [one(r) for r in n.registers]
    covered = set()
    for c in cones:
        covered.update(c.members)
    feeding = _feeding_gates(n)
    if include_outputs:
        for po in n.primary_outputs:
            d = n.driver[po]
            if d == PI_DRIVER or n.gates[d].is_register:
                continue
            members, _ = backward_cone(n, po)
            if set(members) - covered:
                cones.append(_make_cone(n, "output", None, f"PO:{n.nets[po].name}", po))
    return ConeSet(n.name, tuple(cones), len(covered & feeding), len(feeding))


def _feeding_gates(n: Netlist) -> set:
    # forward pass: mark gates whose output reaches a register data pin through combinational logic
    reaches = set()
    for gid in reversed(topo_order(n)):
        g = n.gates[gid]
        if g.is_register:
            continue
        for sink, _ in n.fanout[g.output_net]:
            if n.gates[sink].is_register or sink in reaches:
                reaches.add(gid)
                break
    return reaches


def cone_expr(c: RegisterCone, k: int = DEFAULT_HOPS) -> dict:
    """Instance name -> k-hop expression for every member, computed inside the subnetlist."""
    sub = c.subnetlist
    return {g.instance_name: expr_of_gate(sub, g.id, k) for g in sub.gates}


MANIFEST_HEADER = "#circuit\troot\tkind\tmembers\tfrontier"


def cone_manifest(cs: ConeSet) -> str:
    lines = [MANIFEST_HEADER]
    for c in cs.cones:
        lines.append(f"{cs.circuit}\t{c.root_name}\t{c.kind}\t{len(c.members)}\t{','.join(c.frontier)}")
    return "\n".join(lines) + "\n"


def read_manifest(text: str) -> list[tuple]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"manifest line {lineno}: expected 5 tab-separated fields")
        circuit, root, kind, count, frontier = parts
        rows.append((circuit, root, kind, int(count), tuple(f for f in frontier.split(",") if f)))
    return rows
