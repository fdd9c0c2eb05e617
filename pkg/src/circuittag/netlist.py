"""Gate-level netlist IR, the structural netlist format, and bit-parallel simulation.

Supported source subset::

    module top (a, b, y);
      input a;
      input b;
      output y;
      wire n1;
      NAND2 U1 (.A(a), .B(b), .ZN(n1));
      INV U2 (.A(n1), .ZN(y));
      DFF R1 (.D(n1), .CK(clk), .Q(q));
    endmodule

Declarations take comma lists; ``//`` and ``/* */`` comments are stripped.
Connections are by name only. Pins of register cells other than the data
input and output (clock, reset, scan) are accepted and dropped. Nets used
without a declaration are created implicitly.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from . import _kernels as K
from .expr import compile_expr
from .library import CellDef, CellLibrary

PI_DRIVER = -1


class NetlistError(ValueError):
    pass


class NetlistSyntaxError(NetlistError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownCellError(NetlistError):
    pass


class MultipleDriverError(NetlistError):
    pass


class UndrivenNetError(NetlistError):
    pass


class CombinationalCycleError(NetlistError):
    def __init__(self, gates):
        super().__init__("combinational cycle through " + " -> ".join(gates))
        self.gates = list(gates)


class MissingAssignmentError(KeyError):
    pass


@dataclass(frozen=True)
class Net:
    id: int
    name: str


@dataclass(frozen=True)
class GateInst:
    id: int
    instance_name: str
    cell: CellDef
    input_nets: tuple
    output_net: int

    def __post_init__(self):
        if len(self.input_nets) != len(self.cell.inputs):
            raise NetlistError(
                f"{self.instance_name}: {self.cell.name} takes {len(self.cell.inputs)} inputs, got {len(self.input_nets)}"
            )

    @property
    def is_register(self) -> bool:
        return self.cell.is_register


@dataclass(frozen=True, eq=False)
class Netlist:
    """Validated, immutable circuit. Construct through :meth:`build` or :func:`parse_netlist`."""

    name: str
    gates: tuple
    nets: tuple
    primary_inputs: tuple
    primary_outputs: tuple
    registers: tuple = field(init=False)
    driver: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "registers", tuple(g.id for g in self.gates if g.is_register))
        object.__setattr__(self, "driver", self._validate())

    @classmethod
    def build(cls, name, nets, gates, primary_inputs, primary_outputs) -> "Netlist":
        """``nets``: names in id order; ``gates``: (instance, cell, input net ids, output net id)."""
        net_objs = tuple(Net(i, n) for i, n in enumerate(nets))
        gate_objs = tuple(GateInst(i, inst, cell, tuple(ins), out) for i, (inst, cell, ins, out) in enumerate(gates))
        return cls(name, gate_objs, net_objs, tuple(sorted(set(primary_inputs))), tuple(sorted(set(primary_outputs))))

    def _validate(self):
        n = len(self.nets)
        if len({net.name for net in self.nets}) != n:
            raise NetlistError("duplicate net names")
        for i, net in enumerate(self.nets):
            if net.id != i:
                raise NetlistError("net ids must be dense and ordered")
        names = set()
        driver = [None] * n
        for pi in self.primary_inputs:
            if driver[pi] is not None:
                raise MultipleDriverError(f"net {self.nets[pi].name} declared as input twice")
            driver[pi] = PI_DRIVER
        for i, g in enumerate(self.gates):
            if g.id != i:
                raise NetlistError("gate ids must be dense and ordered")
            if g.instance_name in names:
                raise NetlistError(f"duplicate instance name {g.instance_name}")
            names.add(g.instance_name)
            if driver[g.output_net] is not None:
                other = "a primary input" if driver[g.output_net] == PI_DRIVER else self.gates[driver[g.output_net]].instance_name
                raise MultipleDriverError(
                    f"net {self.nets[g.output_net].name} driven by both {other} and {g.instance_name}"
                )
            driver[g.output_net] = g.id
        for g in self.gates:
            for net in g.input_nets:
                if driver[net] is None:
                    raise UndrivenNetError(f"net {self.nets[net].name} used by {g.instance_name} has no driver")
        for po in self.primary_outputs:
            if driver[po] is None:
                raise UndrivenNetError(f"output {self.nets[po].name} has no driver")
        for i, d in enumerate(driver):
            if d is None:
                raise UndrivenNetError(f"net {self.nets[i].name} has no driver")
        self._check_acyclic(driver)
        return tuple(driver)

    def _check_acyclic(self, driver):
        # iterative DFS over combinational gates, reporting one cycle
        state = [0] * len(self.gates)
        for start in range(len(self.gates)):
            if state[start] or self.gates[start].is_register:
                continue
            stack = [(start, 0)]
            path = []
            while stack:
                gid, idx = stack.pop()
                if idx == 0:
                    state[gid] = 1
                    path.append(gid)
                ins = self.gates[gid].input_nets
                advanced = False
                while idx < len(ins):
                    d = driver[ins[idx]]
                    idx += 1
                    if d == PI_DRIVER or self.gates[d].is_register:
                        continue
                    if state[d] == 1:
                        cyc = path[path.index(d) :] + [d]
                        raise CombinationalCycleError([self.gates[x].instance_name for x in cyc])
                    if state[d] == 0:
                        stack.append((gid, idx))
                        stack.append((d, 0))
                        advanced = True
                        break
                if not advanced:
                    state[gid] = 2
                    path.pop()

    def __eq__(self, other):
        if not isinstance(other, Netlist):
            return NotImplemented
        return (
            self.name == other.name
            and self.gates == other.gates
            and self.nets == other.nets
            and self.primary_inputs == other.primary_inputs
            and self.primary_outputs == other.primary_outputs
        )

    __hash__ = object.__hash__

    @cached_property
    def net_index(self) -> dict:
        return {net.name: net.id for net in self.nets}

    @cached_property
    def gate_index(self) -> dict:
        return {g.instance_name: g.id for g in self.gates}

    @cached_property
    def fanout(self) -> tuple:
        """Per net, the (gate id, pin index) pairs reading it."""
        sinks = [[] for _ in self.nets]
        for g in self.gates:
            for pin, net in enumerate(g.input_nets):
                sinks[net].append((g.id, pin))
        return tuple(tuple(s) for s in sinks)

    def driver_gate(self, net: int):
        d = self.driver[net]
        return None if d == PI_DRIVER else self.gates[d]

    @property
    def combinational(self) -> list:
        return [g for g in self.gates if not g.is_register]

    def free_sources(self) -> list[int]:
        """Nets whose value is an input to simulation: primary inputs and register outputs."""
        out = list(self.primary_inputs)
        out.extend(self.gates[r].output_net for r in self.registers)
        return sorted(out)

    @cached_property
    def program(self):
        """Compiled straight-line code for all combinational gates in topological order.

        Returns (code, per-gate row ranges, register count).
        """
        code: list = []
        ranges = {}
        # temporaries above the net registers are reused gate to gate
        nxt = len(self.nets)
        width = max(nxt, 1)
        for gid in topo_order(self):
            g = self.gates[gid]
            if g.is_register:
                continue
            start = len(code)
            slots = {pin: net for pin, net in zip(g.cell.inputs, g.input_nets)}
            out, used = compile_expr(g.cell.function, slots, nxt, code)
            code.append((K.OP_COPY, g.output_net, out, 0))
            ranges[gid] = (start, len(code))
            width = max(width, used)
        return np.array(code, dtype=np.int64).reshape(-1, 4), ranges, width


# ------------------------------------------------------------------ parsing

_COMMENT_RE = re.compile(r"//[^\n]*|/\*.*?\*/", re.S)
_IDENT = r"[A-Za-z_][A-Za-z0-9_$]*|\\\S+"
_MODULE_RE = re.compile(rf"\s*module\s+({_IDENT})\s*(?:\(([^)]*)\))?\s*;", re.S)
_DECL_RE = re.compile(r"\s*(input|output|wire)\b([^;]*);", re.S)
_INST_RE = re.compile(rf"\s*({_IDENT})\s+({_IDENT})\s*\((.*?)\)\s*;", re.S)
_CONN_RE = re.compile(rf"\s*\.\s*({_IDENT})\s*\(\s*({_IDENT})?\s*\)\s*(,|$)", re.S)
_END_RE = re.compile(r"\s*endmodule\b", re.S)
_NAME_RE = re.compile(rf"^(?:{_IDENT})$")


def _blank_comments(text):
    return _COMMENT_RE.sub(lambda m: re.sub(r"[^\n]", " ", m.group()), text)


def _linecol(text, pos):
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def parse_netlist(text: str, lib: CellLibrary) -> Netlist:
    src = _blank_comments(text)
    m = _MODULE_RE.match(src)
    if m is None:
        raise NetlistSyntaxError("expected 'module <name> (...);'", *_linecol(src, len(src) - len(src.lstrip())))
    name = m.group(1)
    pos = m.end()
    decls = []  # (kind, netname)
    insts = []  # (cell, inst, [(pin, net)], pos)
    while True:
        if _END_RE.match(src, pos):
            break
        d = _DECL_RE.match(src, pos)
        if d is not None:
            for part in d.group(2).split(","):
                net = part.strip()
                if not net:
                    continue
                if not _NAME_RE.match(net):
                    raise NetlistSyntaxError(f"bad net name {net!r}", *_linecol(src, d.start(2)))
                decls.append((d.group(1), net))
            pos = d.end()
            continue
        i = _INST_RE.match(src, pos)
        if i is None:
            at = pos + len(src[pos:]) - len(src[pos:].lstrip())
            if at >= len(src):
                raise NetlistSyntaxError("missing 'endmodule'", *_linecol(src, at))
            raise NetlistSyntaxError("expected declaration or cell instance", *_linecol(src, at))
        body = i.group(3)
        conns = []
        cpos = 0
        while cpos < len(body) and body[cpos:].strip():
            c = _CONN_RE.match(body, cpos)
            if c is None:
                raise NetlistSyntaxError("expected named connection '.PIN(net)'", *_linecol(src, i.start(3) + cpos))
            conns.append((c.group(1), c.group(2)))
            cpos = c.end()
        insts.append((i.group(1), i.group(2), conns, i.start(1)))
        pos = i.end()

    nets: list[str] = []
    index: dict[str, int] = {}

    def net_id(n):
        if n not in index:
            index[n] = len(nets)
            nets.append(n)
        return index[n]

    pis, pos_ = [], []
    for kind, n in decls:
        nid = net_id(n)
        if kind == "input":
            pis.append(nid)
        elif kind == "output":
            pos_.append(nid)

    gates = []
    for cell_name, inst, conns, at in insts:
        if cell_name not in lib:
            raise UnknownCellError(f"line {_linecol(src, at)[0]}: unknown cell {cell_name!r} for instance {inst}")
        cell = lib[cell_name]
        pins = {}
        for pin, net in conns:
            if pin in pins:
                raise NetlistSyntaxError(f"{inst}: pin {pin} connected twice", *_linecol(src, at))
            pins[pin] = net
        known = set(cell.inputs) | {cell.output}
        if not cell.is_register:
            extra = set(pins) - known
            if extra:
                raise NetlistSyntaxError(f"{inst}: {cell_name} has no pin(s) {sorted(extra)}", *_linecol(src, at))
        missing = [p for p in list(cell.inputs) + [cell.output] if pins.get(p) is None]
        if missing:
            raise NetlistSyntaxError(f"{inst}: unconnected pin(s) {missing}", *_linecol(src, at))
        ins = [net_id(pins[p]) for p in cell.inputs]
        out = net_id(pins[cell.output])
        gates.append((inst, cell, ins, out))
    return Netlist.build(name, nets, gates, pis, pos_)


def emit_netlist(n: Netlist) -> str:
    """Write ``n`` in the structural subset; deterministic and round-trip exact."""
    pis, pos_ = set(n.primary_inputs), set(n.primary_outputs)
    ports = [n.nets[i].name for i in n.primary_inputs] + [n.nets[i].name for i in n.primary_outputs if i not in pis]
    lines = [f"module {n.name} ({', '.join(ports)});"]
    for net in n.nets:
        if net.id in pis:
            lines.append(f"  input {net.name};")
        if net.id in pos_:
            lines.append(f"  output {net.name};")
        if net.id not in pis and net.id not in pos_:
            lines.append(f"  wire {net.name};")
    for g in n.gates:
        conns = [f".{pin}({n.nets[net].name})" for pin, net in zip(g.cell.inputs, g.input_nets)]
        conns.append(f".{g.cell.output}({n.nets[g.output_net].name})")
        lines.append(f"  {g.cell.name} {g.instance_name} ({', '.join(conns)});")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- analysis


def topo_order(n: Netlist) -> list[int]:
    """Registers first (by id), then combinational gates in Kahn order, ties broken by lowest id."""
    order = list(n.registers)
    pending = {}
    ready = []
    for g in n.gates:
        if g.is_register:
            continue
        deps = 0
        for net in g.input_nets:
            d = n.driver[net]
            if d != PI_DRIVER and not n.gates[d].is_register:
                deps += 1
        pending[g.id] = deps
        if deps == 0:
            ready.append(g.id)
    heapq.heapify(ready)
    while ready:
        gid = heapq.heappop(ready)
        order.append(gid)
        for sink, _ in n.fanout[n.gates[gid].output_net]:
            if n.gates[sink].is_register:
                continue
            pending[sink] -= 1
            if pending[sink] == 0:
                heapq.heappush(ready, sink)
    return order


def simulate_words(n: Netlist, assigned: Mapping[int, np.ndarray]) -> np.ndarray:
    """Simulate on packed words.

    ``assigned`` maps net id -> uint64 words. Every free source that feeds
    combinational logic or is an output must be assigned (unread ones
    default to 0). An assignment to a gate-driven net overrides that gate.
    Returns the ``(n_nets, n_words)`` array of net values.
    """
    pos = set(n.primary_outputs)
    free = [i for i in n.free_sources() if i in pos or any(not n.gates[g].is_register for g, _ in n.fanout[i])]
    missing = [n.nets[i].name for i in free if i not in assigned]
    if missing:
        raise MissingAssignmentError(f"no value for free source(s) {missing}")
    n_words = len(next(iter(assigned.values()))) if assigned else 1
    code, ranges, width = n.program
    forced = {net for net in assigned if n.driver[net] != PI_DRIVER and not n.gates[n.driver[net]].is_register}
    if forced:
        keep = np.ones(len(code), dtype=bool)
        for net in forced:
            start, stop = ranges[n.driver[net]]
            keep[start:stop] = False
        code = code[keep]
    regs = np.zeros((width, n_words), dtype=np.uint64)
    for net, words in assigned.items():
        regs[net] = words
    K.exec_program(code, regs)
    return regs[: len(n.nets)]


def simulate(n: Netlist, inputs: Mapping[str, object]) -> dict[str, np.ndarray]:
    """Evaluate every net for one or many input vectors.

    ``inputs`` maps net names (primary inputs, register outputs, or any net
    to force) to a bit or a 1-d array of bits. Returns net name -> bool array
    of the broadcast vector count (scalar inputs give length-1 arrays).
    """
    arrays = {k: np.atleast_1d(np.asarray(v, dtype=bool)) for k, v in inputs.items()}
    count = max((a.size for a in arrays.values()), default=1)
    assigned = {}
    for name, bits in arrays.items():
        if name not in n.net_index:
            raise KeyError(f"unknown net {name!r}")
        assigned[n.net_index[name]] = K.pack_bits(np.broadcast_to(bits, (count,)))
    values = simulate_words(n, assigned)
    return {net.name: K.unpack_bits(values[net.id], count) for net in n.nets}
