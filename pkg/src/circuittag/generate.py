"""Deterministic circuit generators: random netlists and templated datapath/control blocks."""

from __future__ import annotations

import numpy as np

from .library import CellLibrary
from .netlist import Netlist


class NetlistBuilder:
    """Incremental construction helper; ``build()`` validates."""

    def __init__(self, lib: CellLibrary, name: str = "top", rng=None, name_pool: int = 0):
        self.lib = lib
        self.name = name
        self.nets: list[str] = []
        self.net_ids: dict[str, int] = {}
        self.gates: list = []
        self.pis: list[int] = []
        self.pos: list[int] = []
        self._rng = rng
        self._pool = name_pool
        self._used: set = set()
        self._serial = 0

    def net(self, name=None) -> int:
        if name is None:
            name = f"n{len(self.nets)}"
            while name in self.net_ids:
                name = "_" + name
        if name in self.net_ids:
            return self.net_ids[name]
        self.net_ids[name] = len(self.nets)
        self.nets.append(name)
        return self.net_ids[name]

    def pi(self, name=None) -> int:
        nid = self.net(name if name is not None else f"in{len(self.pis)}")
        self.pis.append(nid)
        return nid

    def po(self, net: int):
        if net not in self.pos:
            self.pos.append(net)

    def instance_name(self, prefix="U") -> str:
        """Unique instance name; random numbering when a name pool was given."""
        while True:
            if self._pool and self._rng is not None:
                num = int(self._rng.integers(self._pool))
            else:
                num = self._serial
                self._serial += 1
            name = f"{prefix}{num}"
            if name not in self._used:
                self._used.add(name)
                return name

    def gate(self, cell: str, *inputs: int, out=None, inst=None) -> int:
        out = self.net() if out is None else out
        inst = inst if inst is not None else self.instance_name("R" if self.lib[cell].is_register else "U")
        self.gates.append([inst, self.lib[cell], list(inputs), out])
        return out

    def register(self, data=None, out=None, inst=None) -> int:
        """Add a DFF; ``data`` may be connected later through :meth:`connect_register`."""
        placeholder = data if data is not None else -1
        return self.gate("DFF", placeholder, out=out, inst=inst)

    def connect_register(self, q_net: int, data: int):
        for g in self.gates:
            if g[3] == q_net:
                g[2] = [data]
                return
        raise KeyError(q_net)

    def build(self) -> Netlist:
        return Netlist.build(self.name, self.nets, [tuple(g) for g in self.gates], self.pis, self.pos)


def _comb_cells(lib):
    return [c.name for c in lib.declared if not c.is_register]


def random_netlist(
    lib: CellLibrary,
    rng,
    n_gates: int,
    n_inputs: int = 8,
    n_registers: int = 0,
    n_outputs: int = 4,
    name: str = "rnd",
    locality: int = 12,
    tie_prob: float = 0.0,
    name_pool: int = 100_000,
) -> Netlist:
    """Random netlist: ``n_gates`` combinational gates plus ``n_registers`` DFFs with feedback.

    Gate inputs are drawn mostly from the ``locality`` most recent nets so that
    logic depth grows with size.
    """
    rng = np.random.default_rng(rng)
    b = NetlistBuilder(lib, name, rng=rng, name_pool=name_pool)
    cells = _comb_cells(lib)
    sources = [b.pi() for _ in range(n_inputs)]
    regs = [b.register() for _ in range(n_registers)]
    sources += regs
    comb_out = []
    for _ in range(n_gates):
        if tie_prob and rng.random() < tie_prob:
            out = b.gate("TIE1" if rng.random() < 0.5 else "TIE0")
        else:
            cell = lib[cells[rng.integers(len(cells))]]
            ins = []
            for _ in cell.inputs:
                if rng.random() < 0.7 and len(sources) > 1:
                    lo = max(0, len(sources) - locality)
                    ins.append(sources[rng.integers(lo, len(sources))])
                else:
                    ins.append(sources[rng.integers(len(sources))])
            out = b.gate(cell.name, *ins)
        sources.append(out)
        comb_out.append(out)
    candidates = comb_out if comb_out else sources[:n_inputs] + regs
    for q in regs:
        if candidates:
            b.connect_register(q, candidates[rng.integers(max(0, len(candidates) - 3 * locality), len(candidates))])
        else:
            b.connect_register(q, sources[0])
    if n_inputs == 0 and n_registers and not comb_out:
        raise ValueError("need at least one input or gate")
    read = {i for g in b.gates for i in g[2]}
    dangling = [o for o in comb_out if o not in read]
    for o in dangling:
        b.po(o)
    extra = [o for o in comb_out if o not in dangling]
    rng.shuffle(extra)
    for o in extra[: max(0, n_outputs - len(dangling))]:
        b.po(o)
    if not b.pos and regs:
        b.po(regs[0])
    return b.build()


# -------------------------------------------------------------- templates


def _full_adder(b: NetlistBuilder, rng, a, c, cin):
    style = int(rng.integers(3))
    p = b.gate("XOR2", a, c)
    s = b.gate("XOR2", p, cin)
    if style == 0:
        cout = b.gate("OR2", b.gate("AND2", a, c), b.gate("AND2", p, cin))
    elif style == 1:
        cout = b.gate("NAND2", b.gate("NAND2", a, c), b.gate("NAND2", p, cin))
    else:
        cout = b.gate("MUX2", a, cin, p)
    return s, cout


def ripple_adder(lib, rng, width: int, name="adder") -> Netlist:
    rng = np.random.default_rng(rng)
    b = NetlistBuilder(lib, name, rng=rng, name_pool=100_000)
    a = [b.pi() for _ in range(width)]
    c = [b.pi() for _ in range(width)]
    carry = b.pi()
    for i in range(width):
        s, carry = _full_adder(b, rng, a[i], c[i], carry)
        b.po(s)
    b.po(carry)
    return b.build()


def array_multiplier(lib, rng, width: int, name="mult") -> Netlist:
    rng = np.random.default_rng(rng)
    b = NetlistBuilder(lib, name, rng=rng, name_pool=100_000)
    a = [b.pi() for _ in range(width)]
    c = [b.pi() for _ in range(width)]
    rows = [[b.gate("AND2", a[i], c[j]) for i in range(width)] for j in range(width)]
    acc = rows[0]
    b.po(acc[0])
    for j in range(1, width):
        nxt = []
        carry = None
        for i in range(width):
            x = rows[j][i]
            y = acc[i + 1] if i + 1 < len(acc) else None
            if y is None and carry is None:
                nxt.append(x)
            elif y is None or carry is None:
                other = y if y is not None else carry
                nxt.append(b.gate("XOR2", x, other))
                carry = b.gate("AND2", x, other)
            else:
                s, carry = _full_adder(b, rng, x, y, carry)
                nxt.append(s)
        if carry is not None:
            nxt.append(carry)
        b.po(nxt[0])
        acc = nxt
    for o in acc[1:]:
        b.po(o)
    return b.build()


def comparator(lib, rng, width: int, name="cmp") -> Netlist:
    rng = np.random.default_rng(rng)
    b = NetlistBuilder(lib, name, rng=rng, name_pool=100_000)
    a = [b.pi() for _ in range(width)]
    c = [b.pi() for _ in range(width)]
    eq = [b.gate("XNOR2", a[i], c[i]) for i in range(width)]
    gt_bits = [b.gate("AND2", a[i], b.gate("INV", c[i])) for i in range(width)]
    all_eq = eq[0]
    for e in eq[1:]:
        all_eq = b.gate("AND2", all_eq, e)
    b.po(all_eq)
    gt = gt_bits[0]
    for i in range(1, width):
        gt = b.gate("OR2", gt_bits[i], b.gate("AND2", eq[i], gt))
    b.po(gt)
    lt = b.gate("NOR2", gt, all_eq)
    b.po(lt)
    return b.build()


def mux_tree(lib, rng, n_sel: int, name="mux") -> Netlist:
    rng = np.random.default_rng(rng)
    b = NetlistBuilder(lib, name, rng=rng, name_pool=100_000)
    data = [b.pi() for _ in range(1 << n_sel)]
    sel = [b.pi() for _ in range(n_sel)]
    level = data
    for s in sel:
        nxt = []
        for i in range(0, len(level), 2):
            if rng.random() < 0.5:
                nxt.append(b.gate("MUX2", level[i], level[i + 1], s))
            else:
                ns = b.gate("INV", s)
                nxt.append(b.gate("OR2", b.gate("AND2", level[i], ns), b.gate("AND2", level[i + 1], s)))
        level = nxt
    b.po(level[0])
    return b.build()


BLOCK_KINDS = ("adder", "multiplier", "comparator", "mux")


def datapath_block(lib, rng, kind: str) -> Netlist:
    rng = np.random.default_rng(rng)
    if kind == "adder":
        return ripple_adder(lib, rng, int(rng.integers(2, 7)))
    if kind == "multiplier":
        return array_multiplier(lib, rng, int(rng.integers(2, 4)))
    if kind == "comparator":
        return comparator(lib, rng, int(rng.integers(2, 7)))
    if kind == "mux":
        return mux_tree(lib, rng, int(rng.integers(1, 4)))
    raise ValueError(kind)


def fsm(lib, rng, n_state: int = 3, n_inputs: int = 2, name="fsm") -> Netlist:
    """Control-style circuit: state registers whose next state depends on themselves and inputs."""
    rng = np.random.default_rng(rng)
    b = NetlistBuilder(lib, name, rng=rng, name_pool=100_000)
    ins = [b.pi() for _ in range(n_inputs)]
    state = [b.register() for _ in range(n_state)]
    cells = ["AND2", "OR2", "NAND2", "NOR2", "XOR2", "AOI21", "OAI21", "INV"]
    for q in state:
        pool = list(state) + ins
        net = pool[rng.integers(len(pool))]
        for _ in range(int(rng.integers(2, 5))):
            cell = lib[cells[rng.integers(len(cells))]]
            others = [pool[rng.integers(len(pool))] for _ in range(len(cell.inputs) - 1)]
            net = b.gate(cell.name, net, *others)
        b.connect_register(q, net)
    decode = b.gate("AND2", state[0], state[-1])
    b.po(decode)
    return b.build()


def pipeline(lib, rng, width: int = 3, stages: int = 2, name="pipe") -> Netlist:
    """Data-style circuit: register stages separated by feed-forward logic, no feedback."""
    rng = np.random.default_rng(rng)
    b = NetlistBuilder(lib, name, rng=rng, name_pool=100_000)
    level = [b.pi() for _ in range(width)]
    cells = ["AND2", "OR2", "XOR2", "XNOR2", "NAND2", "MUX2", "BUF"]
    for _ in range(stages):
        comb = []
        for i in range(width):
            cell = lib[cells[rng.integers(len(cells))]]
            ins = [level[(i + j) % width] for j in range(len(cell.inputs))]
            comb.append(b.gate(cell.name, *ins))
        level = [b.register(data=c) for c in comb]
    for q in level:
        b.po(q)
    return b.build()
