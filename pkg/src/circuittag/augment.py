"""Function-preserving netlist transformations used to make positive graph views.

Transforms act on the netlist; the TAG is rebuilt afterwards so text and
structure stay consistent. Primary-output and register names never change,
which is what :func:`functionally_equal` matches on.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import _kernels as K
from .expr import Var, equivalent, substitute
from .library import CellLibrary
from .netlist import Netlist, simulate_words
from .tag import GateTypeVocab, TagGraph, build_tag

DEMORGAN_SWAP = {"NOR2": "AND2", "NAND2": "OR2", "AND2": "NOR2", "OR2": "NAND2"}
TRANSFORMS = ("double_inverter", "demorgan", "commute", "buffer_insert", "buffer_remove")


def symmetric_pairs(cell) -> list[tuple[int, int]]:
    """Input pin index pairs the cell function is symmetric in."""
    out = []
    for i, j in itertools.combinations(range(len(cell.inputs)), 2):
        a, b = cell.inputs[i], cell.inputs[j]
        swapped = substitute(cell.function, {a: Var(b), b: Var(a)})
        if equivalent(cell.function, swapped):
            out.append((i, j))
    return out


class _Editable:
    def __init__(self, n: Netlist):
        self.name = n.name
        self.nets = [net.name for net in n.nets]
        self.gates = [[g.instance_name, g.cell, [n.nets[i].name for i in g.input_nets], n.nets[g.output_net].name] for g in n.gates]
        self.pis = [n.nets[i].name for i in n.primary_inputs]
        self.pos = [n.nets[i].name for i in n.primary_outputs]
        self._names = {g[0] for g in self.gates}
        self._nets = set(self.nets)
        self._count = itertools.count()

    def fresh_inst(self):
        while True:
            name = f"AUG{next(self._count)}"
            if name not in self._names:
                self._names.add(name)
                return name

    def fresh_net(self):
        while True:
            name = f"aug_n{next(self._count)}"
            if name not in self._nets:
                self._nets.add(name)
                self.nets.append(name)
                return name

    def sinks(self, net):
        return [(gi, pi) for gi, g in enumerate(self.gates) for pi, x in enumerate(g[2]) if x == net]

    def driver(self, net):
        for gi, g in enumerate(self.gates):
            if g[3] == net:
                return gi
        return None

    def index(self):
        drivers = {g[3]: gi for gi, g in enumerate(self.gates)}
        read = {x for g in self.gates for x in g[2]}
        return drivers, read

    def build(self) -> Netlist:
        used = {x for g in self.gates for x in g[2]} | {g[3] for g in self.gates} | set(self.pis) | set(self.pos)
        nets = [x for x in self.nets if x in used]
        idx = {x: i for i, x in enumerate(nets)}
        gates = [(g[0], g[1], [idx[x] for x in g[2]], idx[g[3]]) for g in self.gates]
        return Netlist.build(self.name, nets, gates, [idx[x] for x in self.pis], [idx[x] for x in self.pos])


def _insert_chain(ed: _Editable, lib, net: str, cells):
    """Insert a chain of single-input cells on ``net`` without renaming outputs, inputs or register outputs."""
    gi = ed.driver(net)
    if gi is not None and not ed.gates[gi][1].is_register:
        src = ed.fresh_net()
        ed.gates[gi][3] = src
        for cell in cells[:-1]:
            nxt = ed.fresh_net()
            ed.gates.append([ed.fresh_inst(), lib[cell], [src], nxt])
            src = nxt
        ed.gates.append([ed.fresh_inst(), lib[cells[-1]], [src], net])
    else:
        sinks = ed.sinks(net)
        src = net
        for cell in cells:
            nxt = ed.fresh_net()
            ed.gates.append([ed.fresh_inst(), lib[cell], [src], nxt])
            src = nxt
        for si, pin in sinks:
            ed.gates[si][2][pin] = src


def _sites(ed: _Editable, lib, kind):
    if kind in ("double_inverter", "buffer_insert"):
        cell = "INV" if kind == "double_inverter" else "BUF"
        if cell not in lib:
            return []
        drivers, read = ed.index()
        out = []
        for net in ed.nets:
            gi = drivers.get(net)
            if gi is not None and not ed.gates[gi][1].is_register:
                out.append(net)
            elif (gi is not None or net in ed.pis) and net in read:
                out.append(net)
        return out
    if kind == "demorgan":
        return [gi for gi, g in enumerate(ed.gates) if g[1].name in DEMORGAN_SWAP and DEMORGAN_SWAP[g[1].name] in lib and "INV" in lib]
    if kind == "commute":
        return [(gi, pair) for gi, g in enumerate(ed.gates) if not g[1].is_register for pair in _pairs(g[1])]
    if kind == "buffer_remove":
        pos = set(ed.pos)
        return [gi for gi, g in enumerate(ed.gates) if g[1].name == "BUF" and g[3] not in pos]
    raise ValueError(kind)


_PAIR_CACHE: dict = {}


def _pairs(cell):
    if cell.name not in _PAIR_CACHE:
        _PAIR_CACHE[cell.name] = symmetric_pairs(cell)
    return _PAIR_CACHE[cell.name]


def _apply(ed: _Editable, lib, kind, site):
    if kind == "double_inverter":
        _insert_chain(ed, lib, site, ["INV", "INV"])
    elif kind == "buffer_insert":
        _insert_chain(ed, lib, site, ["BUF"])
    elif kind == "demorgan":
        g = ed.gates[site]
        inverted = []
        for x in g[2]:
            y = ed.fresh_net()
            ed.gates.append([ed.fresh_inst(), lib["INV"], [x], y])
            inverted.append(y)
        g[1] = lib[DEMORGAN_SWAP[g[1].name]]
        g[2] = inverted
    elif kind == "commute":
        gi, (i, j) = site
        ins = ed.gates[gi][2]
        ins[i], ins[j] = ins[j], ins[i]
    elif kind == "buffer_remove":
        g = ed.gates[site]
        src, dst = g[2][0], g[3]
        for si, pin in ed.sinks(dst):
            ed.gates[si][2][pin] = src
        del ed.gates[site]


def augment_netlist(n: Netlist, lib: CellLibrary, seed: int) -> Netlist:
    """Apply 1-5 random function-preserving transforms; deterministic given ``seed``.

    When nothing applies the input is returned with a commutative swap if one
    exists, else unchanged.
    """
    rng = np.random.default_rng(seed)
    ed = _Editable(n)
    steps = int(rng.integers(1, 6))
    applied = 0
    for _ in range(steps):
        options = [(kind, s) for kind in TRANSFORMS for s in [_sites(ed, lib, kind)] if s]
        if not options:
            break
        kind, sites = options[rng.integers(len(options))]
        _apply(ed, lib, kind, sites[rng.integers(len(sites))])
        applied += 1
    if not applied:
        swaps = _sites(ed, lib, "commute")
        if swaps:
            _apply(ed, lib, "commute", swaps[0])
    return ed.build()


def augment_graph(g: TagGraph, source: Netlist, lib: CellLibrary, seed: int, k: int = 2, vocab: GateTypeVocab | None = None):
    """Positive view of ``g``: transform its source netlist, then rebuild the TAG.

    Returns ``(augmented netlist, augmented TagGraph)``.
    """
    if g.source != source.name:
        raise ValueError(f"graph {g.source!r} was not built from netlist {source.name!r}")
    aug = augment_netlist(source, lib, seed)
    return aug, build_tag(aug, lib, k, vocab)


def _observed(n: Netlist) -> dict:
    """Name -> net id for everything whose function must be preserved."""
    out = {"po:" + n.nets[i].name: i for i in n.primary_outputs}
    for r in n.registers:
        out["reg:" + n.gates[r].instance_name] = n.gates[r].input_nets[0]
    return out


def functionally_equal(a: Netlist, b: Netlist, vectors: int = 256, seed: int = 0, exhaustive_limit: int = 12) -> bool:
    """Outputs and register next-states agree; exhaustive when there are at most ``exhaustive_limit`` sources."""
    free_a = {a.nets[i].name for i in a.free_sources()}
    free_b = {b.nets[i].name for i in b.free_sources()}
    obs_a, obs_b = _observed(a), _observed(b)
    if free_a != free_b or set(obs_a) != set(obs_b):
        return False
    names = sorted(free_a)
    if len(names) <= exhaustive_limit:
        words = K.exhaustive_patterns(len(names))
        count = 1 << len(names)
    else:
        rng = np.random.default_rng(seed)
        count = vectors
        words = np.stack([K.pack_bits(rng.integers(0, 2, vectors).astype(bool)) for _ in names]) if names else np.zeros((0, 1), np.uint64)
    va = simulate_words(a, {a.net_index[x]: words[i] for i, x in enumerate(names)})
    vb = simulate_words(b, {b.net_index[x]: words[i] for i, x in enumerate(names)})
    for key, ia in obs_a.items():
        ib = obs_b[key]
        if not np.array_equal(K.unpack_bits(va[ia], count), K.unpack_bits(vb[ib], count)):
            return False
    return True

