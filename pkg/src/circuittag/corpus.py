"""Toy circuit corpora, training items and dataset statistics."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .augment import augment_graph
from .cones import chunk
from .expr import to_text
from .extract import DEFAULT_HOPS, gate_expressions
from .generate import BLOCK_KINDS, datapath_block, fsm, pipeline, random_netlist
from .library import CellLibrary, demo_library
from .model import Tokenizer
from .netlist import Netlist, emit_netlist, parse_netlist
from .rewrite import rewrite_equiv
from .tag import GateTypeVocab, PhysNormalizer, TagGraph, build_tag

SOURCES = ("random", "fsm", "pipeline", "datapath")
MAX_REWRITE_STEPS = 10


def item_seed(*parts) -> int:
    """Stable per-item seed, independent of processing order and worker count."""
    return zlib.crc32("/".join(str(p) for p in parts).encode("utf-8"))


def generate_circuit(lib: CellLibrary, source: str, seed: int, name: str | None = None) -> Netlist:
    rng = np.random.default_rng(seed)
    name = name or f"{source}{seed}"
    if source == "random":
        return random_netlist(
            lib, rng, int(rng.integers(15, 50)), n_inputs=int(rng.integers(3, 8)),
            n_registers=int(rng.integers(2, 7)), n_outputs=2, name=name,
        )
    if source == "fsm":
        return fsm(lib, rng, n_state=int(rng.integers(2, 6)), n_inputs=int(rng.integers(1, 4)), name=name)
    if source == "pipeline":
        return pipeline(lib, rng, width=int(rng.integers(2, 6)), stages=int(rng.integers(1, 4)), name=name)
    if source == "datapath":
        kind = BLOCK_KINDS[int(rng.integers(len(BLOCK_KINDS)))]
        n = datapath_block(lib, rng, kind)
        return _renamed(n, name)
    raise ValueError(f"unknown source {source!r}")


def _renamed(n: Netlist, name: str) -> Netlist:
    gates = [(g.instance_name, g.cell, list(g.input_nets), g.output_net) for g in n.gates]
    return Netlist.build(name, [x.name for x in n.nets], gates, list(n.primary_inputs), list(n.primary_outputs))


def generate_corpus(lib: CellLibrary, seed: int, per_source: int, sources=SOURCES) -> dict:
    """``source -> [Netlist]`` with ``per_source`` circuits each."""
    return {
        s: [generate_circuit(lib, s, item_seed(seed, s, i), f"{s}{i}") for i in range(per_source)]
        for s in sources
    }


# -------------------------------------------------------- bundled corpus

TOY_SEED = 2024
TOY_PER_SOURCE = 6


def bundled_corpus(lib: CellLibrary | None = None) -> dict:
    """The toy corpus shipped with the package, ``source -> [Netlist]`` in file-name order."""
    lib = lib or demo_library()
    root = resources.files("circuittag") / "data" / "toy"
    out: dict = {s: [] for s in SOURCES}
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".v"):
            source = entry.name.split("_", 1)[0]
            out.setdefault(source, []).append(parse_netlist(entry.read_text(encoding="utf-8"), lib))
    return out


def write_corpus(corpus: dict, directory) -> list:
    """Write ``<source>_<index>.v`` files; returns the paths written."""
    import os

    paths = []
    for source, nets in corpus.items():
        for i, n in enumerate(nets):
            path = os.path.join(directory, f"{source}_{i:03d}.v")
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(emit_netlist(n))
            paths.append(path)
    return paths


# ------------------------------------------------------------ cone items


@dataclass(frozen=True)
class ConeItem:
    circuit: str
    cone: str
    sub: Netlist
    graph: TagGraph


def cone_items(netlists, lib: CellLibrary, k: int = DEFAULT_HOPS, vocab: GateTypeVocab | None = None, workers: int = 1) -> list:
    """TAGs of every non-empty cone of every netlist, in input order."""
    vocab = vocab or GateTypeVocab.from_library(lib)

    def one(n):
        return [
            ConeItem(n.name, c.root_name, c.subnetlist, build_tag(c.subnetlist, lib, k, vocab))
            for c in chunk(n).cones
            if c.subnetlist.gates
        ]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(one, netlists))
    else:
        groups = [one(n) for n in netlists]
    return [it for grp in groups for it in grp]


def expression_pairs(netlists, seed: int = 0, k: int = DEFAULT_HOPS, limit: int | None = None) -> list:
    """Distinct gate expressions paired with a randomly rewritten equivalent (1-10 rule steps)."""
    seen, pairs = set(), []
    for n in netlists:
        for gid, e in gate_expressions(n, k).items():
            text = to_text(e)
            if text in seen:
                continue
            seen.add(text)
            s = item_seed(seed, n.name, gid)
            steps = 1 + s % MAX_REWRITE_STEPS
            pairs.append((text, to_text(rewrite_equiv(e, s, steps))))
            if limit is not None and len(pairs) >= limit:
                return pairs
    return pairs


def step2_items(cones, lib: CellLibrary, seed: int = 0, k: int = DEFAULT_HOPS, vocab=None, dim: int = 64, workers: int = 1) -> list:
    """Training items (graph, augmented view, RTL proxy, layout proxy) for each cone."""
    from .pretrain import Step2Item, layout_proxy_embed, rtl_proxy_embed

    vocab = vocab or GateTypeVocab.from_library(lib)

    def one(it: ConeItem):
        s = item_seed(seed, it.circuit, it.cone)
        _, aug = augment_graph(it.graph, it.sub, lib, s, k, vocab)
        return Step2Item(it.graph, aug, rtl_proxy_embed(it.graph, dim), layout_proxy_embed(it.graph, s, dim))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, cones))
    return [one(it) for it in cones]


def toy_step2_items(text_encoder, cfg, n_graphs: int = 4, seed: int = 0):
    """A small fixed batch for gradient checks: ``(items, n_types, normalizer)``."""
    lib = demo_library()
    vocab = GateTypeVocab.from_library(lib)
    nets = [generate_circuit(lib, "random", item_seed(seed, "gc", i), f"gc{i}") for i in range(n_graphs)]
    cones = [c for c in cone_items(nets, lib, vocab=vocab) if 2 <= c.graph.m <= 12]
    if len(cones) < n_graphs:
        cones = cone_items(nets, lib, vocab=vocab)
    items = step2_items(cones[:n_graphs], lib, seed, vocab=vocab, dim=cfg.graph.out_dim)
    return items, len(vocab), PhysNormalizer.fit([it.graph for it in items])


# ---------------------------------------------------------------- stats

STATS_COLUMNS = ("Source", "#Expr", "Tokens(avg)", "#Graphs", "Nodes(avg)")


@dataclass(frozen=True)
class SourceStats:
    source: str
    expressions: int
    tokens: int  # total tokens over all expressions
    graphs: int
    nodes: int  # total nodes over all graphs

    @property
    def avg_tokens(self) -> float:
        return self.tokens / self.expressions if self.expressions else 0.0

    @property
    def avg_nodes(self) -> float:
        return self.nodes / self.graphs if self.graphs else 0.0


def corpus_stats(corpus: dict, lib: CellLibrary, k: int = DEFAULT_HOPS) -> list:
    """Per-source counts followed by a ``Total`` row."""
    tok = Tokenizer()
    rows = []
    for source, nets in corpus.items():
        n_expr = n_tok = 0
        for n in nets:
            for e in gate_expressions(n, k).values():
                n_expr += 1
                n_tok += len(tok.split(to_text(e)))
        items = cone_items(nets, lib, k)
        rows.append(SourceStats(source, n_expr, n_tok, len(items), sum(it.graph.m for it in items)))
    rows.append(SourceStats("Total", *(sum(getattr(r, f) for r in rows) for f in ("expressions", "tokens", "graphs", "nodes"))))
    return rows


def format_stats(rows) -> str:
    lines = ["{:<10} {:>8} {:>12} {:>8} {:>11}".format(*STATS_COLUMNS)]
    lines.append("-" * len(lines[0]))
    for r in rows:
        if r.source == "Total":
            lines.append("-" * len(lines[0]))
        lines.append(f"{r.source:<10} {r.expressions:>8} {r.avg_tokens:>12.2f} {r.graphs:>8} {r.avg_nodes:>11.2f}")
    return "\n".join(lines) + "\n"
