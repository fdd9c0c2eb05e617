"""Text-attributed graphs built from (sub)netlists, and their line-delimited dataset format.

Node text template (version 1)::

    name=<instance> type=<cell> expr=<canonical k-hop expression> phys=<8 values, 4 significant digits>

Register nodes carry their data-input source symbol as expression.

Dataset files start with ``#TAGSET 1 vocab=<hash> types=<comma list>`` and hold
one graph per line: ``TAG1<TAB><crc32 hex><TAB><json payload>``.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .expr import to_text
from .extract import DEFAULT_HOPS, expr_of_gate, source_symbol
from .library import PHYS_FIELDS, CellLibrary, fmt_float
from .netlist import Netlist

TEXT_TEMPLATE_VERSION = 1
RECORD_TAG = "TAG1"
DATASET_HEADER = "#TAGSET 1"


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ChecksumError(DatasetFormatError):
    pass


class GateTypeVocab:
    """Ordered cell-type names; labels are indices into this list."""

    def __init__(self, names):
        self.names = tuple(names)
        self._index = {n: i for i, n in enumerate(self.names)}
        if len(self._index) != len(self.names):
            raise ValueError("duplicate gate type")

    @classmethod
    def from_library(cls, lib: CellLibrary) -> "GateTypeVocab":
        return cls(c.name for c in lib)

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name) -> int:
        return self._index[name]

    def __eq__(self, other):
        return isinstance(other, GateTypeVocab) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    @property
    def hash(self) -> str:
        return hashlib.sha256(",".join(self.names).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TagNode:
    id: int
    text: str
    phys: tuple  # 8 raw floats, 9 significant digits
    label: int


@dataclass(frozen=True)
class TagGraph:
    source: str
    nodes: tuple
    edges: tuple  # (driver node, sink node)
    vocab_hash: str = ""
    cls_present: bool = False

    @property
    def m(self) -> int:
        return len(self.nodes)

    def phys_matrix(self) -> np.ndarray:
        return np.array([n.phys for n in self.nodes], dtype=np.float64).reshape(-1, len(PHYS_FIELDS))

    def labels(self) -> np.ndarray:
        return np.array([n.label for n in self.nodes], dtype=np.int64)

    def size_target(self, n_types: int) -> np.ndarray:
        """Per-type gate counts."""
        return np.bincount(self.labels(), minlength=n_types).astype(np.float64)


def _q9(x) -> float:
    return float(fmt_float(x))


def instance_phys(n: Netlist, gid: int) -> tuple:
    """Library attributes of the gate, with load replaced by the capacitance it drives."""
    g = n.gates[gid]
    values = list(g.cell.phys.as_tuple())
    load = sum(n.gates[s].cell.phys.capacitance for s, _ in n.fanout[g.output_net])
    values[PHYS_FIELDS.index("load")] = load
    return tuple(_q9(v) for v in values)


def node_text(name: str, cell: str, expr_text: str, phys) -> str:
    return f"name={name} type={cell} expr={expr_text} phys=" + ",".join(fmt_float(v, 4) for v in phys)


def build_tag(sub: Netlist, lib: CellLibrary, k: int = DEFAULT_HOPS, vocab: GateTypeVocab | None = None, exprs=None) -> TagGraph:
    """One node per gate, edges along nets (driver -> sink)."""
    vocab = vocab or GateTypeVocab.from_library(lib)
    nodes = []
    for g in sub.gates:
        if g.is_register:
            expr_text = source_symbol(sub, g.input_nets[0])
        else:
            e = exprs[g.id] if exprs is not None else expr_of_gate(sub, g.id, k)
            expr_text = to_text(e)
        phys = instance_phys(sub, g.id)
        nodes.append(TagNode(g.id, node_text(g.instance_name, g.cell.name, expr_text, phys), phys, vocab[g.cell.name]))
    edges = []
    for g in sub.gates:
        for net in g.input_nets:
            d = sub.driver[net]
            if d >= 0:
                edges.append((d, g.id))
    return TagGraph(sub.name, tuple(nodes), tuple(sorted(set(edges))), vocab.hash)


# ------------------------------------------------------------ physical norm


@dataclass
class PhysNormalizer:
    """Per-component z-normalization fitted on a corpus."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(len(PHYS_FIELDS)))
    std: np.ndarray = field(default_factory=lambda: np.ones(len(PHYS_FIELDS)))

    @classmethod
    def fit(cls, graphs) -> "PhysNormalizer":
        rows = [g.phys_matrix() for g in graphs if g.m]
        data = np.concatenate(rows) if rows else np.zeros((0, len(PHYS_FIELDS)))
        if len(data) == 0:
            return cls()
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(mean, std)

    def transform(self, phys: np.ndarray) -> np.ndarray:
        return (np.asarray(phys, dtype=np.float64) - self.mean) / self.std

    def to_json(self) -> str:
        return json.dumps({"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]})

    @classmethod
    def from_json(cls, text: str) -> "PhysNormalizer":
        d = json.loads(text)
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


# ------------------------------------------------------------ serialization


def _payload(g: TagGraph) -> str:
    body = {
        "source": g.source,
        "m": g.m,
        "e": len(g.edges),
        "vocab": g.vocab_hash,
        "nodes": [[n.text, n.label, list(n.phys)] for n in g.nodes],
        "edges": [list(e) for e in g.edges],
    }
    return json.dumps(body, separators=(",", ":"), ensure_ascii=False)


def serialize(g: TagGraph) -> str:
    payload = _payload(g)
    crc = zlib.crc32(payload.encode("utf-8")) & 0xFFFFFFFF
    return f"{RECORD_TAG}\t{crc:08x}\t{payload}"


def deserialize(line: str, lineno: int = 1) -> TagGraph:
    parts = line.rstrip("\n").split("\t", 2)
    if len(parts) != 3:
        raise DatasetFormatError("expected 3 tab-separated fields", lineno)
    tag, crc, payload = parts
    if tag != RECORD_TAG:
        raise DatasetFormatError(f"unsupported record version {tag!r}", lineno)
    payload_col = len(tag) + len(crc) + 3
    try:
        expected = int(crc, 16)
    except ValueError:
        raise DatasetFormatError("bad checksum field", lineno, len(tag) + 2) from None
    if zlib.crc32(payload.encode("utf-8")) & 0xFFFFFFFF != expected:
        raise ChecksumError("checksum mismatch", lineno, len(tag) + 2)
    try:
        body = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"bad payload: {exc.msg}", lineno, payload_col + exc.pos) from None
    try:
        nodes = tuple(TagNode(i, text, tuple(float(v) for v in phys), int(label)) for i, (text, label, phys) in enumerate(body["nodes"]))
        edges = tuple((int(a), int(b)) for a, b in body["edges"])
        g = TagGraph(body["source"], nodes, edges, body["vocab"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"bad payload structure: {exc}", lineno, payload_col) from None
    if g.m != body["m"] or len(edges) != body["e"]:
        raise DatasetFormatError("header counts disagree with records", lineno, payload_col)
    for a, b in edges:
        if not (0 <= a < g.m and 0 <= b < g.m):
            raise DatasetFormatError(f"edge ({a}, {b}) references a missing node", lineno, payload_col)
    return g


def write_dataset(path, graphs, vocab: GateTypeVocab):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{DATASET_HEADER} vocab={vocab.hash} types={','.join(vocab.names)}\n")
        for g in graphs:
            f.write(serialize(g) + "\n")


def read_dataset(path) -> tuple[GateTypeVocab, list]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    head = lines[0].split()
    if len(head) != 4 or " ".join(head[:2]) != DATASET_HEADER:
        raise DatasetFormatError("missing or unsupported dataset header", 1)
    vocab = GateTypeVocab(head[3].split("=", 1)[1].split(","))
    if head[2] != f"vocab={vocab.hash}":
        raise DatasetFormatError("vocabulary hash mismatch", 1)
    graphs = []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        g = deserialize(line, i)
        if g.vocab_hash != vocab.hash:
            raise DatasetFormatError("graph vocabulary differs from dataset header", i)
        graphs.append(g)
    return vocab, graphs
