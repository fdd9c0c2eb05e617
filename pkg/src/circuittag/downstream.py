"""Fine-tuning heads, evaluation metrics and toy downstream tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .corpus import ConeItem, cone_items, item_seed
from .generate import BLOCK_KINDS, datapath_block, fsm, pipeline
from .library import PHYS_FIELDS, CellLibrary
from .model import Adam, mlp_bwd, mlp_fwd, mlp_init, zeros_like
from .netlist import PI_DRIVER, Netlist, topo_order
from .tag import GateTypeVocab, build_tag


def circuit_embedding(cone_embeddings) -> np.ndarray:
    """Component-wise sum of the cone [CLS] embeddings."""
    arr = np.asarray(cone_embeddings, dtype=np.float64)
    if arr.ndim != 2 or len(arr) == 0:
        raise ValueError("need at least one cone embedding")
    return arr.sum(axis=0)


# ----------------------------------------------------------------- metrics


@dataclass
class MetricReport:
    kind: str  # "class" | "regr"
    n: int
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    pearson_r: float | None = None
    mape: float | None = None
    per_class: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in self.__dict__.items() if v is not None}, sort_keys=True)

    def table(self) -> str:
        if self.kind == "class":
            rows = [("Acc.", self.accuracy), ("Prec.", self.precision), ("Recall", self.recall), ("F1", self.f1)]
        else:
            rows = [("R", self.pearson_r), ("MAPE", self.mape)]
        lines = [f"{name:<8}{value:>8.4f}" for name, value in rows]
        for c, d in sorted(self.per_class.items()):
            lines.append(f"  {c:<14} P={d['precision']:.3f} R={d['recall']:.3f} F1={d['f1']:.3f} n={d['support']}")
        return "\n".join(lines) + "\n"


def classification_metrics(pred, truth, names=None) -> MetricReport:
    """Accuracy and macro precision/recall/F1 over every class present in ``pred`` or ``truth``."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or len(truth) == 0:
        raise ValueError("pred and truth must be equal-length, non-empty")
    classes = np.union1d(pred, truth)
    per, ps, rs, fs = {}, [], [], []
    for c in classes:
        tp = int(np.sum((pred == c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(f)
        label = names[int(c)] if names is not None else str(c)
        per[label] = {"precision": p, "recall": r, "f1": f, "support": tp + fn}
    return MetricReport(
        "class", len(truth), float(np.mean(pred == truth)), float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs)), per_class=per
    )


def regression_metrics(pred, truth) -> MetricReport:
    """Pearson R and mean absolute percentage error (a fraction; zero targets are skipped)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or len(truth) < 2:
        raise ValueError("pred and truth must be equal-length with at least 2 items")
    pc, tc = pred - pred.mean(), truth - truth.mean()
    denom = np.sqrt((pc * pc).sum() * (tc * tc).sum())
    r = float((pc * tc).sum() / denom) if denom > 0 else 0.0
    nz = truth != 0
    mape = float(np.mean(np.abs(pred[nz] - truth[nz]) / np.abs(truth[nz]))) if nz.any() else 0.0
    return MetricReport("regr", len(truth), pearson_r=max(-1.0, min(1.0, r)), mape=mape)


def metrics(pred, truth, kind: str = "class", names=None) -> MetricReport:
    if kind == "class":
        return classification_metrics(pred, truth, names)
    if kind == "regr":
        return regression_metrics(pred, truth)
    raise ValueError(f"unknown metric kind {kind!r}")


# ---------------------------------------------------------------- finetune


@dataclass
class FinetuneConfig:
    hidden: int = 256
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


@dataclass
class TaskHead:
    kind: str
    params: dict
    mean: np.ndarray
    std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    def predict(self, X) -> np.ndarray:
        out, _ = mlp_fwd(self.params, "head", (np.asarray(X) - self.mean) / self.std)
        if self.kind == "class":
            return out.argmax(axis=1)
        return out[:, 0] * self.y_std + self.y_mean


def finetune(X_train, y_train, X_test, y_test, kind: str = "class", cfg: FinetuneConfig | None = None, names=None):
    """Train a 3-layer MLP head on frozen features; returns ``(head, report on the test split)``."""
    cfg = cfg or FinetuneConfig()
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    if kind == "class":
        if len(np.unique(y_train)) < 2:
            raise ValueError("classification needs at least two classes in the training set")
        n_out = int(max(y_train.max(), np.max(y_test)) + 1)
    else:
        n_out = 1
    rng = np.random.default_rng(cfg.seed)
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    std[std < 1e-12] = 1.0
    Xn = (X_train - mean) / std
    y_mean, y_std = 0.0, 1.0
    if kind == "regr":
        y_mean = float(y_train.mean())
        y_std = float(y_train.std()) or 1.0
    params = mlp_init(rng, "head", [X_train.shape[1], cfg.hidden, cfg.hidden, n_out])
    opt = Adam(params, lr=cfg.lr)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(Xn))
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            out, caches = mlp_fwd(params, "head", Xn[idx])
            if kind == "class":
                _, d = nn.cross_entropy(out, y_train[idx])
            else:
                t = (y_train[idx] - y_mean) / y_std
                d = (2.0 * (out[:, 0] - t) / len(idx))[:, None]
            grads = zeros_like(params)
            mlp_bwd(params, "head", d, caches, grads)
            opt.step(params, grads)
    head = TaskHead(kind, params, mean, std, y_mean, y_std)
    return head, metrics(head.predict(X_test), np.asarray(y_test), kind, names)


# -------------------------------------------------------------- toy tasks


@dataclass
class TaskDataset:
    """Items reference a graph and optionally a node (``-1`` means graph-level)."""

    name: str
    kind: str
    graphs: list
    items: np.ndarray  # (N, 2) graph index, node index
    labels: np.ndarray
    split: np.ndarray  # bool, True = test
    classes: tuple = ()

    def __post_init__(self):
        if len(self.items) != len(self.labels) or len(self.labels) != len(self.split):
            raise ValueError("items, labels and split must align")
        test_graphs = set(self.items[self.split, 0].tolist())
        if test_graphs & set(self.items[~self.split, 0].tolist()):
            raise ValueError("train and test splits share a graph")

    def subset(self, test: bool):
        m = self.split == test
        return self.items[m], self.labels[m]


def max_delay(n: Netlist) -> float:
    """Longest path delay through combinational gates (sum of cell delays)."""
    arrival = np.zeros(len(n.nets))
    for gid in topo_order(n):
        g = n.gates[gid]
        if g.is_register:
            continue
        start = max((arrival[i] for i in g.input_nets if n.driver[i] != PI_DRIVER), default=0.0)
        arrival[g.output_net] = start + g.cell.phys.delay
    return float(arrival.max()) if len(arrival) else 0.0


def _split_graphs(n_graphs, rng, test_fraction):
    test = np.zeros(n_graphs, dtype=bool)
    test[rng.permutation(n_graphs)[: max(1, int(round(test_fraction * n_graphs)))]] = True
    return test


def gen_toy_tasks(lib: CellLibrary, seed: int = 0, n_blocks: int = 80, n_seq: int = 60, test_fraction: float = 0.25) -> dict:
    """Gate-function, register-kind, area and slack-proxy tasks from templated generators."""
    vocab = GateTypeVocab.from_library(lib)
    rng = np.random.default_rng(seed)
    out = {}

    # gate function: every gate of a datapath block labelled with the block kind
    graphs, items, labels = [], [], []
    for i in range(n_blocks):
        kind = i % len(BLOCK_KINDS)
        n = datapath_block(lib, item_seed(seed, "block", i), BLOCK_KINDS[kind])
        g = build_tag(n, lib, vocab=vocab)
        graphs.append(g)
        for node in range(g.m):
            items.append((i, node))
            labels.append(kind)
    test_g = _split_graphs(len(graphs), rng, test_fraction)
    items = np.array(items, dtype=np.int64)
    out["gate_function"] = TaskDataset("gate_function", "class", graphs, items, np.array(labels), test_g[items[:, 0]], BLOCK_KINDS)

    # register kind, area and slack proxy: one item per register cone
    cones: list[ConeItem] = []
    reg_labels = []
    for i in range(n_seq):
        s = item_seed(seed, "seq", i)
        r = np.random.default_rng(s)
        if i % 2 == 0:
            n = fsm(lib, r, n_state=int(r.integers(2, 6)), n_inputs=int(r.integers(1, 4)), name=f"fsm{i}")
        else:
            n = pipeline(lib, r, width=int(r.integers(2, 6)), stages=int(r.integers(1, 4)), name=f"pipe{i}")
        for c in cone_items([n], lib, vocab=vocab):
            if c.cone.startswith("PO:"):
                continue
            cones.append(c)
            reg_labels.append(i % 2)
    graphs = [c.graph for c in cones]
    items = np.array([(j, -1) for j in range(len(graphs))], dtype=np.int64).reshape(-1, 2)
    test_g = _split_graphs(len(graphs), rng, test_fraction)
    out["register"] = TaskDataset("register", "class", graphs, items, np.array(reg_labels), test_g, ("state", "data"))
    area = np.array([sum(g.cell.phys.area for g in c.sub.gates) for c in cones])
    out["area"] = TaskDataset("area", "regr", graphs, items, area, test_g)
    slack = np.array([max_delay(c.sub) for c in cones])
    out["slack"] = TaskDataset("slack", "regr", graphs, items, slack, test_g)
    return out


def phys_features(task: TaskDataset, norm) -> np.ndarray:
    """Text-ablated features: normalized physical vector of the item's node, or the graph mean."""
    rows = []
    for gi, ni in task.items:
        p = norm.transform(task.graphs[gi].phys_matrix())
        rows.append(p[ni] if ni >= 0 else p.mean(axis=0))
    return np.array(rows).reshape(-1, len(PHYS_FIELDS))


def embedding_features(task: TaskDataset, node_emb, cls_emb) -> np.ndarray:
    """Per-item features from precomputed node embeddings (list per graph) and [CLS] embeddings."""
    return np.array([node_emb[gi][ni] if ni >= 0 else cls_emb[gi] for gi, ni in task.items])


def evaluate_task(task: TaskDataset, features: np.ndarray, cfg: FinetuneConfig | None = None):
    m = task.split
    names = task.classes if task.kind == "class" else None
    return finetune(features[~m], task.labels[~m], features[m], task.labels[m], task.kind, cfg, names)
