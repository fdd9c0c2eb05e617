"""Pre-training objectives, cross-stage proxy encoders and the two-step schedule.

Step 1 trains the text encoder contrastively on (expression, rewritten
expression) pairs. Step 2 freezes it and trains the graph encoder and heads on
the unweighted sum of the masked-gate, graph-contrastive, size and alignment
losses.
"""

from __future__ import annotations

import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .model import Adam, GraphConfig, GraphEncoder, Heads, TextConfig, TextEncoder, make_batch, save_checkpoint, zeros_like
from .tag import PhysNormalizer, TagGraph

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Non-finite loss; ``checkpoint`` names the last good checkpoint (or None)."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    tau: float = 0.07
    mask_ratio: float = 0.15
    batch_size: int = 32
    batch_size2: int = 8
    lr: float = 1e-3
    epochs1: int = 1
    epochs2: int = 1
    seed: int = 0
    log_size: bool = True
    text: TextConfig = field(default_factory=TextConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)

    def validate(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.mask_ratio < 1:
            raise ValueError("mask_ratio must be in (0, 1)")
        if self.batch_size < 2 or self.batch_size2 < 2:
            raise ValueError("batch sizes must be >= 2")
        if self.graph.in_dim != self.text.out_dim:
            raise ValueError("graph input width must equal text output width")


# ------------------------------------------------------------------ losses


def info_nce(anchors: np.ndarray, positives: np.ndarray, tau: float):
    """Mean contrastive loss of each anchor against all k positives in the batch.

    Anchor i is scored against positive j for every j: the matching positive
    is the numerator and the other anchors' positives are the negatives, so
    the denominator has k terms and never contains the anchor itself.
    Embeddings are L2-normalized first. Returns ``(loss, d_anchors, d_positives)``.
    """
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise ValueError("anchors and positives must be index-aligned (k, D) arrays")
    if not tau > 0:
        raise ValueError("tau must be positive")
    k = len(anchors)
    a, ca = nn.l2norm_fwd(anchors)
    p, cp = nn.l2norm_fwd(positives)
    s = a @ p.T / tau
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite similarity")
    logp = nn.log_softmax(s, axis=1)
    loss = -np.trace(logp) / k
    ds = (np.exp(logp) - np.eye(k)) / (k * tau)
    da = nn.l2norm_bwd(ds @ p, ca)
    dp = nn.l2norm_bwd(ds.T @ a, cp)
    return float(loss), da, dp


def masked_gate_loss(logits: np.ndarray, labels: np.ndarray):
    """Cross-entropy over the masked nodes, averaged over every masked node in the batch."""
    if len(labels) == 0:
        raise ValueError("empty mask set")
    loss, d = nn.cross_entropy(logits, np.asarray(labels))
    return float(loss), d


def size_loss(pred: np.ndarray, counts: np.ndarray, log_scale: bool = True):
    """(1/n) * sum over types of squared error, averaged over graphs; counts log1p-scaled by default."""
    pred = np.atleast_2d(pred)
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    if pred.shape != counts.shape:
        raise ValueError(f"size target has {counts.shape[-1]} types, head predicts {pred.shape[-1]}")
    y = np.log1p(counts) if log_scale else counts
    diff = pred - y
    B, n = diff.shape
    return float((diff * diff).sum() / (n * B)), 2.0 * diff / (n * B)


def align_loss(netlist: np.ndarray, rtl: np.ndarray, layout: np.ndarray, tau: float):
    """Sum of two contrastive terms with RTL and layout embeddings as positives.

    The cross-stage encoders are frozen, so only the netlist gradient is returned.
    """
    if not (len(netlist) == len(rtl) == len(layout)):
        raise ValueError("misaligned cross-stage batch")
    l1, d1, _ = info_nce(netlist, rtl, tau)
    l2, d2, _ = info_nce(netlist, layout, tau)
    return l1 + l2, d1 + d2


# ------------------------------------------------------- cross-stage proxies

_EXPR_FIELD = " expr="
_PHYS_FIELD = " phys="


def node_expression(text: str) -> str:
    start = text.index(_EXPR_FIELD) + len(_EXPR_FIELD)
    return text[start : text.rindex(_PHYS_FIELD)]


def _hash_token(token: str, salt: bytes) -> int:
    return zlib.crc32(salt + token.encode("utf-8"))


def rtl_proxy_embed(g: TagGraph, dim: int = 64) -> np.ndarray:
    """Signed hashed bag of the operator and symbol tokens in the cone's expressions, unit-normalized."""
    from .model import Tokenizer

    tok = Tokenizer()
    v = np.zeros(dim)
    for node in g.nodes:
        for t in tok.split(node_expression(node.text)):
            h = _hash_token(t, b"rtl")
            v[h % dim] += 1.0 if (h >> 16) & 1 else -1.0
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


LAYOUT_SEED = 20250
LAYOUT_HIDDEN = 32


def _layout_weights(dim):
    rng = np.random.default_rng(LAYOUT_SEED)
    return (
        rng.normal(0, 1 / np.sqrt(8), (8, LAYOUT_HIDDEN)),
        rng.normal(0, 1 / np.sqrt(LAYOUT_HIDDEN), (LAYOUT_HIDDEN, dim)),
        rng.normal(0, 1, dim),
    )


def layout_proxy_embed(g: TagGraph, jitter_seed: int = 0, dim: int = 64) -> np.ndarray:
    """Frozen random two-layer graph convolution over jittered (+-10%) physical values, sum-pooled."""
    W0, W1, bias = _layout_weights(dim)
    rng = np.random.default_rng(jitter_seed)
    x = g.phys_matrix() * rng.uniform(0.9, 1.1, size=(g.m, 8))
    x = np.log1p(x)
    A = np.eye(g.m)
    for a, b in g.edges:
        A[a, b] = A[b, a] = 1.0
    dinv = 1.0 / np.sqrt(A.sum(axis=1))
    P = A * dinv[:, None] * dinv[None, :]
    h = np.tanh(P @ x @ W0)
    v = (P @ h @ W1).sum(axis=0) + bias
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------- helpers


def _check(loss, ckpt):
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}", ckpt)


def _write_jsonl(fh, record):
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


def batches(n: int, size: int, rng) -> list:
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size) if len(order[i : i + size]) >= 2]


# ------------------------------------------------------------------ step 1


def step1_loss(enc: TextEncoder, anchors, positives, tau, grads=None):
    """Contrastive loss on a batch of text pairs; accumulates gradients when ``grads`` is given."""
    ta, la = enc.tokenizer.batch(anchors)
    tp, lp = enc.tokenizer.batch(positives)
    ya, ca = enc.forward(ta, la)
    yp, cp = enc.forward(tp, lp)
    loss, da, dp = info_nce(ya, yp, tau)
    if grads is not None:
        enc.backward(da, ca, grads)
        enc.backward(dp, cp, grads)
    return loss


def train_step1(pairs, cfg: TrainConfig, run_dir=None, enc: TextEncoder | None = None) -> TextEncoder:
    """Train the text encoder on (expression, equivalent expression) pairs.

    Writes ``step1_loss.jsonl`` and ``text.ckpt`` (after every epoch) into
    ``run_dir`` when given. Raises :class:`DivergenceError` on a non-finite loss.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    enc = enc or TextEncoder(cfg.text, seed=cfg.seed)
    opt = Adam(enc.params, lr=cfg.lr)
    ckpt = None
    fh = open(os.path.join(run_dir, "step1_loss.jsonl"), "w") if run_dir else None
    step = 0
    try:
        for epoch in range(cfg.epochs1):
            for idx in batches(len(pairs), cfg.batch_size, rng):
                grads = zeros_like(enc.params)
                try:
                    loss = step1_loss(enc, [pairs[i][0] for i in idx], [pairs[i][1] for i in idx], cfg.tau, grads)
                except FloatingPointError as exc:
                    raise DivergenceError(str(exc), ckpt) from exc
                _check(loss, ckpt)
                opt.step(enc.params, grads)
                _write_jsonl(fh, {"step": step, "epoch": epoch, "loss_expr": loss})
                step += 1
            if run_dir:
                ckpt = os.path.join(run_dir, "text.ckpt")
                save_checkpoint(ckpt, enc.params, {"kind": "text", "epoch": epoch, **_dims(cfg.text)})
    finally:
        if fh:
            fh.close()
    return enc


def _dims(c) -> dict:
    return {k: v for k, v in asdict(c).items()}


# ------------------------------------------------------------------ step 2


@dataclass
class Step2Item:
    """One training cone: its TAG, a function-preserving view of it, and cross-stage proxies."""

    graph: TagGraph
    augmented: TagGraph
    rtl: np.ndarray
    layout: np.ndarray


class Step2Model:
    """Graph encoder plus heads, sharing one flat parameter map for optimization and checkpoints."""

    def __init__(self, cfg: TrainConfig, n_types: int, params: dict | None = None):
        self.cfg = cfg
        self.n_types = n_types
        if params is None:
            self.encoder = GraphEncoder(cfg.graph, seed=cfg.seed + 1)
            self.heads = Heads(cfg.graph.out_dim, n_types, seed=cfg.seed + 2)
        else:
            self.encoder = GraphEncoder(cfg.graph, params={k[6:]: v for k, v in params.items() if k.startswith("graph.")})
            self.heads = Heads(cfg.graph.out_dim, n_types, params={k[6:]: v for k, v in params.items() if k.startswith("heads.")})
        self.params = {"graph." + k: v for k, v in self.encoder.params.items()}
        self.params.update({"heads." + k: v for k, v in self.heads.params.items()})

    def split_grads(self):
        ge = zeros_like(self.encoder.params)
        gh = zeros_like(self.heads.params)
        return ge, gh

    def merge_grads(self, ge, gh):
        out = {"graph." + k: v for k, v in ge.items()}
        out.update({"heads." + k: v for k, v in gh.items()})
        return out


def choose_masks(graphs, ratio, rng):
    """At least one masked node per graph, ``ratio`` of nodes otherwise."""
    out = []
    for g in graphs:
        count = max(1, int(round(ratio * g.m)))
        out.append(np.sort(rng.choice(g.m, size=count, replace=False)))
    return out


def step2_losses(model: Step2Model, items, text_of, norm: PhysNormalizer, masks, tau, log_size=True, want_grads=True):
    """The four step-2 losses on one batch; returns ``(parts, grads)``.

    ``text_of(graph)`` returns the frozen (m, D) text embeddings of a graph.
    """
    enc, heads = model.encoder, model.heads
    graphs = [it.graph for it in items]
    T = [text_of(g) for g in graphs]
    ge, gh = model.split_grads()

    # masked gate-type prediction
    bm = make_batch(graphs, T, norm, masks)
    nodes_m, cls_m, cache_m = enc.forward(bm)
    labels = np.concatenate([g.labels()[mk] for g, mk in zip(graphs, masks)])
    h_m = nodes_m[bm.masked]
    logits, c_cls = heads.mlp("class", h_m)
    l_gate, dlogits = masked_gate_loss(logits, labels)

    # original view: size regression, graph contrast anchor, alignment
    bo = make_batch(graphs, T, norm)
    _, cls_o, cache_o = enc.forward(bo)
    pred, c_reg = heads.mlp("regr", cls_o)
    counts = np.stack([g.size_target(model.n_types) for g in graphs])
    l_size, dpred = size_loss(pred, counts, log_size)
    z_o, _ = heads.project("graph", cls_o)
    z_al, _ = heads.project("align", cls_o)
    R = np.stack([it.rtl for it in items])
    L = np.stack([it.layout for it in items])
    l_align, dz_al = align_loss(z_al, R, L, tau)

    # augmented view
    aug = [it.augmented for it in items]
    ba = make_batch(aug, [text_of(g) for g in aug], norm)
    _, cls_a, cache_a = enc.forward(ba)
    z_a, _ = heads.project("graph", cls_a)
    l_graph, dz_o, dz_a = info_nce(z_o, z_a, tau)

    parts = {"loss_gate": l_gate, "loss_graph": l_graph, "loss_size": l_size, "loss_align": l_align}
    parts["loss_total"] = l_gate + l_graph + l_size + l_align
    if not want_grads:
        return parts, None

    dh_m = heads.mlp_backward("class", dlogits, c_cls, gh)
    d_nodes = np.zeros_like(nodes_m)
    np.add.at(d_nodes, bm.masked, dh_m)
    enc.backward(d_nodes, np.zeros_like(cls_m), cache_m, ge)

    dcls_o = heads.mlp_backward("regr", dpred, c_reg, gh)
    dcls_o = dcls_o + heads.project_backward("graph", dz_o, cls_o, gh)
    dcls_o = dcls_o + heads.project_backward("align", dz_al, cls_o, gh)
    enc.backward(np.zeros((bo.n_nodes, cls_o.shape[1])), dcls_o, cache_o, ge)

    dcls_a = heads.project_backward("graph", dz_a, cls_a, gh)
    enc.backward(np.zeros((ba.n_nodes, cls_a.shape[1])), dcls_a, cache_a, ge)
    return parts, model.merge_grads(ge, gh)


class TextCache:
    """Frozen text embeddings keyed by node text."""

    def __init__(self, enc: TextEncoder):
        self.enc = enc
        self._cache: dict = {}

    def warm(self, graphs):
        todo = sorted({n.text for g in graphs for n in g.nodes} - self._cache.keys())
        if todo:
            for t, v in zip(todo, self.enc.encode_texts(todo)):
                self._cache[t] = v

    def __call__(self, g: TagGraph) -> np.ndarray:
        self.warm([g])
        return np.stack([self._cache[n.text] for n in g.nodes])


def train_step2(items, text: TextEncoder, n_types: int, cfg: TrainConfig, norm: PhysNormalizer | None = None, run_dir=None, model: Step2Model | None = None):
    """Train the graph encoder and heads with the text encoder frozen.

    Returns ``(model, normalizer)``. Writes ``step2_loss.jsonl`` and
    ``graph.ckpt`` into ``run_dir`` when given.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed + 7)
    norm = norm or PhysNormalizer.fit([it.graph for it in items])
    model = model or Step2Model(cfg, n_types)
    cache = TextCache(text)
    cache.warm([g for it in items for g in (it.graph, it.augmented)])
    opt = Adam(model.params, lr=cfg.lr)
    ckpt = None
    fh = open(os.path.join(run_dir, "step2_loss.jsonl"), "w") if run_dir else None
    step = 0
    try:
        for epoch in range(cfg.epochs2):
            for idx in batches(len(items), cfg.batch_size2, rng):
                batch = [items[i] for i in idx]
                masks = choose_masks([it.graph for it in batch], cfg.mask_ratio, rng)
                try:
                    parts, grads = step2_losses(model, batch, cache, norm, masks, cfg.tau, cfg.log_size)
                except FloatingPointError as exc:
                    raise DivergenceError(str(exc), ckpt) from exc
                _check(parts["loss_total"], ckpt)
                opt.step(model.params, grads)
                _write_jsonl(fh, {"step": step, "epoch": epoch, **parts})
                step += 1
            if run_dir:
                ckpt = os.path.join(run_dir, "graph.ckpt")
                save_checkpoint(ckpt, model.params, {"kind": "graph", "epoch": epoch, "n_types": n_types, **_dims(cfg.graph)})
    finally:
        if fh:
            fh.close()
    return model, norm


def embed_graphs(model: Step2Model, text_of, norm: PhysNormalizer, graphs, batch_size: int = 64):
    """Node embeddings (list of (m, D)) and [CLS] embeddings (B, D), forward only."""
    nodes, cls = [], []
    for i in range(0, len(graphs), batch_size):
        chunk = graphs[i : i + batch_size]
        b = make_batch(chunk, [text_of(g) for g in chunk], norm)
        n, c, _ = model.encoder.forward(b)
        offsets = np.cumsum([0] + [g.m for g in chunk])
        nodes.extend(n[offsets[j] : offsets[j + 1]] for j in range(len(chunk)))
        cls.append(c)
    return nodes, (np.concatenate(cls) if cls else np.zeros((0, model.cfg.graph.out_dim)))


def retrieval_accuracy(anchors: np.ndarray, candidates: np.ndarray, group: int = 64) -> float:
    """Fraction of anchors whose own positive ranks first by cosine among ``group`` candidates."""
    a = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
    c = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
    hits = total = 0
    for s in range(0, len(a) - group + 1, group):
        sim = a[s : s + group] @ c[s : s + group].T
        hits += int((sim.argmax(axis=1) == np.arange(group)).sum())
        total += group
    if total == 0:
        raise ValueError(f"need at least {group} held-out pairs")
    return hits / total
