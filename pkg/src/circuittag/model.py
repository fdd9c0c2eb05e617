"""Desk-scale text encoder, graph transformer and heads with exact backward passes.

Parameters live in flat ``dict[str, np.ndarray]`` maps (float64) so that
optimizers, checkpoints and gradient checks treat every model alike.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import nn
from .library import PHYS_FIELDS

N_PHYS = len(PHYS_FIELDS)
PAD_ID = 0


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\[\]]*|\d+(?:\.\d+)?(?:[eE][-+]?\d+)?|\S")


@dataclass(frozen=True)
class Tokenizer:
    """Hashing tokenizer: identifiers and numbers are single tokens, every other symbol its own token."""

    vocab_size: int = 8192
    max_len: int = 512

    def split(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text)

    def token_id(self, token: str) -> int:
        return zlib.crc32(token.encode("utf-8")) % (self.vocab_size - 1) + 1

    def encode(self, text: str) -> tuple[list[int], bool]:
        """Token ids and whether the stream was truncated to ``max_len``."""
        ids = [self.token_id(t) for t in self.split(text)]
        return ids[: self.max_len], len(ids) > self.max_len

    def batch(self, texts) -> tuple[np.ndarray, np.ndarray]:
        """Padded id matrix (B, L) and lengths."""
        encoded = [self.encode(t)[0] for t in texts]
        if any(len(e) == 0 for e in encoded):
            raise ValueError("empty token stream")
        lengths = np.array([len(e) for e in encoded], dtype=np.int64)
        out = np.full((len(encoded), int(lengths.max())), PAD_ID, dtype=np.int64)
        for i, e in enumerate(encoded):
            out[i, : len(e)] = e
        return out, lengths


# ------------------------------------------------------------------- init


def _dense(rng, fan_in, fan_out):
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def _attn_params(p, rng, prefix, d):
    for name in ("q", "k", "v", "o"):
        p[prefix + "W" + name] = _dense(rng, d, d)
        p[prefix + "b" + name] = np.zeros(d)


def _block_params(p, rng, prefix, d):
    p[prefix + "ln1_g"] = np.ones(d)
    p[prefix + "ln1_b"] = np.zeros(d)
    _attn_params(p, rng, prefix + "attn.", d)
    p[prefix + "ln2_g"] = np.ones(d)
    p[prefix + "ln2_b"] = np.zeros(d)
    p[prefix + "ff_W1"] = _dense(rng, d, 4 * d)
    p[prefix + "ff_b1"] = np.zeros(4 * d)
    p[prefix + "ff_W2"] = _dense(rng, 4 * d, d) * 0.5
    p[prefix + "ff_b2"] = np.zeros(d)


def zeros_like(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ------------------------------------------------------------ text encoder


@dataclass(frozen=True)
class TextConfig:
    vocab_size: int = 8192
    d: int = 128
    out_dim: int = 64
    max_len: int = 512


class TextEncoder:
    """Token + learned position embeddings, one bidirectional attention block, mean pool, projection."""

    def __init__(self, cfg: TextConfig = TextConfig(), seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        self.tokenizer = Tokenizer(cfg.vocab_size, cfg.max_len)
        if params is None:
            rng = np.random.default_rng(seed)
            params = {
                "tok_emb": rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.d)),
                "pos_emb": rng.normal(0.0, 0.1, size=(cfg.max_len, cfg.d)),
            }
            _block_params(params, rng, "blk.", cfg.d)
            params["proj_W"] = _dense(rng, cfg.d, cfg.out_dim)
            params["proj_b"] = np.zeros(cfg.out_dim)
        self.params = params

    def forward(self, tokens: np.ndarray, lengths: np.ndarray):
        p = self.params
        B, L = tokens.shape
        if L == 0 or (lengths < 1).any():
            raise ValueError("empty token stream")
        valid = np.arange(L)[None, :] < lengths[:, None]
        x0 = p["tok_emb"][tokens] + p["pos_emb"][:L][None]
        mask = np.where(valid, 0.0, nn.NEG_INF)[:, None, :]
        h1, c_ln1 = nn.layernorm_fwd(x0, p["blk.ln1_g"], p["blk.ln1_b"])
        a, c_att = nn.attention_fwd(h1, p, "blk.attn.", mask)
        x1 = x0 + a
        h2, c_ln2 = nn.layernorm_fwd(x1, p["blk.ln2_g"], p["blk.ln2_b"])
        f1, _ = nn.linear_fwd(h2, p["blk.ff_W1"], p["blk.ff_b1"])
        g1, c_gelu = nn.gelu_fwd(f1)
        f2, _ = nn.linear_fwd(g1, p["blk.ff_W2"], p["blk.ff_b2"])
        x2 = x1 + f2
        w = valid / lengths[:, None]
        pooled = (x2 * w[:, :, None]).sum(axis=1)
        out, _ = nn.linear_fwd(pooled, p["proj_W"], p["proj_b"])
        cache = (tokens, L, w, c_ln1, c_att, c_ln2, h2, c_gelu, g1, pooled)
        return out, cache

    def backward(self, dout: np.ndarray, cache, grads: dict) -> dict:
        p = self.params
        tokens, L, w, c_ln1, c_att, c_ln2, h2, c_gelu, g1, pooled = cache
        dpooled, dW, db = nn.linear_bwd(dout, pooled, p["proj_W"])
        grads["proj_W"] += dW
        grads["proj_b"] += db
        dx2 = dpooled[:, None, :] * w[:, :, None]
        dx1 = dx2.copy()
        dg1, dW, db = nn.linear_bwd(dx2, g1, p["blk.ff_W2"])
        grads["blk.ff_W2"] += dW
        grads["blk.ff_b2"] += db
        df1 = nn.gelu_bwd(dg1, c_gelu)
        dh2, dW, db = nn.linear_bwd(df1, h2, p["blk.ff_W1"])
        grads["blk.ff_W1"] += dW
        grads["blk.ff_b1"] += db
        dx, dg, db = nn.layernorm_bwd(dh2, c_ln2)
        grads["blk.ln2_g"] += dg
        grads["blk.ln2_b"] += db
        dx1 += dx
        dx0 = dx1.copy()
        dh1 = nn.attention_bwd(dx1, c_att, p, "blk.attn.", grads)
        dx, dg, db = nn.layernorm_bwd(dh1, c_ln1)
        grads["blk.ln1_g"] += dg
        grads["blk.ln1_b"] += db
        dx0 += dx
        np.add.at(grads["tok_emb"], tokens, dx0)
        grads["pos_emb"][:L] += dx0.sum(axis=0)
        return grads

    def encode_texts(self, texts, batch_size: int = 256) -> np.ndarray:
        """Forward-only embeddings for many texts, in input order."""
        out = np.zeros((len(texts), self.cfg.out_dim))
        order = np.argsort([len(self.tokenizer.split(t)) for t in texts], kind="stable")
        for start in range(0, len(texts), batch_size):
            idx = order[start : start + batch_size]
            tokens, lengths = self.tokenizer.batch([texts[i] for i in idx])
            out[idx] = self.forward(tokens, lengths)[0]
        return out


# ----------------------------------------------------------- graph encoder


@dataclass(frozen=True)
class GraphConfig:
    in_dim: int = 64  # text embedding width
    d: int = 128
    out_dim: int = 64


@dataclass
class GraphBatch:
    """Several graphs flattened into one node list; [CLS] rows are appended after all nodes."""

    text: np.ndarray  # (M, in_dim)
    phys: np.ndarray  # (M, 8), normalized
    sizes: np.ndarray  # nodes per graph
    edges: np.ndarray  # (E, 2) global node indices
    masked: np.ndarray  # global node indices whose text is replaced by [MASK]

    @property
    def n_graphs(self) -> int:
        return len(self.sizes)

    @property
    def n_nodes(self) -> int:
        return int(self.sizes.sum())

    def graph_of_row(self) -> np.ndarray:
        node_graph = np.repeat(np.arange(self.n_graphs), self.sizes)
        return np.concatenate([node_graph, np.arange(self.n_graphs)])

    def attention_mask(self) -> np.ndarray:
        g = self.graph_of_row()
        return np.where(g[:, None] == g[None, :], 0.0, nn.NEG_INF)[None]

    def propagation(self) -> np.ndarray:
        """Symmetric-normalized adjacency with self loops; edges undirected, [CLS] linked to its graph."""
        M, B = self.n_nodes, self.n_graphs
        R = M + B
        A = np.eye(R)
        if len(self.edges):
            A[self.edges[:, 0], self.edges[:, 1]] = 1.0
            A[self.edges[:, 1], self.edges[:, 0]] = 1.0
        node_graph = np.repeat(np.arange(B), self.sizes)
        A[np.arange(M), M + node_graph] = 1.0
        A[M + node_graph, np.arange(M)] = 1.0
        dinv = 1.0 / np.sqrt(A.sum(axis=1))
        return A * dinv[:, None] * dinv[None, :]


def make_batch(graphs, text_embs, phys_norm, masked=None) -> GraphBatch:
    """``text_embs[i]`` is the (m_i, D) text embedding matrix of ``graphs[i]``; ``masked[i]`` local node ids."""
    sizes = np.array([g.m for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    edges = [np.array(g.edges, dtype=np.int64).reshape(-1, 2) + off for g, off in zip(graphs, offsets)]
    mids = []
    if masked is not None:
        mids = [np.asarray(mk, dtype=np.int64) + off for mk, off in zip(masked, offsets)]
    dim = text_embs[0].shape[1] if len(text_embs) else 0
    return GraphBatch(
        text=np.concatenate([np.asarray(t).reshape(-1, dim) for t in text_embs]) if len(text_embs) else np.zeros((0, dim)),
        phys=np.concatenate([phys_norm.transform(g.phys_matrix()) for g in graphs]) if graphs else np.zeros((0, N_PHYS)),
        sizes=sizes,
        edges=np.concatenate(edges) if edges else np.zeros((0, 2), np.int64),
        masked=np.concatenate(mids) if mids else np.zeros(0, np.int64),
    )


class GraphEncoder:
    """Input map of [text, phys] features, one block of global attention plus graph propagation, output map."""

    def __init__(self, cfg: GraphConfig = GraphConfig(), seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        if params is None:
            rng = np.random.default_rng(seed)
            params = {
                "in_W": _dense(rng, cfg.in_dim + N_PHYS, cfg.d),
                "in_b": np.zeros(cfg.d),
                "cls": rng.normal(0.0, 1.0, size=cfg.d),
                "mask_emb": rng.normal(0.0, 1.0 / np.sqrt(cfg.in_dim), size=cfg.in_dim),
            }
            _block_params(params, rng, "blk.", cfg.d)
            params["blk.gcn_W"] = _dense(rng, cfg.d, cfg.d)
            params["blk.gcn_b"] = np.zeros(cfg.d)
            params["out_W"] = _dense(rng, cfg.d, cfg.out_dim)
            params["out_b"] = np.zeros(cfg.out_dim)
        self.params = params

    def forward(self, batch: GraphBatch):
        """Returns (node embeddings (M, D), [CLS] embeddings (B, D), cache)."""
        p = self.params
        if batch.text.shape[1] != self.cfg.in_dim or batch.phys.shape[1] != N_PHYS:
            raise ValueError("dimension mismatch between batch features and encoder")
        if len(batch.text) != batch.n_nodes:
            raise ValueError("text embedding count differs from node count")
        M, B = batch.n_nodes, batch.n_graphs
        text = batch.text.copy()
        if len(batch.masked):
            text[batch.masked] = p["mask_emb"]
        feats = np.concatenate([text, batch.phys], axis=1)
        z, _ = nn.linear_fwd(feats, p["in_W"], p["in_b"])
        X = np.concatenate([z, np.tile(p["cls"], (B, 1))])[None]
        mask = batch.attention_mask()
        P = batch.propagation()
        h1, c_ln1 = nn.layernorm_fwd(X, p["blk.ln1_g"], p["blk.ln1_b"])
        a, c_att = nn.attention_fwd(h1, p, "blk.attn.", mask)
        hw, _ = nn.linear_fwd(h1[0], p["blk.gcn_W"], np.zeros_like(p["blk.gcn_b"]))
        gcn = (P @ hw + p["blk.gcn_b"])[None]
        x1 = X + a + gcn
        h2, c_ln2 = nn.layernorm_fwd(x1, p["blk.ln2_g"], p["blk.ln2_b"])
        f1, _ = nn.linear_fwd(h2, p["blk.ff_W1"], p["blk.ff_b1"])
        g1, c_gelu = nn.gelu_fwd(f1)
        f2, _ = nn.linear_fwd(g1, p["blk.ff_W2"], p["blk.ff_b2"])
        x2 = (x1 + f2)[0]
        out, _ = nn.linear_fwd(x2, p["out_W"], p["out_b"])
        cache = (batch, feats, c_ln1, c_att, h1, P, c_ln2, h2, c_gelu, g1, x2, M)
        return out[:M], out[M:], cache

    def backward(self, d_nodes, d_cls, cache, grads: dict) -> dict:
        p = self.params
        batch, feats, c_ln1, c_att, h1, P, c_ln2, h2, c_gelu, g1, x2, M = cache
        dout = np.concatenate([d_nodes, d_cls])
        dx2, dW, db = nn.linear_bwd(dout, x2, p["out_W"])
        grads["out_W"] += dW
        grads["out_b"] += db
        dx2 = dx2[None]
        dx1 = dx2.copy()
        dg1, dW, db = nn.linear_bwd(dx2, g1, p["blk.ff_W2"])
        grads["blk.ff_W2"] += dW
        grads["blk.ff_b2"] += db
        df1 = nn.gelu_bwd(dg1, c_gelu)
        dh2, dW, db = nn.linear_bwd(df1, h2, p["blk.ff_W1"])
        grads["blk.ff_W1"] += dW
        grads["blk.ff_b1"] += db
        dx, dg, db = nn.layernorm_bwd(dh2, c_ln2)
        grads["blk.ln2_g"] += dg
        grads["blk.ln2_b"] += db
        dx1 += dx
        dX = dx1.copy()
        dh1 = nn.attention_bwd(dx1, c_att, p, "blk.attn.", grads)
        grads["blk.gcn_b"] += dx1[0].sum(axis=0)
        dhw = P.T @ dx1[0]
        dh, dW, _ = nn.linear_bwd(dhw, h1[0], p["blk.gcn_W"])
        grads["blk.gcn_W"] += dW
        dh1 = dh1 + dh[None]
        dx, dg, db = nn.layernorm_bwd(dh1, c_ln1)
        grads["blk.ln1_g"] += dg
        grads["blk.ln1_b"] += db
        dX = (dX + dx)[0]
        grads["cls"] += dX[M:].sum(axis=0)
        dfeats, dW, db = nn.linear_bwd(dX[:M], feats, p["in_W"])
        grads["in_W"] += dW
        grads["in_b"] += db
        if len(batch.masked):
            grads["mask_emb"] += dfeats[batch.masked, : self.cfg.in_dim].sum(axis=0)
        return grads


# ------------------------------------------------------------------- heads


class Heads:
    """Gate-type classifier, size regressor (3-layer MLPs, hidden 256) and contrastive projections."""

    def __init__(self, dim: int, n_types: int, hidden: int = 256, seed: int = 0, params: dict | None = None):
        self.dim, self.n_types, self.hidden = dim, n_types, hidden
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for name, out in (("class", n_types), ("regr", n_types)):
                params[f"{name}.W1"] = _dense(rng, dim, hidden) * np.sqrt(2)
                params[f"{name}.b1"] = np.zeros(hidden)
                params[f"{name}.W2"] = _dense(rng, hidden, hidden) * np.sqrt(2)
                params[f"{name}.b2"] = np.zeros(hidden)
                params[f"{name}.W3"] = _dense(rng, hidden, out)
                params[f"{name}.b3"] = np.zeros(out)
            for name in ("graph", "align"):
                params[f"proj_{name}.W"] = _dense(rng, dim, dim)
                params[f"proj_{name}.b"] = np.zeros(dim)
        self.params = params

    def mlp(self, name, x):
        return mlp_fwd(self.params, name, x)

    def mlp_backward(self, name, dy, cache, grads):
        return mlp_bwd(self.params, name, dy, cache, grads)

    def project(self, name, x):
        p = self.params
        return nn.linear_fwd(x, p[f"proj_{name}.W"], p[f"proj_{name}.b"])

    def project_backward(self, name, dy, x, grads):
        dx, dW, db = nn.linear_bwd(dy, x, self.params[f"proj_{name}.W"])
        grads[f"proj_{name}.W"] += dW
        grads[f"proj_{name}.b"] += db
        return dx


def mlp_init(rng, prefix, dims) -> dict:
    p = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        gain = np.sqrt(2) if i < len(dims) - 1 else 1.0
        p[f"{prefix}.W{i}"] = _dense(rng, a, b) * gain
        p[f"{prefix}.b{i}"] = np.zeros(b)
    return p


def mlp_fwd(p, prefix, x):
    """ReLU MLP over consecutively numbered ``W1, b1, W2, ...`` parameters."""
    caches = []
    h = x
    i = 1
    while f"{prefix}.W{i}" in p:
        z, _ = nn.linear_fwd(h, p[f"{prefix}.W{i}"], p[f"{prefix}.b{i}"])
        caches.append(h)
        last = f"{prefix}.W{i + 1}" not in p
        if last:
            h = z
        else:
            h, _ = nn.relu_fwd(z)
            caches.append(z)
        i += 1
    return h, caches


def mlp_bwd(p, prefix, dy, caches, grads):
    n_layers = (len(caches) + 1) // 2
    d = dy
    for i in range(n_layers, 0, -1):
        if i < n_layers:
            d = nn.relu_bwd(d, caches[2 * (i - 1) + 1])
        x = caches[2 * (i - 1)]
        d, dW, db = nn.linear_bwd(d, x, p[f"{prefix}.W{i}"])
        grads[f"{prefix}.W{i}"] += dW
        grads[f"{prefix}.b{i}"] += db
    return d


# -------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = zeros_like(params)
        self.v = zeros_like(params)
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"CTAGCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, meta: dict | None = None):
    """Binary layout (little endian): magic, u32 version, u32 meta length, meta utf-8,
    u32 tensor count, then per tensor: u16 name length, name, u8 ndim, i64 dims, float64 data."""
    meta_bytes = "\n".join(f"{k}={v}" for k, v in sorted((meta or {}).items())).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(CKPT_MAGIC):
        raise CheckpointError("not a checkpoint file")
    pos = len(CKPT_MAGIC)
    version, meta_len = struct.unpack_from("<II", data, pos)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    meta_text = data[pos : pos + meta_len].decode("utf-8")
    meta = dict(line.split("=", 1) for line in meta_text.split("\n") if line)
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}q", data, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return params, meta
