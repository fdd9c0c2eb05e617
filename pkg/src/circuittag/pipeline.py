"""End-to-end stages shared by the command line and the acceptance suite."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict

import numpy as np

from .corpus import cone_items, expression_pairs, generate_corpus, step2_items
from .library import CellLibrary
from .model import GraphConfig, TextConfig, TextEncoder, load_checkpoint, make_batch
from .pretrain import Step2Model, TextCache, TrainConfig, choose_masks, embed_graphs, retrieval_accuracy, train_step1, train_step2
from .tag import GateTypeVocab, PhysNormalizer

STEP1_CORPUS_SEED = 7
STEP2_CORPUS_SEED = 11
HELD_OUT_PAIRS = 640
HELD_OUT_FRACTION = 0.15


def _flatten(corpus: dict) -> list:
    return [n for nets in corpus.values() for n in nets]


def step1_data(lib: CellLibrary, per_source: int = 60, seed: int = STEP1_CORPUS_SEED, held_out: int = HELD_OUT_PAIRS, netlists=None):
    """``(train pairs, held-out pairs)``; the held-out block comes from a fixed shuffle.

    Small corpora hold out at most a quarter, in whole groups of 64.
    """
    netlists = netlists if netlists is not None else _flatten(generate_corpus(lib, seed, per_source))
    pairs = expression_pairs(netlists, seed)
    order = np.random.default_rng(seed).permutation(len(pairs))
    pairs = [pairs[i] for i in order]
    held_out = min(held_out, len(pairs) // 4 // 64 * 64)
    return pairs[held_out:], pairs[:held_out]


def step2_data(lib: CellLibrary, per_source: int = 80, seed: int = STEP2_CORPUS_SEED, workers: int = 1, dim: int = 64, netlists=None):
    """``(train items, held-out items)`` split by circuit so no cone leaks across."""
    vocab = GateTypeVocab.from_library(lib)
    netlists = netlists if netlists is not None else _flatten(generate_corpus(lib, seed, per_source))
    cones = cone_items(netlists, lib, vocab=vocab, workers=workers)
    items = step2_items(cones, lib, seed, vocab=vocab, dim=dim, workers=workers)
    names = sorted({c.circuit for c in cones})
    rng = np.random.default_rng(seed)
    held = set(rng.permutation(names)[: max(1, int(round(HELD_OUT_FRACTION * len(names))))].tolist())
    train = [it for it, c in zip(items, cones) if c.circuit not in held]
    test = [it for it, c in zip(items, cones) if c.circuit in held]
    return train, test


def run_step1(run_dir, cfg: TrainConfig, train_pairs) -> TextEncoder:
    os.makedirs(run_dir, exist_ok=True)
    return train_step1(train_pairs, cfg, run_dir)


def run_step2(run_dir, cfg: TrainConfig, text: TextEncoder, train_items, n_types: int):
    os.makedirs(run_dir, exist_ok=True)
    model, norm = train_step2(train_items, text, n_types, cfg, run_dir=run_dir)
    with open(os.path.join(run_dir, "phys_norm.json"), "w") as f:
        f.write(norm.to_json())
    return model, norm


def evaluate_step1(enc: TextEncoder, held_pairs, group: int = 64) -> float:
    a = enc.encode_texts([x for x, _ in held_pairs])
    p = enc.encode_texts([y for _, y in held_pairs])
    return retrieval_accuracy(a, p, group)


def evaluate_step2(model: Step2Model, text: TextEncoder, norm: PhysNormalizer, held_items, mask_ratio: float = 0.15, seed: int = 0) -> dict:
    """Masked gate-type accuracy and size-prediction Pearson R (log1p counts) on held-out graphs."""
    cache = TextCache(text)
    graphs = [it.graph for it in held_items]
    masks = choose_masks(graphs, mask_ratio, np.random.default_rng(seed))
    b = make_batch(graphs, [cache(g) for g in graphs], norm, masks)
    nodes, _, _ = model.encoder.forward(b)
    logits, _ = model.heads.mlp("class", nodes[b.masked])
    labels = np.concatenate([g.labels()[mk] for g, mk in zip(graphs, masks)])
    _, cls = embed_graphs(model, cache, norm, graphs)
    pred, _ = model.heads.mlp("regr", cls)
    y = np.log1p(np.stack([g.size_target(model.n_types) for g in graphs]))
    return {
        "masked_accuracy": float(np.mean(logits.argmax(axis=1) == labels)),
        "chance": 1.0 / model.n_types,
        "size_pearson_r": float(np.corrcoef(pred.ravel(), y.ravel())[0, 1]),
    }


# ------------------------------------------------------------ persistence


def load_text_encoder(path) -> TextEncoder:
    params, meta = load_checkpoint(path)
    cfg = TextConfig(int(meta["vocab_size"]), int(meta["d"]), int(meta["out_dim"]), int(meta["max_len"]))
    return TextEncoder(cfg, params=params)


def load_step2(path, text_cfg: TextConfig) -> Step2Model:
    params, meta = load_checkpoint(path)
    cfg = TrainConfig(text=text_cfg, graph=GraphConfig(int(meta["in_dim"]), int(meta["d"]), int(meta["out_dim"])))
    return Step2Model(cfg, int(meta["n_types"]), params=params)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


MANIFEST_NAME = "manifest.json"


def write_manifest(run_dir, extra: dict | None = None):
    """Record every artifact in ``run_dir`` with its digest; no timestamps, so reruns are byte-identical."""
    files = {}
    for name in sorted(os.listdir(run_dir)):
        path = os.path.join(run_dir, name)
        if name != MANIFEST_NAME and os.path.isfile(path):
            files[name] = file_sha256(path)
    body = {"files": files, **(extra or {})}
    with open(os.path.join(run_dir, MANIFEST_NAME), "w") as f:
        json.dump(body, f, indent=1, sort_keys=True)
        f.write("\n")


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
