"""Central finite-difference checks of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .model import TextConfig, TextEncoder, GraphConfig, make_batch, zeros_like
from .pretrain import Step2Model, TrainConfig, align_loss, info_nce, masked_gate_loss, size_loss

H = 1e-6
FLOOR = 1e-8
TOLERANCE = 1e-4


def relative_error(a: float, f: float) -> float:
    return abs(a - f) / max(abs(a) + abs(f), FLOOR)


def check(loss_fn, params: dict, grads: dict, samples: int = 100, seed: int = 0, h: float = H) -> float:
    """Max relative error over ``samples`` randomly chosen scalar parameters.

    ``loss_fn()`` must read ``params`` in place. Parameters whose analytic and
    numeric derivatives are both below the floor count as agreeing.
    """
    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = np.array([params[k].size for k in names], dtype=np.float64)
    worst = 0.0
    for _ in range(samples):
        k = names[rng.choice(len(names), p=np.sqrt(sizes) / np.sqrt(sizes).sum())]
        flat = params[k].reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        numeric = (up - down) / (2 * h)
        worst = max(worst, relative_error(float(grads[k].reshape(-1)[i]), numeric))
    return worst


# -------------------------------------------------- fixed-seed toy batches


def _toy_setup(seed=0):
    from .corpus import toy_step2_items

    cfg = TrainConfig(
        seed=seed,
        text=TextConfig(vocab_size=257, d=8, out_dim=6, max_len=128),
        graph=GraphConfig(in_dim=6, d=8, out_dim=6),
    )
    text = TextEncoder(cfg.text, seed=seed)
    items, n_types, norm = toy_step2_items(text, cfg, n_graphs=4, seed=seed)
    return cfg, text, items, n_types, norm


def gradcheck_all(samples: int = 100, seed: int = 0) -> dict:
    """Max relative error for each of the five losses on a fixed-seed toy batch."""
    cfg, text, items, n_types, norm = _toy_setup(seed)
    rng = np.random.default_rng(seed)
    out = {}

    # expression contrast through the text encoder
    from .pretrain import step1_loss, TextCache

    a = [it.graph.nodes[0].text for it in items]
    p = [it.augmented.nodes[0].text for it in items]
    g = zeros_like(text.params)
    step1_loss(text, a, p, cfg.tau, g)
    out["expr"] = check(lambda: step1_loss(text, a, p, cfg.tau), text.params, g, samples, seed)

    # graph-side losses, each isolated through a selector on the step-2 parts
    model = Step2Model(cfg, n_types)
    cache = TextCache(text)
    masks = [np.array([0]) if it.graph.m == 1 else np.sort(rng.choice(it.graph.m, 2, replace=False)) for it in items]

    def part(name):
        return lambda: _isolated(model, items, cache, norm, masks, cfg.tau, name)[0]

    for name in ("gate", "graph", "size", "align"):
        loss, grads = _isolated(model, items, cache, norm, masks, cfg.tau, name, want=True)
        out[name] = check(part(name), model.params, grads, samples, seed)
    return out


def _isolated(model, items, cache, norm, masks, tau, which, want=False):
    """One loss of step 2 with its exact gradient (the others are switched off)."""
    enc, heads = model.encoder, model.heads
    graphs = [it.graph for it in items]
    T = [cache(g) for g in graphs]
    ge, gh = model.split_grads()
    if which == "gate":
        b = make_batch(graphs, T, norm, masks)
        nodes, cls, c = enc.forward(b)
        labels = np.concatenate([g.labels()[mk] for g, mk in zip(graphs, masks)])
        logits, cc = heads.mlp("class", nodes[b.masked])
        loss, dl = masked_gate_loss(logits, labels)
        if want:
            dn = np.zeros_like(nodes)
            np.add.at(dn, b.masked, heads.mlp_backward("class", dl, cc, gh))
            enc.backward(dn, np.zeros_like(cls), c, ge)
    else:
        b = make_batch(graphs, T, norm)
        nodes, cls, c = enc.forward(b)
        if which == "size":
            pred, cc = heads.mlp("regr", cls)
            loss, dp = size_loss(pred, np.stack([g.size_target(model.n_types) for g in graphs]))
            dcls = heads.mlp_backward("regr", dp, cc, gh) if want else None
        elif which == "align":
            z, _ = heads.project("align", cls)
            loss, dz = align_loss(z, np.stack([it.rtl for it in items]), np.stack([it.layout for it in items]), tau)
            dcls = heads.project_backward("align", dz, cls, gh) if want else None
        else:
            aug = [it.augmented for it in items]
            ba = make_batch(aug, [cache(g) for g in aug], norm)
            _, cls_a, ca = enc.forward(ba)
            z, _ = heads.project("graph", cls)
            za, _ = heads.project("graph", cls_a)
            loss, dz, dza = info_nce(z, za, tau)
            dcls = None
            if want:
                dcls = heads.project_backward("graph", dz, cls, gh)
                enc.backward(np.zeros((ba.n_nodes, cls_a.shape[1])), heads.project_backward("graph", dza, cls_a, gh), ca, ge)
        if want:
            enc.backward(np.zeros_like(nodes), dcls, c, ge)
    if want:
        return loss, model.merge_grads(ge, gh)
    return loss, None
