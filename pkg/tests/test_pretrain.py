import json
import math

import numpy as np
import pytest

from circuittag.corpus import bundled_corpus, cone_items, toy_step2_items
from circuittag.model import GraphConfig, TextConfig, TextEncoder, make_batch
from circuittag.pretrain import (
    DivergenceError, Step2Model, TextCache, TrainConfig, align_loss, choose_masks, info_nce,
    layout_proxy_embed, masked_gate_loss, node_expression, retrieval_accuracy, rtl_proxy_embed,
    size_loss, step2_losses, train_step1, train_step2,
)

# log1p(exp(-2 / 0.07)), from an independent two-line script
GAP_K2_TAU007 = 3.904687043200766e-13
# log(1 + 3 / e)
ALIGN_ORTHO_TERM = 0.7436683806286791


def _small_cfg(**kw):
    return TrainConfig(
        text=TextConfig(vocab_size=257, d=8, out_dim=6, max_len=128),
        graph=GraphConfig(in_dim=6, d=8, out_dim=6),
        **kw,
    )


def _ref_info_nce(a, p, tau):
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    total = 0.0
    for i in range(len(a)):
        s = [float(a[i] @ p[j]) / tau for j in range(len(p))]
        total -= s[i] - math.log(sum(math.exp(x) for x in s))
    return total / len(a)


@pytest.mark.parametrize("k", [2, 4, 16, 256])
@pytest.mark.parametrize("tau", [0.07, 1.0])
def test_info_nce_uniform_is_ln_k(k, tau):
    x = np.ones((k, 5))
    assert abs(info_nce(x, x, tau)[0] - math.log(k)) < 1e-9


def test_info_nce_k4_value():
    assert info_nce(np.ones((4, 3)), np.ones((4, 3)), 0.07)[0] == pytest.approx(1.3863, abs=1e-4)


def test_info_nce_opposite_pair_tau_007():
    e = np.array([[1.0, 0.0, 0.0]])
    a = np.concatenate([e, -e])
    assert info_nce(a, a, 0.07)[0] == pytest.approx(GAP_K2_TAU007, rel=1e-9)


def test_info_nce_batch_of_one_is_zero():
    x = np.array([[0.3, -1.0, 2.0]])
    assert info_nce(x, x * 2, 0.07)[0] == 0.0


def test_info_nce_matches_loop_reference():
    rng = np.random.default_rng(0)
    a, p = rng.normal(size=(7, 5)), rng.normal(size=(7, 5))
    assert info_nce(a, p, 0.3)[0] == pytest.approx(_ref_info_nce(a, p, 0.3), rel=1e-12)


def test_info_nce_errors():
    with pytest.raises(ValueError):
        info_nce(np.ones((3, 2)), np.ones((2, 2)), 0.1)
    with pytest.raises(ValueError):
        info_nce(np.ones((3, 2)), np.ones((3, 2)), 0.0)
    with pytest.raises(FloatingPointError):
        info_nce(np.full((2, 2), np.nan), np.ones((2, 2)), 0.1)


def test_masked_gate_loss_identities():
    logits = np.full((3, 5), -1e4)
    logits[np.arange(3), [0, 2, 4]] = 1e4
    assert masked_gate_loss(logits, np.array([0, 2, 4]))[0] == 0.0
    for n in (2, 15, 17):
        assert abs(masked_gate_loss(np.zeros((4, n)), np.arange(4) % n)[0] - math.log(n)) < 1e-9
    with pytest.raises(ValueError):
        masked_gate_loss(np.zeros((0, 4)), np.zeros(0, dtype=int))


def test_size_loss_examples():
    c = np.array([[0.0, 3, 1, 7]])
    assert size_loss(np.log1p(c), c)[0] == 0.0
    assert size_loss(np.zeros((1, 4)), np.ones((1, 4)), log_scale=False)[0] == 1.0
    with pytest.raises(ValueError):
        size_loss(np.zeros((1, 4)), np.ones((1, 5)))


def test_size_loss_recomputation():
    rng = np.random.default_rng(3)
    pred, counts = rng.normal(size=(3, 6)), rng.integers(0, 9, size=(3, 6))
    ref = np.mean([np.mean((np.log1p(counts[b]) - pred[b]) ** 2) for b in range(3)])
    assert size_loss(pred, counts)[0] == pytest.approx(ref, rel=1e-12)


def test_align_orthogonal_closed_form():
    a = np.eye(4)
    loss, _ = align_loss(a, a, a, 1.0)
    assert loss == pytest.approx(2 * ALIGN_ORTHO_TERM, rel=1e-12)
    assert align_loss(a[:1], a[:1], a[:1], 1.0)[0] == 0.0


def test_align_is_sum_of_terms():
    rng = np.random.default_rng(4)
    n, r, l = (rng.normal(size=(5, 6)) for _ in range(3))
    assert align_loss(n, r, l, 0.07)[0] == pytest.approx(_ref_info_nce(n, r, 0.07) + _ref_info_nce(n, l, 0.07), rel=1e-10)
    with pytest.raises(ValueError):
        align_loss(n, r[:4], l, 0.07)


# ------------------------------------------------------------ proxies


@pytest.fixture(scope="module")
def toy_graphs(lib):
    corpus = bundled_corpus(lib)
    return [c.graph for c in cone_items([n for v in corpus.values() for n in v], lib)]


def test_rtl_proxy_deterministic_and_unit(toy_graphs):
    g = toy_graphs[0]
    assert np.array_equal(rtl_proxy_embed(g), rtl_proxy_embed(g))
    assert np.linalg.norm(rtl_proxy_embed(g)) == pytest.approx(1.0)


def test_rtl_proxy_collision_scan(toy_graphs):
    seen = {}
    for g in toy_graphs:
        key = rtl_proxy_embed(g).tobytes()
        exprs = tuple(sorted(node_expression(n.text) for n in g.nodes))
        assert seen.setdefault(key, exprs) == exprs


def test_layout_proxy_jitter(toy_graphs):
    cos = [float(layout_proxy_embed(g, 0) @ layout_proxy_embed(g, 1)) for g in toy_graphs]
    assert np.median(cos) > 0.8
    g = toy_graphs[0]
    assert not np.array_equal(layout_proxy_embed(g, 0), layout_proxy_embed(g, 1))
    assert np.array_equal(layout_proxy_embed(g, 5), layout_proxy_embed(g, 5))


# ------------------------------------------------------------- step 2


@pytest.fixture(scope="module")
def toy():
    cfg = _small_cfg(seed=0)
    text = TextEncoder(cfg.text, seed=0)
    items, n_types, norm = toy_step2_items(text, cfg, n_graphs=4, seed=0)
    return cfg, text, items, n_types, norm


def test_step2_parts_match_recomputation(toy):
    cfg, text, items, n_types, norm = toy
    model = Step2Model(cfg, n_types)
    cache = TextCache(text)
    graphs = [it.graph for it in items]
    masks = choose_masks(graphs, 0.3, np.random.default_rng(1))
    parts, grads = step2_losses(model, items, cache, norm, masks, cfg.tau)

    b = make_batch(graphs, [cache(g) for g in graphs], norm, masks)
    nodes, _, _ = model.encoder.forward(b)
    logits, _ = model.heads.mlp("class", nodes[b.masked])
    labels = np.concatenate([g.labels()[m] for g, m in zip(graphs, masks)])
    ce = [math.log(sum(math.exp(v) for v in row)) - row[y] for row, y in zip(logits.tolist(), labels)]
    assert parts["loss_gate"] == pytest.approx(sum(ce) / len(ce), rel=1e-10)

    _, cls, _ = model.encoder.forward(make_batch(graphs, [cache(g) for g in graphs], norm))
    pred, _ = model.heads.mlp("regr", cls)
    counts = np.stack([g.size_target(n_types) for g in graphs])
    assert parts["loss_size"] == pytest.approx(float(np.mean((np.log1p(counts) - pred) ** 2)), rel=1e-10)

    z, _ = model.heads.project("align", cls)
    R, L = np.stack([it.rtl for it in items]), np.stack([it.layout for it in items])
    assert parts["loss_align"] == pytest.approx(_ref_info_nce(z, R, cfg.tau) + _ref_info_nce(z, L, cfg.tau), rel=1e-10)
    assert parts["loss_total"] == pytest.approx(sum(parts[k] for k in ("loss_gate", "loss_graph", "loss_size", "loss_align")))
    assert set(grads) == set(model.params)


def test_masks_have_at_least_one_node(toy):
    _, _, items, _, _ = toy
    for m, it in zip(choose_masks([it.graph for it in items], 0.01, np.random.default_rng(0)), items):
        assert len(m) >= 1 and m.max() < it.graph.m


def test_freeze_contract_and_outputs(toy, tmp_path):
    cfg, text, items, n_types, norm = toy
    before = {k: v.copy() for k, v in text.params.items()}
    cfg2 = _small_cfg(seed=0, batch_size2=2, epochs2=2)
    train_step2(items, text, n_types, cfg2, norm, run_dir=tmp_path)
    assert all(np.array_equal(before[k], text.params[k]) for k in before)
    lines = (tmp_path / "step2_loss.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert set(json.loads(lines[0])) >= {"loss_gate", "loss_graph", "loss_size", "loss_align", "loss_total"}
    assert (tmp_path / "graph.ckpt").exists()


def _smoothed(xs, w=10):
    xs = np.asarray(xs)
    return np.convolve(xs, np.ones(w) / w, mode="valid")


def test_step1_loss_decreases(lib, tmp_path):
    from circuittag.corpus import expression_pairs, generate_corpus

    nets = [n for v in generate_corpus(lib, 3, 6).values() for n in v]
    pairs = expression_pairs(nets, 3, limit=640)
    cfg = TrainConfig(text=TextConfig(d=32, out_dim=16), graph=GraphConfig(in_dim=16), epochs1=2, batch_size=16)
    train_step1(pairs, cfg, tmp_path)
    losses = [json.loads(x)["loss_expr"] for x in (tmp_path / "step1_loss.jsonl").read_text().splitlines()]
    s = _smoothed(losses)
    assert s[-1] < s[0]


def test_step2_loss_decreases(lib, tmp_path):
    cfg = _small_cfg(seed=1, batch_size2=4, epochs2=6)
    text = TextEncoder(cfg.text, seed=1)
    items, n_types, norm = toy_step2_items(text, cfg, n_graphs=16, seed=1)
    train_step2(items, text, n_types, cfg, norm, run_dir=tmp_path)
    losses = [json.loads(x)["loss_total"] for x in (tmp_path / "step2_loss.jsonl").read_text().splitlines()]
    s = _smoothed(losses)
    assert s[-1] < s[0]


def test_divergence_aborts_with_checkpoint(tmp_path):
    pairs = [("a & b", "b & a"), ("!c", "!!!c"), ("a | c", "c | a"), ("a ^ b", "b ^ a")] * 4
    cfg = _small_cfg(epochs1=3, batch_size=4)
    enc = TextEncoder(cfg.text, seed=0)
    orig = enc.forward
    calls = {"n": 0}

    def poisoned(tokens, lengths):
        calls["n"] += 1
        out, cache = orig(tokens, lengths)
        return (out * np.nan if calls["n"] > 10 else out), cache

    enc.forward = poisoned
    with pytest.raises(DivergenceError) as info:
        train_step1(pairs, cfg, tmp_path, enc=enc)
    assert info.value.checkpoint is not None and info.value.checkpoint.endswith("text.ckpt")


def test_config_validation():
    for bad in (dict(tau=0.0), dict(mask_ratio=1.0), dict(batch_size=1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad).validate()
    with pytest.raises(ValueError):
        TrainConfig(graph=GraphConfig(in_dim=7)).validate()


def test_retrieval_accuracy_identity():
    x = np.random.default_rng(0).normal(size=(128, 8))
    assert retrieval_accuracy(x, x) == 1.0
    with pytest.raises(ValueError):
        retrieval_accuracy(x[:10], x[:10])
