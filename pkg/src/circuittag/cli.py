"""Command-line entry point: ``circuittag <subcommand> ...``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 data error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from .augment import augment_netlist, functionally_equal
from .cones import chunk, cone_manifest
from .corpus import SOURCES, bundled_corpus, corpus_stats, format_stats, generate_corpus, item_seed, write_corpus
from .expr import ExprSyntaxError, to_text
from .extract import DEFAULT_HOPS, gate_expressions
from .library import LibrarySyntaxError, demo_library, load_library
from .model import CheckpointError, save_checkpoint
from .netlist import NetlistError, emit_netlist, parse_netlist
from .pretrain import DivergenceError, TextCache, TrainConfig, embed_graphs
from .tag import DatasetFormatError, GateTypeVocab, PhysNormalizer, write_dataset
from . import pipeline as P

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("circuittag")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

# section -> key -> type; flags with the same key override file values
CONFIG_SCHEMA = {
    "paths": {"library": str, "run_dir": str, "corpus": str},
    "train": {
        "tau": float, "mask_ratio": float, "batch_size": int, "batch_size2": int, "lr": float,
        "epochs1": int, "epochs2": int, "seed": int, "log_size": bool,
    },
    "run": {"k": int, "workers": int, "per_source": int},
}
DEFAULTS = {"k": DEFAULT_HOPS, "workers": 1, "per_source": None}


def read_config(path) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            typ = CONFIG_SCHEMA[section].get(key)
            if typ is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                out[key] = parser[section].getboolean(key) if typ is bool else typ(raw)
            except ValueError:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None
    return out


def resolve(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        values.update(read_config(args.config))
    for key, val in vars(args).items():
        if val is not None and key not in ("config", "func", "command"):
            values[key] = val
    return values


def train_config(values: dict) -> TrainConfig:
    cfg = TrainConfig()
    for f in fields(TrainConfig):
        if f.name in values and values[f.name] is not None:
            setattr(cfg, f.name, values[f.name])
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def write_config_snapshot(run_dir, values: dict):
    parser = configparser.ConfigParser()
    for section, keys in CONFIG_SCHEMA.items():
        parser[section] = {k: str(values[k]) for k in keys if values.get(k) is not None}
    with open(os.path.join(run_dir, "config.ini"), "w", encoding="utf-8") as f:
        parser.write(f)


# ---------------------------------------------------------------- helpers


def _library(values):
    path = values.get("library")
    if not path:
        return demo_library()
    with open(path, encoding="utf-8") as f:
        return load_library(f.read())


def _netlists(paths, lib):
    out = []
    for p in paths:
        with open(p, encoding="utf-8") as f:
            out.append(parse_netlist(f.read(), lib))
    return out


def _corpus_netlists(values, lib, seed, default_per_source):
    """Netlists from ``--corpus`` (a directory of .v files) or a generated corpus."""
    if values.get("corpus"):
        d = values["corpus"]
        files = sorted(os.path.join(d, f) for f in os.listdir(d) if f.endswith(".v"))
        if not files:
            raise FileNotFoundError(f"no .v files in {d}")
        return _netlists(files, lib)
    per = values.get("per_source") or default_per_source
    return [n for nets in generate_corpus(lib, seed, per).values() for n in nets]


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _run_dir(values):
    d = values.get("run_dir")
    if not d:
        raise ConfigError("--run-dir is required")
    os.makedirs(d, exist_ok=True)
    return d


# ------------------------------------------------------------ subcommands


def cmd_parse(args, values):
    lib = _library(values)
    for n in _netlists(args.netlists, lib):
        print(f"{n.name}\tgates={len(n.gates)}\tnets={len(n.nets)}\tregisters={len(n.registers)}\t"
              f"inputs={len(n.primary_inputs)}\toutputs={len(n.primary_outputs)}")
        if args.emit:
            _emit(emit_netlist(n), os.path.join(args.emit, f"{n.name}.v") if os.path.isdir(args.emit) else args.emit)
    return EXIT_OK


def cmd_chunk(args, values):
    lib = _library(values)
    text = "".join(cone_manifest(chunk(n, values["workers"])) for n in _netlists(args.netlists, lib))
    _emit(text, args.out)
    return EXIT_OK


def cmd_expr(args, values):
    lib = _library(values)
    lines = []
    for n in _netlists(args.netlists, lib):
        exprs = gate_expressions(n, values["k"], values["workers"])
        for gid, e in exprs.items():
            name = n.gates[gid].instance_name
            if args.gate and name not in args.gate:
                continue
            lines.append(f"{name}: {to_text(e)}\n")
    _emit("".join(lines), args.out)
    return EXIT_OK


def cmd_augment(args, values):
    lib = _library(values)
    (n,) = _netlists([args.netlist], lib)
    aug = augment_netlist(n, lib, values.get("seed") or 0)
    if not functionally_equal(n, aug):
        print("augmented netlist is not equivalent", file=sys.stderr)
        return EXIT_FAIL
    _emit(emit_netlist(aug), args.out)
    return EXIT_OK


def cmd_tag(args, values):
    from .corpus import cone_items

    lib = _library(values)
    vocab = GateTypeVocab.from_library(lib)
    items = cone_items(_netlists(args.netlists, lib), lib, values["k"], vocab, values["workers"])
    write_dataset(args.out, [it.graph for it in items], vocab)
    print(f"wrote {len(items)} graphs to {args.out}")
    return EXIT_OK


def cmd_stats(args, values):
    lib = _library(values)
    if values.get("corpus"):
        d = values["corpus"]
        corpus: dict = {}
        for f in sorted(os.listdir(d)):
            if f.endswith(".v"):
                corpus.setdefault(f.split("_", 1)[0], []).extend(_netlists([os.path.join(d, f)], lib))
    else:
        corpus = bundled_corpus(lib)
    rows = corpus_stats(corpus, lib, values["k"])
    if args.json:
        for r in rows:
            print(json.dumps({"source": r.source, "expressions": r.expressions, "tokens": r.tokens,
                              "graphs": r.graphs, "nodes": r.nodes}, sort_keys=True))
    else:
        sys.stdout.write(format_stats(rows))
    return EXIT_OK


def cmd_gencorpus(args, values):
    lib = _library(values)
    os.makedirs(args.out, exist_ok=True)
    paths = write_corpus(generate_corpus(lib, values.get("seed") or 0, values.get("per_source") or 6), args.out)
    print(f"wrote {len(paths)} netlists to {args.out}")
    return EXIT_OK


def cmd_pretrain(args, values):
    lib = _library(values)
    cfg = train_config(values)
    run_dir = _run_dir(values)
    write_config_snapshot(run_dir, {**values, **{k: getattr(cfg, k) for k in CONFIG_SCHEMA["train"]}})
    if args.step == 1:
        nets = _corpus_netlists(values, lib, P.STEP1_CORPUS_SEED, 60)
        train, held = P.step1_data(lib, netlists=nets)
        enc = P.run_step1(run_dir, cfg, train)
        acc = P.evaluate_step1(enc, held) if len(held) >= 64 else None
        result = {"step": 1, "train_pairs": len(train), "held_out_pairs": len(held), "retrieval_accuracy": acc}
    else:
        text_path = args.text_ckpt or os.path.join(run_dir, "text.ckpt")
        if not os.path.exists(text_path):
            raise ConfigError(f"step 2 needs a step-1 text checkpoint ({text_path})")
        text = P.load_text_encoder(text_path)
        cfg.text = text.cfg
        nets = _corpus_netlists(values, lib, P.STEP2_CORPUS_SEED, 80)
        train, held = P.step2_data(lib, workers=values["workers"], dim=cfg.graph.out_dim, netlists=nets)
        vocab = GateTypeVocab.from_library(lib)
        model, norm = P.run_step2(run_dir, cfg, text, train, len(vocab))
        result = {"step": 2, "train_graphs": len(train), "held_out_graphs": len(held)}
        if held:
            result.update(P.evaluate_step2(model, text, norm, held, cfg.mask_ratio, cfg.seed))
    with open(os.path.join(run_dir, f"step{args.step}_result.json"), "w") as f:
        json.dump(result, f, sort_keys=True, indent=1)
        f.write("\n")
    P.write_manifest(run_dir)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _load_models(run_dir):
    text = P.load_text_encoder(os.path.join(run_dir, "text.ckpt"))
    model = P.load_step2(os.path.join(run_dir, "graph.ckpt"), text.cfg)
    with open(os.path.join(run_dir, "phys_norm.json")) as f:
        norm = PhysNormalizer.from_json(f.read())
    return text, model, norm


def cmd_embed(args, values):
    from .corpus import cone_items
    from .downstream import circuit_embedding

    lib = _library(values)
    text, model, norm = _load_models(_run_dir(values))
    cache = TextCache(text)
    lines = []
    for n in _netlists(args.netlists, lib):
        items = cone_items([n], lib, values["k"], GateTypeVocab.from_library(lib))
        if not items:
            raise ValueError(f"{n.name} has no logic to embed")
        _, cls = embed_graphs(model, cache, norm, [it.graph for it in items])
        vec = circuit_embedding(cls)
        lines.append(json.dumps({"circuit": n.name, "cones": len(items), "embedding": [float(x) for x in vec]}) + "\n")
    _emit("".join(lines), args.out)
    return EXIT_OK


def _task_features(task, features, text, model, norm):
    from .downstream import embedding_features, phys_features

    if features == "phys":
        return phys_features(task, norm)
    ne, ce = embed_graphs(model, TextCache(text), norm, task.graphs)
    return embedding_features(task, ne, ce)


def cmd_finetune(args, values):
    from .downstream import FinetuneConfig, evaluate_task, gen_toy_tasks

    lib = _library(values)
    run_dir = _run_dir(values)
    text, model, norm = _load_models(run_dir)
    seed = values.get("seed") or 0
    task = gen_toy_tasks(lib, seed)[args.task]
    X = _task_features(task, args.features, text, model, norm)
    head, report = evaluate_task(task, X, FinetuneConfig(epochs=args.epochs, seed=seed))
    stem = os.path.join(run_dir, f"head_{args.task}_{args.features}")
    save_checkpoint(stem + ".ckpt", {**head.params, "norm.mean": head.mean, "norm.std": head.std,
                                     "target": np.array([head.y_mean, head.y_std])},
                    {"kind": head.kind, "task": args.task, "features": args.features})
    with open(stem + ".json", "w") as f:
        f.write(report.to_json() + "\n")
    P.write_manifest(run_dir)
    sys.stdout.write(report.table())
    return EXIT_OK


def cmd_eval(args, values):
    from .downstream import TaskHead, gen_toy_tasks, metrics
    from .model import load_checkpoint

    lib = _library(values)
    run_dir = _run_dir(values)
    text, model, norm = _load_models(run_dir)
    task = gen_toy_tasks(lib, values.get("seed") or 0)[args.task]
    params, meta = load_checkpoint(os.path.join(run_dir, f"head_{args.task}_{args.features}.ckpt"))
    target = params.pop("target")
    head = TaskHead(meta["kind"], params, params.pop("norm.mean"), params.pop("norm.std"), float(target[0]), float(target[1]))
    X = _task_features(task, args.features, text, model, norm)
    report = metrics(head.predict(X[task.split]), task.labels[task.split], task.kind, task.classes if task.kind == "class" else None)
    print(report.to_json())
    sys.stdout.write(report.table())
    return EXIT_OK


def cmd_gradcheck(args, values):
    from .gradcheck import TOLERANCE, gradcheck_all

    errors = gradcheck_all(args.samples, values.get("seed") or 0)
    for name, err in errors.items():
        print(f"{name:<6} max relative error {err:.3e}")
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} ({'PASS' if worst < TOLERANCE else 'FAIL'})")
    return EXIT_OK if worst < TOLERANCE else EXIT_FAIL


def cmd_selftest(args, values):
    from .selftest import run_selftest

    ok = run_selftest(print)
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override its values")
    common.add_argument("--library", help="cell library file (default: bundled demo library)")
    common.add_argument("--workers", type=int, help="worker count; outputs do not depend on it")
    common.add_argument("--k", type=int, help="expression hop count (default 2)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="circuittag", description="Netlist to text-attributed graph compiler and pre-training toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", parents=[common], help="validate netlists and print a summary")
    s.add_argument("netlists", nargs="+")
    s.add_argument("--emit", help="write the canonical netlist text here")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("chunk", parents=[common], help="register-cone manifest")
    s.add_argument("netlists", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_chunk)

    s = sub.add_parser("expr", parents=[common], help="k-hop gate expressions")
    s.add_argument("netlists", nargs="+")
    s.add_argument("--gate", action="append", help="only these instances (repeatable)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_expr)

    s = sub.add_parser("augment", parents=[common], help="function-preserving netlist transform")
    s.add_argument("netlist")
    s.add_argument("--out")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("tag", parents=[common], help="write a TAG dataset of all cones")
    s.add_argument("netlists", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tag)

    s = sub.add_parser("stats", parents=[common], help="corpus statistics table")
    s.add_argument("--corpus", help="directory of <source>_<n>.v files (default: bundled toy corpus)")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("gencorpus", parents=[common], help="write a generated toy corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--per-source", dest="per_source", type=int)
    s.set_defaults(func=cmd_gencorpus)

    s = sub.add_parser("pretrain", parents=[common], help="pre-training step 1 (text) or 2 (graph)")
    s.add_argument("--step", type=int, choices=(1, 2), required=True)
    s.add_argument("--run-dir", dest="run_dir")
    s.add_argument("--corpus", help="directory of .v files (default: generated)")
    s.add_argument("--per-source", dest="per_source", type=int)
    s.add_argument("--text-ckpt", dest="text_ckpt")
    for name, typ in (("tau", float), ("mask-ratio", float), ("batch-size", int), ("batch-size2", int),
                      ("lr", float), ("epochs1", int), ("epochs2", int)):
        s.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("embed", parents=[common], help="circuit embeddings (sum of cone embeddings)")
    s.add_argument("netlists", nargs="+")
    s.add_argument("--run-dir", dest="run_dir")
    s.add_argument("--out")
    s.set_defaults(func=cmd_embed)

    for name, func, help_text in (("finetune", cmd_finetune, "train a task head on frozen embeddings"),
                                  ("eval", cmd_eval, "evaluate a trained task head")):
        s = sub.add_parser(name, parents=[common], help=help_text)
        s.add_argument("--run-dir", dest="run_dir")
        s.add_argument("--task", choices=("gate_function", "register", "area", "slack"), default="gate_function")
        s.add_argument("--features", choices=("tag", "phys"), default="tag")
        if name == "finetune":
            s.add_argument("--epochs", type=int, default=60)
        s.set_defaults(func=func)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check of all losses")
    s.add_argument("--samples", type=int, default=100)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("selftest", parents=[common], help="analytic-loss and round-trip checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve(args)
        if values.get("workers") is not None and values["workers"] < 1:
            raise ConfigError("--workers must be >= 1")
        if values.get("k") is not None and values["k"] < 1:
            raise ConfigError("--k must be >= 1")
        return args.func(args, values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}; last good checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_DIVERGED
    except (NetlistError, LibrarySyntaxError, ExprSyntaxError, DatasetFormatError, CheckpointError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
