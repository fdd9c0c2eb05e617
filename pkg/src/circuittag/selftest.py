"""Quick built-in checks: analytic loss identities and format round trips."""

from __future__ import annotations

import math
import tempfile
from importlib import resources

import numpy as np

from .expr import parse_expr, to_text, truth_table
from .extract import expr_of_gate
from .library import demo_library, demo_library_text, dump_library, load_library
from .netlist import emit_netlist, parse_netlist
from .pretrain import info_nce, masked_gate_loss, size_loss
from .tag import GateTypeVocab, build_tag, read_dataset, write_dataset

TWO_REG_U3 = "!(!R2 | (R1 ^ R2))"


def two_reg_netlist(lib=None):
    lib = lib or demo_library()
    text = (resources.files("circuittag") / "data" / "two_reg.v").read_text(encoding="utf-8")
    return parse_netlist(text, lib)


def _checks():
    for k in (2, 4, 16, 256):
        x = np.ones((k, 8))
        yield f"info_nce uniform k={k}", abs(info_nce(x, x, 0.07)[0] - math.log(k)) < 1e-9
    logits = np.full((3, 5), -1e4)
    logits[np.arange(3), [0, 2, 4]] = 1e4
    yield "masked gate loss one-hot", masked_gate_loss(logits, np.array([0, 2, 4]))[0] == 0.0
    yield "masked gate loss uniform", abs(masked_gate_loss(np.zeros((4, 17)), np.arange(4))[0] - math.log(17)) < 1e-9
    c = np.array([[0.0, 3, 1, 7]])
    yield "size loss perfect", size_loss(np.log1p(c), c)[0] == 0.0
    yield "size loss raw ones", size_loss(np.zeros((1, 4)), np.ones((1, 4)), log_scale=False)[0] == 1.0

    lib = demo_library()
    yield "library round trip", dump_library(load_library(demo_library_text())) == demo_library_text()
    n = two_reg_netlist(lib)
    yield "netlist round trip", emit_netlist(parse_netlist(emit_netlist(n), lib)) == emit_netlist(n)
    u3 = expr_of_gate(n, n.gate_index["U3"], 2)
    yield "two_reg U3 expression", to_text(u3) == TWO_REG_U3
    yield "expression round trip", to_text(parse_expr(to_text(u3))) == TWO_REG_U3
    yield "two_reg U3 truth table", truth_table(u3).to_bitstring() == "0001"
    vocab = GateTypeVocab.from_library(lib)
    g = build_tag(n, lib, vocab=vocab)
    with tempfile.TemporaryDirectory() as d:
        path = f"{d}/two_reg.tags"
        write_dataset(path, [g], vocab)
        yield "dataset round trip", read_dataset(path) == (vocab, [g])


def run_selftest(report=print) -> bool:
    ok = True
    for name, passed in _checks():
        report(f"{'ok  ' if passed else 'FAIL'} {name}")
        ok &= bool(passed)
    return ok
