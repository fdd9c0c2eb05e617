import numpy as np
import pytest

from circuittag.cones import chunk
from circuittag.generate import random_netlist
from circuittag.tag import (
    ChecksumError, DatasetFormatError, GateTypeVocab, PhysNormalizer, TagGraph, build_tag, deserialize,
    read_dataset, serialize, write_dataset,
)


@pytest.fixture
def vocab(lib):
    return GateTypeVocab.from_library(lib)


def test_two_reg_u3_node_text(two_reg, lib, vocab):
    g = build_tag(two_reg, lib, vocab=vocab)
    texts = {n.text.split()[0]: n.text for n in g.nodes}
    t = texts["name=U3"]
    assert "type=NOR2" in t and "expr=!(!R2 | (R1 ^ R2))" in t
    assert texts["name=R2"].split()[2] == "expr=U3"
    assert g.m == 5
    assert g.labels().tolist() == [vocab[two_reg.gates[i].cell.name] for i in range(5)]


def test_edges_follow_nets(two_reg, lib, vocab):
    g = build_tag(two_reg, lib, vocab=vocab)
    name = {n.id: n.text.split()[0][5:] for n in g.nodes}
    edges = {(name[a], name[b]) for a, b in g.edges}
    assert {("U1", "U3"), ("U2", "U3"), ("U3", "R2"), ("R1", "U1"), ("R2", "U1"), ("R2", "U2")} == edges


def test_vocab_order(lib, vocab):
    assert vocab.names == tuple(c.name for c in lib)
    assert GateTypeVocab(vocab.names).hash == vocab.hash


def test_empty_graph_round_trip():
    g = TagGraph("empty", (), ())
    assert deserialize(serialize(g)) == g
    assert g.phys_matrix().shape == (0, 8)


def test_round_trip_random(lib, vocab, tmp_path):
    graphs = [build_tag(c.subnetlist, lib, vocab=vocab) for c in chunk(random_netlist(lib, 1, 150, n_registers=6)).cones]
    path = tmp_path / "d.tags"
    write_dataset(path, graphs, vocab)
    v2, g2 = read_dataset(path)
    assert v2 == vocab and g2 == graphs


def test_checksum_mismatch_is_positioned(two_reg, lib, vocab, tmp_path):
    line = serialize(build_tag(two_reg, lib, vocab=vocab))
    bad = line.replace("U3", "U4", 1)
    with pytest.raises(ChecksumError) as info:
        deserialize(bad, lineno=7)
    assert info.value.line == 7 and info.value.column == 6


def test_truncated_record(two_reg, lib, vocab, tmp_path):
    path = tmp_path / "d.tags"
    write_dataset(path, [build_tag(two_reg, lib, vocab=vocab)], vocab)
    text = path.read_text()
    path.write_text(text[: text.index("\t") + 3])
    with pytest.raises(DatasetFormatError) as info:
        read_dataset(path)
    assert info.value.line == 2


def test_bad_header(tmp_path):
    path = tmp_path / "d.tags"
    path.write_text("hello\n")
    with pytest.raises(DatasetFormatError):
        read_dataset(path)


def test_normalizer_statistics(lib, vocab):
    graphs = [build_tag(c.subnetlist, lib, vocab=vocab) for c in chunk(random_netlist(lib, 3, 300, n_registers=8)).cones]
    norm = PhysNormalizer.fit(graphs)
    z = norm.transform(np.concatenate([g.phys_matrix() for g in graphs]))
    assert np.allclose(z.mean(axis=0), 0, atol=1e-9)
    assert np.all((np.abs(z.std(axis=0) - 1) < 1e-9) | (z.std(axis=0) == 0))
    again = PhysNormalizer.from_json(norm.to_json())
    assert np.array_equal(again.mean, norm.mean) and np.array_equal(again.std, norm.std)


def test_load_is_sum_of_sink_capacitance(two_reg, lib, vocab):
    g = build_tag(two_reg, lib, vocab=vocab)
    from circuittag.library import PHYS_FIELDS

    load = PHYS_FIELDS.index("load")
    u1 = next(n for n in g.nodes if n.text.startswith("name=U1 "))
    assert u1.phys[load] == pytest.approx(lib["NOR2"].phys.capacitance)
