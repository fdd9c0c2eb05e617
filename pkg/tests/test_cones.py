from circuittag.cones import backward_cone, chunk, cone_expr, cone_manifest, read_manifest
from circuittag.expr import to_text
from circuittag.generate import fsm, pipeline, random_netlist
import numpy as np


def test_two_reg_cones(two_reg):
    cs = chunk(two_reg)
    by_name = {c.root_name: c for c in cs.cones}
    assert set(by_name) == {"R1", "R2"}
    r2, r1 = by_name["R2"], by_name["R1"]
    assert sorted(two_reg.gates[g].instance_name for g in r2.members) == ["U1", "U2", "U3"]
    assert set(r2.frontier) == {"R1", "R2"}
    assert r1.members == () and r1.frontier == ("d",)
    assert cs.coverage == 1.0


def test_cone_expressions_inside_subnetlist(two_reg):
    r2 = next(c for c in chunk(two_reg).cones if c.root_name == "R2")
    assert to_text(cone_expr(r2)["U3"]) == "!(!R2 | (R1 ^ R2))"


def test_manifest_round_trip(two_reg):
    cs = chunk(two_reg)
    rows = read_manifest(cone_manifest(cs))
    assert rows == [(cs.circuit, c.root_name, c.kind, len(c.members), c.frontier) for c in cs.cones]


def test_backward_cone_stops_at_registers(two_reg):
    members, frontier = backward_cone(two_reg, two_reg.net_index["n3"])
    assert len(members) == 3
    assert sorted(two_reg.nets[i].name for i in frontier) == ["q", "r1"]


def test_full_coverage_on_generated_designs(lib):
    rng = np.random.default_rng(0)
    for n in [fsm(lib, rng), pipeline(lib, rng), random_netlist(lib, 2, 150, n_registers=8)]:
        cs = chunk(n)
        assert cs.coverage == 1.0
        members = set()
        for c in cs.register_cones():
            members.update(c.members)
        assert cs.covered == cs.feeding <= len(members)


def test_workers_give_same_cones(lib):
    n = random_netlist(lib, 8, 200, n_registers=10)
    assert cone_manifest(chunk(n, workers=1)) == cone_manifest(chunk(n, workers=3))


def test_subnetlist_is_combinational(lib):
    n = random_netlist(lib, 6, 100, n_registers=6)
    for c in chunk(n).cones:
        assert not c.subnetlist.registers
        assert len(c.subnetlist.combinational) == len(c.members)
