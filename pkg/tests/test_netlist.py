import numpy as np
import pytest

from circuittag.expr import evaluate
from circuittag.generate import NetlistBuilder, random_netlist
from circuittag.netlist import (
    CombinationalCycleError, MissingAssignmentError, MultipleDriverError, NetlistSyntaxError,
    UndrivenNetError, UnknownCellError, emit_netlist, parse_netlist, simulate, topo_order,
)


def test_two_reg_structure(two_reg):
    assert len(two_reg.registers) == 2
    assert len(two_reg.combinational) == 3
    assert [g.instance_name for g in two_reg.gates] == ["R1", "U1", "U2", "U3", "R2"]


def test_two_reg_topo_order(two_reg):
    order = [two_reg.gates[g].instance_name for g in topo_order(two_reg)]
    assert order[:2] == ["R1", "R2"]
    assert order.index("U1") < order.index("U3") and order.index("U2") < order.index("U3")


def test_two_reg_simulation(two_reg):
    out = simulate(two_reg, {"r1": 1, "q": 0})
    assert not out["n3"][0]


def test_empty_module(lib):
    n = parse_netlist("module top (a);\n input a;\nendmodule\n", lib)
    assert n.gates == () and len(n.nets) == 1


def test_undriven_output(lib):
    with pytest.raises(UndrivenNetError):
        parse_netlist("module top (a, y); input a; output y; endmodule", lib)


def test_nor2_truth_table(lib):
    n = parse_netlist("module t (a, b, y); input a, b; output y; NOR2 g (.A(a), .B(b), .ZN(y)); endmodule", lib)
    out = simulate(n, {"a": [0, 1, 0, 1], "b": [0, 0, 1, 1]})
    assert out["y"].tolist() == [True, False, False, False]


def test_inverter_chain_order(lib):
    text = """module c (a, y); input a; output y; wire x1, x2;
      INV i3 (.A(x2), .ZN(y)); INV i1 (.A(a), .ZN(x1)); INV i2 (.A(x1), .ZN(x2)); endmodule"""
    n = parse_netlist(text, lib)
    assert [n.gates[g].instance_name for g in topo_order(n)] == ["i1", "i2", "i3"]


def test_clock_pins_ignored_on_registers(lib):
    n = parse_netlist("module r (d, clk, q); input d, clk; output q; DFF R (.D(d), .CK(clk), .RN(clk), .Q(q)); endmodule", lib)
    assert len(n.registers) == 1


@pytest.mark.parametrize(
    "body, err",
    [
        ("FOO u (.A(a), .Z(y));", UnknownCellError),
        ("INV u1 (.A(a), .ZN(y)); INV u2 (.A(a), .ZN(y));", MultipleDriverError),
        ("AND2 u (.A(a), .B(floating), .Z(y));", UndrivenNetError),
        ("INV u (.A(a), .ZN(y)); INV v (.A(a), .Q(y));", NetlistSyntaxError),
        ("INV u (.A(a));", NetlistSyntaxError),
    ],
)
def test_parse_errors(lib, body, err):
    with pytest.raises(err):
        parse_netlist(f"module t (a, y); input a; output y; {body} endmodule", lib)


def test_cycle_reports_gate_names(lib):
    text = """module cyc (a, y); input a; output y; wire x;
      AND2 g1 (.A(a), .B(y), .Z(x)); INV g2 (.A(x), .ZN(y)); endmodule"""
    with pytest.raises(CombinationalCycleError) as info:
        parse_netlist(text, lib)
    assert "g1" in str(info.value) and "g2" in str(info.value)


def test_cycle_through_register_is_fine(lib):
    text = """module ok (a, y); input a; output y; wire x;
      AND2 g1 (.A(a), .B(y), .Z(x)); DFF r (.D(x), .Q(y)); endmodule"""
    assert len(parse_netlist(text, lib).registers) == 1


def test_syntax_error_position(lib):
    with pytest.raises(NetlistSyntaxError) as info:
        parse_netlist("module t (a);\n input a;\n INV u (A(a));\nendmodule", lib)
    assert info.value.line == 3


def test_missing_endmodule(lib):
    with pytest.raises(NetlistSyntaxError, match="endmodule"):
        parse_netlist("module t (a); input a;", lib)


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_random_200(lib, seed):
    n = random_netlist(lib, seed, 200, n_inputs=10, n_registers=seed * 3, tie_prob=0.05)
    text = emit_netlist(n)
    again = parse_netlist(text, lib)
    assert again == n
    assert emit_netlist(again) == text


def test_topo_order_against_independent_check(lib):
    n = random_netlist(lib, 3, 100, n_registers=4)
    order = topo_order(n)
    assert sorted(order) == list(range(len(n.gates)))
    position = {g: i for i, g in enumerate(order)}
    assert all(n.gates[g].is_register for g in order[: len(n.registers)])
    for g in n.gates:
        if g.is_register:
            continue
        for net in g.input_nets:
            d = n.driver[net]
            if d >= 0 and not n.gates[d].is_register:
                assert position[d] < position[g.id]
    assert topo_order(n) == order


def test_simulation_matches_cell_functions(lib):
    n = random_netlist(lib, 9, 50, n_inputs=6, n_registers=3)
    rng = np.random.default_rng(0)
    inputs = {n.nets[i].name: rng.integers(0, 2, 256).astype(bool) for i in n.free_sources()}
    values = simulate(n, inputs)
    for g in n.gates:
        if g.is_register:
            continue
        env = {pin: values[n.nets[net].name] for pin, net in zip(g.cell.inputs, g.input_nets)}
        expect = np.broadcast_to(evaluate(g.cell.function, env), (256,))
        assert np.array_equal(values[n.nets[g.output_net].name], expect)


def test_missing_assignment(two_reg):
    with pytest.raises(MissingAssignmentError):
        simulate(two_reg, {"r1": 1})


def test_builder_register_feedback(lib):
    b = NetlistBuilder(lib, "t")
    a = b.pi()
    q = b.register()
    b.connect_register(q, b.gate("XOR2", a, q))
    b.po(q)
    n = b.build()
    out = simulate(n, {n.nets[a].name: [0, 1, 0, 1], n.nets[q].name: [0, 0, 1, 1]})
    assert out[n.nets[n.gates[n.registers[0]].input_nets[0]].name].tolist() == [False, True, True, False]
