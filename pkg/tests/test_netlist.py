import numpy as np
import pytest

from phcirc.errors import (
    DuplicateName,
    GroundSetViolation,
    LoopEdge,
    NetlistSyntaxError,
    UnknownDirective,
)
from phcirc.graph import connected_components
from phcirc.netlist import build_graph, lint, parse, parse_expression, parse_value, serialize


class TestValues:
    @pytest.mark.parametrize("token,expected", [
        ("10", 10.0), ("1e-6", 1e-6), ("10k", 1e4), ("1u", 1e-6),
        ("2.5m", 2.5e-3), ("3MEG", 3e6), ("4p", 4e-12), ("5n", 5e-9),
        ("-2k", -2000.0), (".5", 0.5),
    ])
    def test_suffixes(self, token, expected):
        assert parse_value(token) == pytest.approx(expected)

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_value("ohm")

    def test_expressions(self):
        assert parse_expression("poly(0,0,0.5)") == ("poly", (0.0, 0.0, 0.5))
        assert parse_expression("tanh(1,2)") == ("tanh", (1.0, 2.0))
        with pytest.raises(ValueError):
            parse_expression("exp(1)")


BASIC = "V1 1 0 DC 5\nR1 1 0 R=10\n.ground 0\n.end\n"


class TestParse:
    def test_basic(self):
        nl = parse(BASIC)
        assert len(nl.components) == 2
        assert nl.nodes == ("1", "0")
        assert nl.grounds == ("0",)

    def test_transistor_edges(self):
        nl = parse("Q1 c b e\nR1 c e R=1\n.end")
        q = nl.component("Q1")
        assert q.edge_pairs() == (("b", "c"), ("b", "e"))
        assert q.edge_ids() == ("Q1.bc", "Q1.be")

    def test_self_loop_rejected(self):
        with pytest.raises(LoopEdge):
            parse("R1 1 1 R=5\n.end")

    def test_duplicate_name(self):
        with pytest.raises(DuplicateName):
            parse("R1 1 0 R=5\nR1 2 0 R=5\n.end")

    def test_unknown_directive(self):
        with pytest.raises(UnknownDirective):
            parse(".plot v(1)\n.end")

    def test_unknown_card(self):
        with pytest.raises(NetlistSyntaxError) as err:
            parse("X1 1 0\n.end")
        assert err.value.line == 1

    def test_error_carries_line_number(self):
        with pytest.raises(NetlistSyntaxError) as err:
            parse("V1 1 0 DC 5\nR2 1 0 R=abc\n.end")
        assert err.value.line == 2

    def test_continuation_and_comments(self):
        text = "* title line\nV1 1 0\n+ DC 5\nR1 1 0 R=10\n.end\n"
        nl = parse(text)
        assert nl.title == "title line"
        assert len(nl.components) == 2
        assert nl.component("V1").waveform(0.0) == 5.0

    def test_case_insensitive_keywords(self):
        nl = parse("v1 1 0 dc 5\nr1 1 0 r=10\n.GROUND 0\n.END")
        assert nl.component("v1").kind == "source_voltage"
        assert nl.grounds == ("0",)

    def test_sin_source(self):
        nl = parse("V1 1 0 SIN(0,325,50)\nR1 1 0 R=1\n.end")
        w = nl.component("V1").waveform
        assert w(0.005) == pytest.approx(325.0)

    def test_diode_defaults_and_ideal(self):
        nl = parse("D1 1 0\nD2 1 0 ideal\nD3 1 0 A=1e-9 B=0.05\nR1 1 0 R=1\n.end")
        assert nl.component("D1").params == {"a": 1e-12, "b": 0.025}
        d2 = nl.component("D2")
        assert d2.kind == "ideal_diode" and d2.params["b"] == 1e-3
        assert nl.component("D3").params["a"] == 1e-9

    def test_nonlinear_laws(self):
        nl = parse("C1 1 0 H=poly(0,0,0.5)\nR1 1 0 law=poly(0,0,0,1)\n"
                   "L1 1 0 H=tanh(1,1)\n.end")
        c = nl.component("C1")
        assert float(c.hamiltonian.grad(3.0)) == pytest.approx(3.0)
        r = nl.component("R1")
        assert float(r.resistive_map.value(2.0)) == pytest.approx(8.0)

    def test_tran_and_op(self):
        nl = parse(BASIC.replace(".end", ".tran 1m 1u\n.op\n.end"))
        kinds = [a.kind for a in nl.analyses]
        assert kinds == ["tran", "op"]
        assert nl.analyses[0].params == (1e-3, 1e-6)

    def test_unknown_ground_node(self):
        with pytest.raises(NetlistSyntaxError):
            parse("R1 1 0 R=5\n.ground 7\n.end")

    def test_transformer_statement(self):
        nl = parse("T1 1 2 5 4 ratio=10\nR1 1 2 R=1\nR2 4 5 R=1\n.end")
        t = nl.component("T1")
        assert t.edge_pairs() == (("1", "2"), ("4", "5"))


class TestSerialize:
    def test_roundtrip_identity(self):
        text = ("* rectifier-ish\nV1 1 0 SIN(0,10,50)\nD1 1 2 a=1n b=25m\n"
                "C1 2 0 C=1u\nR1 2 0 R=1k\nQ1 2 1 0\nT1 1 0 2 0x ratio=2\n"
                ".ground 0\n.tran 1m 1u\n.end\n")
        nl = parse(text)
        again = parse(serialize(nl))
        assert again.statements == nl.statements
        assert serialize(again) == serialize(nl)

    def test_defaults_are_canonicalized(self):
        a = parse("Q1 c b e\nR1 c e R=1\n.end")
        b = parse("Q1 c b e IS=1e-14 VT=0.025 AF=0.99 AR=0.5\nR1 c e R=1\n.end")
        assert a.statements == b.statements


class TestBuildGraph:
    def test_parallel_edges(self):
        g, grounds, edge_map = build_graph(parse(BASIC))
        assert g.n == 2 and g.m == 2
        assert g.init["V1"] == "1" and g.ter["V1"] == "0"
        assert grounds == ("0",)
        assert edge_map == {"V1": ("V1",), "R1": ("R1",)}

    def test_vertex_count_and_edge_count(self):
        nl = parse("V1 1 0 DC 1\nT1 1 0 3 2 ratio=2\nR1 2 3 R=1\n.ground 0 2\n.end")
        g, _, _ = build_graph(nl)
        assert g.n == len(nl.nodes)
        assert g.m == sum(c.ports for c in nl.components)

    def test_acdc_converter_shape(self, golden_texts):
        nl = parse(golden_texts["acdc"])
        g, grounds, _ = build_graph(nl)
        assert g.n == 6 and g.m == 9
        assert len(connected_components(g)) == 2
        assert set(grounds) == {"2", "3"}

    def test_conflicting_grounds(self):
        with pytest.raises(GroundSetViolation):
            build_graph(parse("R1 1 0 R=5\n.ground 1 0\n.end"))

    def test_auto_ground_warns(self):
        nl = parse("R1 1 0 R=5\n.end")
        with pytest.warns(UserWarning, match="auto-grounding"):
            _, grounds, _ = build_graph(nl)
        assert grounds == ("0",)

    def test_auto_ground_covers_second_component(self):
        nl = parse("R1 1 0 R=5\nR2 a b R=5\n.ground 0\n.end")
        with pytest.warns(UserWarning):
            _, grounds, _ = build_graph(nl)
        assert set(grounds) == {"0", "a"}


class TestLint:
    def test_valid_report(self):
        report = lint(BASIC)
        assert report["errors"] == []
        assert report["graph"] == {"n": 2, "m": 2, "k": 1, "grounds": ["0"]}

    def test_error_report_with_line(self):
        report = lint("R1 1 1 R=5\n.end")
        assert report["errors"]
        assert report["errors"][0]["type"] == "LoopEdge"

    def test_no_tran_warning(self):
        report = lint(BASIC)
        assert any("tran" in w for w in report["warnings"])
