import dataclasses
import json

import numpy as np
import pytest

from phcirc.assembly import (
    assemble,
    circuit_blocks,
    closed_form_kernel,
    emit_json,
    kirchhoff_dirac,
    loop_kirchhoff_dirac,
    ph_mna_equivalence,
    to_mla,
    to_mna,
    to_mna_cf,
)
from phcirc.errors import GroundSetViolation, NonInvertibleConstitutive, ShapeMismatch
from phcirc.graph import DirectedGraph
from phcirc.netlist import parse
from phcirc.ph_core import dirac_contains, is_dirac, kernel_basis, random_members
from phcirc.solver import IntegratorConfig, consistent_initial_state, simulate


def triangle():
    return DirectedGraph.from_edges([("e1", "v1", "v2"), ("e2", "v2", "v3"),
                                     ("e3", "v1", "v3")])


class TestKirchhoffDirac:
    def test_single_edge(self):
        g = DirectedGraph.from_edges([("e1", "v1", "v2")])
        kir = kirchhoff_dirac(g, ["v2"])
        assert kir.a_reduced.tolist() == [[1]]
        # members satisfy j = -A i and u = A^T phi
        assert dirac_contains(kir.system.dirac, [-3.0, 3.0], [2.0, 2.0])
        assert not dirac_contains(kir.system.dirac, [3.0, 3.0], [2.0, 2.0])

    def test_power_identity_on_members(self, rng):
        kir = kirchhoff_dirac(triangle(), ["v3"])
        for f, e in random_members(kir.system.dirac, 100, rng):
            scale = 1.0 + np.linalg.norm(f) * np.linalg.norm(e)
            assert abs(float(e @ f)) <= 1e-12 * scale

    def test_block_form_exact(self):
        kir = kirchhoff_dirac(triangle(), ["v3"])
        a = kir.a_reduced.astype(float)
        n_phi, m = a.shape
        k = kir.system.dirac.k_mat
        l = kir.system.dirac.l_mat
        assert np.array_equal(k[:n_phi, n_phi:], a)
        assert np.array_equal(k[:n_phi, :n_phi], np.eye(n_phi))
        assert np.array_equal(l[n_phi:, :n_phi], a.T)
        assert np.array_equal(l[n_phi:, n_phi:], -np.eye(m))
        assert is_dirac(k, l, tol=1e-12)

    def test_missing_ground_raises(self):
        g = DirectedGraph.from_edges([("e1", "a", "b"), ("e2", "c", "d")])
        with pytest.raises(GroundSetViolation):
            kirchhoff_dirac(g, ["b"])


class TestLoopKirchhoffDirac:
    def test_triangle_members(self):
        loop = loop_kirchhoff_dirac(triangle())
        assert loop.b_mat.tolist() == [[-1, -1, 1]]
        # psi-flow = -B u and i = B^T iota; u = (1,1,2) has B u = 0
        u = np.array([1.0, 1.0, 2.0])
        iota = np.array([3.0])
        i = loop.b_mat.T.astype(float) @ iota
        assert dirac_contains(loop.system.dirac, np.concatenate([[0.0], u]),
                              np.concatenate([iota, i]))
        from phcirc.graph import incidence_matrix

        assert np.all(incidence_matrix(triangle()).astype(float) @ i == 0)

    def test_tree_graph_zero_loops(self):
        g = DirectedGraph.from_edges([("e1", "a", "b"), ("e2", "b", "c")])
        loop = loop_kirchhoff_dirac(g)
        assert loop.b_mat.shape == (0, 2)
        # with no cycles the only admissible currents are i = B^T iota = 0
        assert dirac_contains(loop.system.dirac, [5.0, -1.0], [0.0, 0.0])
        assert not dirac_contains(loop.system.dirac, [0.0, 0.0], [0.0, 1.0])


class TestCircuitBlocks:
    def test_rcv_one_column_each(self):
        blocks = circuit_blocks(parse("V1 1 0 DC 5\nR1 1 2 R=10\nC1 2 0 C=1u\n"
                                      ".ground 0\n.end"))
        assert blocks.a_r.shape[1] == 1
        assert blocks.a_c.shape[1] == 1
        assert blocks.a_v.shape[1] == 1
        assert blocks.a_l.shape[1] == 0

    def test_column_partition_is_permutation(self, golden_texts):
        blocks = circuit_blocks(parse(golden_texts["acdc"]))
        m = blocks.graph.m
        cols = np.concatenate([blocks.cols[c] for c in ("R", "L", "C", "I", "V")])
        assert sorted(cols.tolist()) == list(range(m))
        assert blocks.a_full.shape == (4, 9)

    def test_acdc_reduced_incidence_4x9(self, golden_texts):
        blocks = circuit_blocks(parse(golden_texts["acdc"]))
        assert blocks.a_full.shape == (4, 9)
        from phcirc.graph import integer_rank

        assert integer_rank(blocks.a_full) == 4


class TestAssemble:
    def test_series_rc_stationary_points(self, golden_texts):
        # admissible stationary points of the assembled system satisfy u_C = u_V
        asm = assemble(parse(golden_texts["rc"]))
        from phcirc.assembly import _ph_constraint_residual, _gauss_newton_project

        n_l = asm.system.dims[0]
        dim = 2 * n_l + n_l + 2 * asm.system.dims[1] + 2 * asm.system.dims[2]

        def stationary(w):
            base = _ph_constraint_residual(asm, 0.0, w)
            return np.concatenate([base, w[n_l:2 * n_l]])  # all rates zero

        w, res = _gauss_newton_project(stationary, np.full(dim, 0.1))
        assert res < 1e-10
        z = w[2 * n_l:]
        e_l = z[:n_l]
        # storage efforts: (phi_1, phi_2, u_C); source pins phi at 5
        u_c = e_l[2]
        assert u_c == pytest.approx(5.0, abs=1e-8)

    def test_resistor_loop_with_current_source(self):
        # A_R g(A_R^T phi) + A_I i_I = 0 on solutions: g(phi_1) + i_I = 0
        nl = parse("I1 1 0 DC 1\nR1 1 0 G=0.5\n.ground 0\n.end")
        asm = assemble(nl)
        mna = to_mna_cf(asm.blocks)
        from phcirc.solver import dc_operating_point

        y = dc_operating_point(mna.dae_problem())
        phi = y[mna.slices["phi"]]
        assert 0.5 * phi[0] + 1.0 == pytest.approx(0.0, abs=1e-12)
        assert phi[0] == pytest.approx(-2.0)

    def test_empty_circuitless_netlist(self):
        nl = parse("R1 1 0 R=1\n.ground 0\n.end")
        asm = assemble(nl)
        assert is_dirac(asm.system.dirac.k_mat, asm.system.dirac.l_mat)

    def test_closed_form_matches_composition(self, golden_texts):
        for name in ("rc", "rlc", "rl_loop", "npn_bias", "acdc"):
            asm = assemble(parse(golden_texts[name]))  # raises AssemblyError on mismatch
            cf = closed_form_kernel(asm.blocks, asm.system.layout)
            assert is_dirac(cf.k_mat, cf.l_mat, tol=1e-10)

    def test_assembled_passes_dirac_suite(self, golden_texts, rng):
        for name in ("rc", "rlc", "acdc"):
            asm = assemble(parse(golden_texts[name]))
            d = asm.system.dirac
            assert is_dirac(d.k_mat, d.l_mat, tol=1e-10)
            for f, e in random_members(d, 100, rng):
                scale = 1.0 + np.linalg.norm(f) * np.linalg.norm(e)
                assert abs(float(e @ f)) <= 1e-10 * scale


class TestMnaChargeFlux:
    def test_series_rc_dc_point(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        from phcirc.solver import dc_operating_point

        y = dc_operating_point(mna.dae_problem())
        named = dict(zip(mna.unknown_names, y))
        assert named["phi(1)"] == pytest.approx(5.0)
        assert named["phi(2)"] == pytest.approx(5.0)
        assert named["q(C1)"] == pytest.approx(5e-6)
        assert named["iV(V1)"] == pytest.approx(0.0, abs=1e-12)

    def test_zero_point_zero_residual(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rlc"])))
        res = mna.residual(0.0, np.zeros(mna.dim), np.zeros(mna.dim))
        # only the voltage-source row is nonzero at the origin
        vsrc = mna.n_phi + mna.m_l
        expected = np.zeros(mna.dim)
        expected[vsrc] = 5.0
        assert np.allclose(res, expected)

    def test_nonlinear_capacitor_inverse(self):
        nl = parse("V1 1 0 DC 8\nC1 1 0 H=poly(0,0,0,0,0.25)\n.ground 0\n.end")
        mna = to_mna_cf(circuit_blocks(nl))
        # u = q^3, so Q_C(8) = 2
        y = np.zeros(mna.dim)
        y[mna.slices["phi"]] = 8.0
        y[mna.slices["q"]] = 2.0
        res = mna.residual(0.0, y, np.zeros(mna.dim))
        assert np.max(np.abs(res)) < 1e-9

    def test_residual_dimension_invariant(self, golden_texts):
        for name, extra in (("rc", 0), ("rlc", 0), ("acdc", 2)):
            mna = to_mna_cf(circuit_blocks(parse(golden_texts[name])))
            base = mna.n_phi + 2 * mna.m_l + mna.m_v + mna.m_c
            assert mna.dim == base + extra

    def test_analytic_jacobian_matches_fd(self, golden_texts, rng):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["acdc"])))
        prob = mna.dae_problem()
        y = 0.1 * rng.standard_normal(mna.dim)
        yd = 0.1 * rng.standard_normal(mna.dim)
        alpha = 1e3
        analytic = mna.jacobian(0.01, y, yd, alpha)
        fd = prob._fd_jac(0.01, y, yd, alpha)
        assert np.max(np.abs(analytic - fd)) <= 1e-4 * (1.0 + np.max(np.abs(analytic)))


class TestMnaPotential:
    def test_linear_device_jacobians(self, golden_texts):
        mna = to_mna(circuit_blocks(parse(golden_texts["rlc"])))
        u = np.array([3.0])
        assert mna._c_diag(u)[0] == pytest.approx(1e-6)
        assert mna._l_diag(np.array([2.0]))[0] == pytest.approx(1e-2)

    def test_c_is_inverse_hessian(self):
        nl = parse("V1 1 0 DC 8\nC1 1 0 H=poly(0,0,0,0,0.25)\n.ground 0\n.end")
        mna = to_mna(circuit_blocks(nl))
        # H = q^4/4: Hessian 3 q^2 = 12 at u = 8 (q = 2); C(u) = 1/12
        assert mna._c_diag(np.array([8.0]))[0] == pytest.approx(1.0 / 12.0, rel=1e-9)

    def test_equivalent_to_charge_flux_by_chain_rule(self, golden_texts, rng):
        blocks = circuit_blocks(parse(golden_texts["rlc"]))
        pot = to_mna(blocks)
        cf = to_mna_cf(blocks)
        for _ in range(10):
            y = rng.standard_normal(pot.dim)
            yd = rng.standard_normal(pot.dim)
            res_pot = pot.residual(0.0, y, yd)
            # chain-rule lift to the charge/flux unknowns
            ycf = np.zeros(cf.dim)
            ydcf = np.zeros(cf.dim)
            phi = y[pot.slices["phi"]]
            i_l = y[pot.slices["il"]]
            ycf[cf.slices["phi"]] = phi
            ycf[cf.slices["il"]] = i_l
            ycf[cf.slices["iv"]] = y[pot.slices["iv"]]
            u_c = blocks.a_c.T @ phi
            ycf[cf.slices["q"]] = cf._q_of_u(u_c)
            ycf[cf.slices["psi"]] = cf._psi_of_i(i_l)
            ydcf[cf.slices["q"]] = cf._c_diag(u_c) * (blocks.a_c.T @ yd[pot.slices["phi"]])
            ydcf[cf.slices["psi"]] = cf._l_diag(i_l) * yd[pot.slices["il"]]
            res_cf = cf.residual(0.0, ycf, ydcf)
            # potential-form rows embed into the charge/flux rows; the two
            # definition rows vanish identically under the lift
            assert np.max(np.abs(res_cf[:pot.dim] - res_pot)) < 1e-8
            assert np.max(np.abs(res_cf[pot.dim:])) < 1e-10


class TestMla:
    def test_series_rl_loop_equation(self, golden_texts):
        mla = to_mla(circuit_blocks(parse(golden_texts["rl_loop"])))
        # single loop: l iota' + R iota = u_V
        iota, iota_dot = 0.3, 7.0
        y = np.array([iota])
        yd = np.array([iota_dot])
        res = mla.residual(0.0, y, yd)
        assert res[0] == pytest.approx(1e-3 * iota_dot + 10.0 * iota - 1.0)

    def test_no_current_sources_empty_block(self, golden_texts):
        mla = to_mla(circuit_blocks(parse(golden_texts["rlc"])))
        assert mla.m_i == 0
        assert mla.dim == 1 + 1  # one loop, one capacitor voltage

    def test_transformer_rejected(self, golden_texts):
        with pytest.raises(NonInvertibleConstitutive):
            to_mla(circuit_blocks(parse(golden_texts["acdc"])))

    def test_cross_validation_against_mna(self, golden_texts):
        blocks = circuit_blocks(parse(golden_texts["rlc"]))
        mna, mla = to_mna(blocks), to_mla(blocks)
        cfg = IntegratorConfig(dt=1e-6)
        pn, pl = mna.dae_problem(), mla.dae_problem()
        yn, ydn = consistent_initial_state(pn, 0.0)
        yl, ydl = consistent_initial_state(pl, 0.0)
        tn = simulate(pn, cfg, 1e-3, x0=yn, xdot0=ydn)
        tl = simulate(pl, cfg, 1e-3, x0=yl, xdot0=ydl)
        for e in blocks.graph.edges:
            for kind in ("i", "u"):
                a = tn.observables[f"{kind}({e})"]
                b = tl.observables[f"{kind}({e})"]
                pin = 2 * (len(tn.times) * 1e-10 * 2) * (1.0 + np.max(np.abs(a)))
                assert np.max(np.abs(a - b)) <= pin


class TestEquivalence:
    def _points(self, mna, tstop=5e-4):
        prob = mna.dae_problem()
        y0, yd0 = consistent_initial_state(prob, 0.0)
        traj = simulate(prob, IntegratorConfig(dt=1e-6), tstop, x0=y0, xdot0=yd0)
        idx = np.linspace(0, len(traj.times) - 1, 20).astype(int)
        return [(traj.times[i], traj.states[i], traj.rates[i]) for i in idx]

    def test_rc_witness_small(self, golden_texts, rng):
        asm = assemble(parse(golden_texts["rc"]))
        mna = to_mna_cf(asm.blocks)
        report = ph_mna_equivalence(asm, mna, self._points(mna), rng=rng)
        assert report["passed"]
        assert report["max_witness"] <= 1e-10

    def test_negative_control_flipped_ac(self, golden_texts, rng):
        asm = assemble(parse(golden_texts["rc"]))
        flipped = asm.blocks.a_full.copy()
        flipped[:, asm.blocks.cols["C"]] *= -1
        bad = to_mna_cf(dataclasses.replace(asm.blocks, a_full=flipped))
        report = ph_mna_equivalence(asm, bad, self._points(bad), rng=rng)
        assert not report["passed"]
        assert report["max_witness"] > 1e-3

    def test_resistor_only_circuit(self, rng):
        nl = parse("I1 1 0 DC 1\nR1 1 0 R=2\n.ground 0\n.tran 1m 1u\n.end")
        asm = assemble(nl)
        mna = to_mna_cf(asm.blocks)
        report = ph_mna_equivalence(asm, mna, self._points(mna), rng=rng)
        assert report["passed"]


class TestEmitJson:
    def test_document_shape(self, golden_texts):
        asm = assemble(parse(golden_texts["rc"]))
        doc = json.loads(emit_json(asm))
        assert set(doc) == {"n", "K", "L", "layout", "blocks"}
        assert set(doc["blocks"]) == {"A_R", "A_L", "A_C", "A_I", "A_V",
                                      "B_R", "B_L", "B_C", "B_I", "B_V"}
        assert doc["blocks"]["A_R"] == [[1], [-1]]
        # integer-exact blocks
        assert all(v == int(v) for row in doc["blocks"]["A_C"] for v in row)
