import numpy as np
import pytest

from phcirc.components import standard_dirac
from phcirc.errors import DegenerateSpan, ShapeMismatch
from phcirc.ph_core import (
    DiracKernel,
    GradientLagrange,
    LinearLagrange,
    PHSystem,
    PortBlock,
    PortLayout,
    ResistiveRelation,
    dirac_contains,
    dirac_from_json,
    dirac_to_json,
    gradient_field_check,
    interconnect,
    is_dirac,
    is_linear_lagrange,
    kernel_basis,
    kernel_from_span,
    lagrange_from_json,
    lagrange_to_json,
    ph_residual,
    product,
    random_members,
    resistive_check,
    swap_link_roles,
)


def d1_kernel():
    """Kernel form of {(-i, i, u, u)} with an external first block."""
    k = np.array([[1.0, 1.0], [0.0, 0.0]])
    l = np.array([[0.0, 0.0], [1.0, -1.0]])
    layout = PortLayout.build(external=[("p", 1)], link=[("p", 1)])
    return DiracKernel(k, l, layout)


class TestIsDirac:
    def test_f_zero_structure(self):
        assert is_dirac(np.array([[1.0]]), np.array([[0.0]]))

    def test_identity_pair_rejected(self):
        assert not is_dirac(np.eye(2), np.eye(2))

    def test_skew_l(self):
        assert is_dirac(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            is_dirac(np.eye(2), np.eye(3))

    def test_rank_deficient_rejected(self):
        assert not is_dirac(np.zeros((2, 2)), np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestDiracContains:
    def test_member_of_d1(self):
        d = d1_kernel()
        assert dirac_contains(d, [-2.0, 2.0], [3.0, 3.0])
        f, e = np.array([-2.0, 2.0]), np.array([3.0, 3.0])
        assert abs(e @ f) == 0.0

    def test_non_member(self):
        assert not dirac_contains(d1_kernel(), [1.0, 1.0], [1.0, 1.0])

    def test_f_zero_structure_membership(self):
        layout = PortLayout.build(external=[("p", 1)])
        d = DiracKernel(np.array([[1.0]]), np.array([[0.0]]), layout)
        assert dirac_contains(d, [0.0], [7.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dirac_contains(d1_kernel(), [1.0], [1.0, 2.0])


class TestKernelFromSpan:
    def test_d1_span(self):
        basis = np.array([[-1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
        k, l = kernel_from_span(basis)
        assert is_dirac(k, l)
        layout = PortLayout.build(external=[("p", 2)])
        d = DiracKernel(k, l, layout)
        for row in basis:
            assert dirac_contains(d, row[:2], row[2:])

    def test_empty_basis_not_dirac(self):
        k, l = kernel_from_span(np.zeros((0, 2)))
        assert np.linalg.matrix_rank(np.hstack([k, l])) == 2
        assert not is_dirac(k, l)  # kernel {0} has dimension 0, not n=1

    def test_full_space_rejected_by_rank(self):
        k, l = kernel_from_span(np.eye(4))
        assert k.shape == (0, 2)
        assert not is_dirac(k, l)

    def test_degenerate_span(self):
        # singular values straddle the threshold with no clear gap
        basis = np.diag([1.0, 2e-10, 5e-11, 0.0])[:3]
        with pytest.raises(DegenerateSpan):
            kernel_from_span(basis)

    def test_odd_dimension_rejected(self):
        with pytest.raises(ShapeMismatch):
            kernel_from_span(np.ones((1, 3)))


class TestLinearLagrange:
    def test_f_pinned(self):
        assert is_linear_lagrange(np.eye(1), np.zeros((1, 1)))

    def test_e_pinned(self):
        assert is_linear_lagrange(np.zeros((1, 1)), np.eye(1))

    def test_nonsymmetric_rejected(self):
        assert not is_linear_lagrange(np.eye(2), np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_zero_state_subspace(self):
        lag = LinearLagrange.zero_state(3)
        assert is_linear_lagrange(lag.s_mat, lag.p_mat)
        assert np.all(lag.residual(np.zeros(3), np.array([1.0, -2.0, 3.0])) == 0)
        assert np.any(lag.residual(np.ones(3), np.zeros(3)) != 0)


class TestGradientFieldCheck:
    SAMPLES = [np.array([0.3, -0.2]), np.array([1.0, 0.5]), np.array([-0.7, 0.1])]

    def test_identity_map(self):
        assert gradient_field_check(lambda x: x, self.SAMPLES)

    def test_non_gradient(self):
        assert not gradient_field_check(lambda x: np.array([x[1], 0.0]), self.SAMPLES)

    def test_cubic_coupled_gradient(self):
        q = lambda x: np.array([x[0] ** 3 + x[1], x[0] + x[1]])
        assert gradient_field_check(q, self.SAMPLES)

    def test_gradient_lagrange_consistency(self):
        ham = GradientLagrange(
            hamiltonian=lambda x: 0.25 * x[0] ** 4 + x[0] * x[1] + 0.5 * x[1] ** 2,
            gradient=lambda x: np.array([x[0] ** 3 + x[1], x[0] + x[1]]),
            dim=2,
        )
        assert ham.check(self.SAMPLES)


class TestResistiveCheck:
    def test_linear_conductance(self):
        rel = ResistiveRelation(1, "conductance", mapping=lambda e: 2.0 * e)
        paired = rel.pairs_from_samples([np.array([3.0])])
        f, e = paired[0]
        assert np.allclose(f, [-6.0]) and np.allclose(e, [3.0])
        assert e @ f == -18.0
        assert resistive_check(rel, [np.array([3.0])])

    def test_negative_resistor_fails(self):
        rel = ResistiveRelation(1, "conductance", mapping=lambda e: -e)
        assert not resistive_check(rel, [np.array([1.0])])

    def test_pn_diode_pair(self):
        a, b = 1e-12, 0.025
        rel = ResistiveRelation(1, "conductance",
                                mapping=lambda e: a * (np.exp(e / b) - 1.0))
        assert resistive_check(rel, [np.array([0.1])])
        f, e = rel.pairs_from_samples([np.array([0.1])])[0]
        assert f[0] < 0 and e[0] > 0


def resistor_system(g=1.0):
    d = standard_dirac(1, first_role="resistive", name="R")
    rel = ResistiveRelation(1, "conductance", mapping=lambda e: g * e)
    return PHSystem(d, (), (rel,))


def source_system():
    d = standard_dirac(1, first_role="external", name="S")
    return PHSystem(d, (), ())


class TestProduct:
    def test_single_system_identity(self):
        s = resistor_system()
        assert product([s]) is s

    def test_two_resistors_block_structure(self):
        p = product([resistor_system(), resistor_system()])
        assert p.dirac.dim == 4
        assert is_dirac(p.dirac.k_mat, p.dirac.l_mat)
        assert p.dims == (0, 2, 0, 2)

    def test_empty_product(self):
        p = product([])
        assert p.dirac.dim == 0
        assert is_dirac(p.dirac.k_mat, p.dirac.l_mat)

    def test_associative_up_to_subspace(self, rng):
        a, b, c = resistor_system(1.0), source_system(), resistor_system(2.0)
        p1 = product([product([a, b]), c])
        p2 = product([a, product([b, c])])
        b1, b2 = kernel_basis(p1.dirac), kernel_basis(p2.dirac)
        assert b1.shape == b2.shape
        # mutual containment of the two kernels
        n = p1.dirac.dim
        assert np.max(np.abs(p2.dirac.k_mat @ b1[:, :n].T
                             + p2.dirac.l_mat @ b1[:, n:].T)) < 1e-10
        assert np.max(np.abs(p1.dirac.k_mat @ b2[:, :n].T
                             + p1.dirac.l_mat @ b2[:, n:].T)) < 1e-10


class TestInterconnect:
    def test_source_resistor_port_elimination(self):
        comp = interconnect(source_system(), resistor_system())
        # i_src = -i_res and u_src = u_res; with f = -i on both sides that
        # reads f_P + f_R = 0 and e_P = e_R on every member
        basis = kernel_basis(comp.dirac)
        for row in basis:
            f_p, f_r, e_p, e_r = row
            assert abs(f_p + f_r) < 1e-12
            assert abs(e_p - e_r) < 1e-12
        assert is_dirac(comp.dirac.k_mat, comp.dirac.l_mat)

    def test_zero_link_equals_product(self):
        a = PHSystem(DiracKernel(np.array([[1.0]]), np.array([[0.0]]),
                                 PortLayout.build(external=[("a", 1)])), (), ())
        b = PHSystem(DiracKernel(np.array([[0.0]]), np.array([[1.0]]),
                                 PortLayout.build(external=[("b", 1)])), (), ())
        comp = interconnect(a, b)
        prod = product([a, b])
        b1, b2 = kernel_basis(comp.dirac), kernel_basis(prod.dirac)
        assert b1.shape == b2.shape
        n = comp.dirac.dim
        assert np.max(np.abs(prod.dirac.k_mat @ b1[:, :n].T
                             + prod.dirac.l_mat @ b1[:, n:].T)) < 1e-12

    def test_random_compositions_stay_dirac(self, rng):
        worst = 0.0
        for _ in range(100):
            r1, r2, nl = int(rng.integers(1, 4)), int(rng.integers(1, 4)), \
                int(rng.integers(0, 4))
            s1 = _random_system(r1, nl, rng)
            s2 = _random_system(r2, nl, rng)
            comp = interconnect(s1, s2)
            assert is_dirac(comp.dirac.k_mat, comp.dirac.l_mat, tol=1e-10)
            for f, e in random_members(comp.dirac, 5, rng):
                scale = 1.0 + np.linalg.norm(f) * np.linalg.norm(e)
                worst = max(worst, abs(float(e @ f)) / scale)
        assert worst <= 1e-10

    def test_link_mismatch(self):
        from phcirc.errors import LinkMismatch

        with pytest.raises(LinkMismatch):
            interconnect(resistor_system(), _random_system(1, 2))


def _random_system(rest, link, rng=None):
    rng = rng or np.random.default_rng(0)
    n = rest + link
    j = rng.integers(-3, 4, size=(n, n)).astype(float)
    l = (j - j.T) / 2.0
    m = rng.integers(-2, 3, size=(n, n)).astype(float)
    while abs(np.linalg.det(m)) < 0.5:
        m = rng.integers(-2, 3, size=(n, n)).astype(float)
    layout = PortLayout.build(external=[("p", rest)], link=[("l", link)])
    return PHSystem(DiracKernel(m @ np.eye(n), m @ l, layout), (), ())


class TestSwapLinkRoles:
    def test_swap_preserves_dirac(self):
        s = resistor_system()
        sw = swap_link_roles(s)
        assert is_dirac(sw.dirac.k_mat, sw.dirac.l_mat)
        # member (-i, u | u, i) for the swapped resistor structure
        assert dirac_contains(sw.dirac, [-2.0, 5.0], [5.0, 2.0])


class TestPhResidual:
    def test_open_capacitor(self):
        from phcirc.components import Hamiltonian, capacitor_ph

        sys = capacitor_ph(Hamiltonian.quadratic(1.0), name="C")
        # H = q^2/2, x = q = 1, xdot = 0, open port i = 0: u = 1 solves it
        z = np.array([1.0, 0.0, 1.0])  # (e_L, f_link, e_link)
        res = ph_residual(sys, 0.0, [1.0], [0.0], z)
        assert np.max(np.abs(res)) < 1e-14

    def test_zero_point_on_linear_system(self):
        sys = resistor_system()
        z = np.zeros(2 * 1 + 2 * 1)  # (f_R, e_R, f_link, e_link)
        res = ph_residual(sys, 0.0, np.zeros(0), np.zeros(0), z)
        assert np.max(np.abs(res)) == 0.0

    def test_wrong_length_z(self):
        with pytest.raises(ShapeMismatch):
            ph_residual(resistor_system(), 0.0, np.zeros(0), np.zeros(0), np.zeros(3))


class TestPowerConservation:
    def test_members_have_zero_power(self, rng):
        for lp in (1, 2, 3):
            d = standard_dirac(lp)
            for f, e in random_members(d, 100, rng):
                scale = 1.0 + np.linalg.norm(f) * np.linalg.norm(e)
                assert abs(float(e @ f)) <= 1e-10 * scale

    def test_kernel_dimension(self):
        for lp in (1, 2, 3, 4):
            d = standard_dirac(lp)
            assert kernel_basis(d).shape[0] == d.dim


class TestSerialization:
    def test_dirac_roundtrip_bit_exact(self):
        d = d1_kernel()
        doc = dirac_to_json(d)
        back = dirac_from_json(doc)
        assert np.array_equal(back.k_mat, d.k_mat)
        assert np.array_equal(back.l_mat, d.l_mat)
        assert back.layout == d.layout

    def test_lagrange_roundtrip(self):
        lag = LinearLagrange(np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]]))
        back = lagrange_from_json(lagrange_to_json(lag))
        assert np.array_equal(back.s_mat, lag.s_mat)
        assert np.array_equal(back.p_mat, lag.p_mat)

    def test_noninteger_floats_roundtrip(self):
        layout = PortLayout.build(external=[("p", 1)])
        d = DiracKernel(np.array([[0.1 + 0.2]]), np.array([[1e-17]]), layout)
        back = dirac_from_json(dirac_to_json(d))
        assert back.k_mat[0, 0] == d.k_mat[0, 0]
        assert back.l_mat[0, 0] == d.l_mat[0, 0]
