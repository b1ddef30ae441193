"""Circuit assembly: Kirchhoff structures, interconnection, MNA and MLA.

The vertex-based Kirchhoff structure routes power losslessly between
vertex charge/potential pairs and edge current/voltage pairs; composed
with the Cartesian product of the component systems over the edge link
ports it yields the circuit's port-Hamiltonian model.  The same circuit
data also assembles directly into the charge/flux-oriented modified
nodal analysis, the potential-form MNA, and the modified loop analysis,
all as DAE residuals ready for implicit integration.

The interconnection is computed numerically (kernel spans); for every
circuit the known closed-form kernel (node balance plus per-edge voltage
rows) is built independently and the two representations are checked to
describe the same subspace.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import graph as graphmod
from .components import (
    ComponentModel,
    Hamiltonian,
    ScalarMap,
    to_ph,
    transistor_edge_currents,
    transistor_edge_jacobian,
)
from .errors import (
    AssemblyError,
    GroundSetViolation,
    NonInvertibleConstitutive,
    ShapeMismatch,
)
from .graph import DirectedGraph, fundamental_cycle_matrix, incidence_matrix, spanning_forest
from .netlist import Netlist, build_graph
from .ph_core import (
    DiracKernel,
    LinearLagrange,
    PHSystem,
    PortLayout,
    interconnect,
    is_dirac,
    kernel_basis,
    ph_residual,
    product,
)

__all__ = [
    "KirchhoffPH",
    "LoopKirchhoffPH",
    "CircuitBlocks",
    "AssembledCircuit",
    "MnaSystem",
    "MlaSystem",
    "kirchhoff_dirac",
    "loop_kirchhoff_dirac",
    "circuit_blocks",
    "assemble",
    "closed_form_kernel",
    "to_mna_cf",
    "to_mna",
    "to_mla",
    "ph_mna_equivalence",
]


# ---------------------------------------------------------------------------
# Kirchhoff structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KirchhoffPH:
    """Vertex-based Kirchhoff pH system and its reduced incidence matrix.

    The Dirac structure is the block kernel

        [I  A] (j)   [0    0] (phi)
        [0  0] (i) + [A^T -I] (u)   = 0,

    so members satisfy j = -A i and u = A^T phi; the Lagrange part pins
    the vertex charges to zero, which turns the two rows into the
    Kirchhoff current and voltage laws.
    """

    system: PHSystem
    a_reduced: np.ndarray
    kept_vertices: tuple[str, ...]
    edges: tuple[str, ...]


@dataclass(frozen=True)
class LoopKirchhoffPH:
    """Cycle-based Kirchhoff pH system built on a fundamental cycle matrix.

    Members satisfy psi-flow = -B u and i = B^T iota; after the Lagrange
    restriction the voltage law B u = 0 holds and currents range over the
    cycle space.  Note the link roles are exchanged relative to the
    vertex form: link flows are edge voltages, link efforts edge
    currents.
    """

    system: PHSystem
    b_mat: np.ndarray
    forest: tuple[str, ...]
    chords: tuple[str, ...]
    edges: tuple[str, ...]


def kirchhoff_dirac(g: DirectedGraph, s: Sequence[str]) -> KirchhoffPH:
    """Kirchhoff-Dirac structure plus its zero-charge Lagrange submanifold.

    ``s`` is the ground set: vertex names, exactly one per connected
    component (full row rank A); GroundSetViolation otherwise.
    """
    a0 = incidence_matrix(g)
    ground_rows = [g.vertex_index(v) for v in s]
    a = graphmod.reduced_incidence(a0, ground_rows)
    k_comp = len(graphmod.connected_components(g))
    if len(s) != k_comp:
        raise GroundSetViolation(
            f"ground set must cover every component: {len(s)} grounds, {k_comp} components"
        )
    kept = tuple(v for i, v in enumerate(g.vertices) if i not in set(ground_rows))
    n_phi, m = a.shape
    k_mat = np.block([
        [np.eye(n_phi), a.astype(float)],
        [np.zeros((m, n_phi)), np.zeros((m, m))],
    ])
    l_mat = np.block([
        [np.zeros((n_phi, n_phi)), np.zeros((n_phi, m))],
        [a.T.astype(float), -np.eye(m)],
    ])
    layout = PortLayout.build(storage=[("nodes", n_phi)], link=[("edges", m)])
    d = DiracKernel(k_mat, l_mat, layout)
    sys = PHSystem(d, (LinearLagrange.zero_state(n_phi),), ())
    return KirchhoffPH(sys, a, kept, g.edges)


def loop_kirchhoff_dirac(g: DirectedGraph) -> LoopKirchhoffPH:
    """Cycle-based Kirchhoff pH system from the greedy spanning forest."""
    forest = spanning_forest(g)
    b = fundamental_cycle_matrix(g, forest)
    n_loops, m = b.shape
    k_mat = np.block([
        [np.eye(n_loops), b.astype(float)],
        [np.zeros((m, n_loops)), np.zeros((m, m))],
    ])
    l_mat = np.block([
        [np.zeros((n_loops, n_loops)), np.zeros((n_loops, m))],
        [b.T.astype(float), -np.eye(m)],
    ])
    layout = PortLayout.build(storage=[("cycles", n_loops)], link=[("edges", m)])
    d = DiracKernel(k_mat, l_mat, layout)
    sys = PHSystem(d, (LinearLagrange.zero_state(n_loops),), ())
    chords = tuple(e for e in g.edges if e not in set(forest))
    return LoopKirchhoffPH(sys, b, forest, chords, g.edges)


# ---------------------------------------------------------------------------
# circuit blocks
# ---------------------------------------------------------------------------

_CLASS_OF_KIND = {
    "capacitor": "C", "inductor": "L",
    "conductance": "R", "resistance": "R", "pn_diode": "R", "ideal_diode": "R",
    "transformer": "R", "npn_transistor": "R",
    "source_current": "I", "sink": "I", "source_voltage": "V",
}

CLASSES = ("R", "L", "C", "I", "V")


@dataclass(frozen=True)
class RGroup:
    """One resistive-slot device inside the R-class column block."""

    kind: str                      # "map" | "transformer" | "transistor"
    comp: ComponentModel
    cols: tuple[int, ...]          # positions within the R-class ordering


@dataclass(frozen=True)
class CircuitBlocks:
    """Reduced-incidence and cycle-matrix column blocks by component class.

    ``a_full``/``b_full`` keep the graph edge order; the per-class blocks
    A_R, A_L, A_C, A_S = [A_I A_V] (and the B analogues) are column
    selections, so their concatenation is a column permutation of the
    full matrices.  Transformers and transistors sit inside the R class
    (their relations live in the resistive slot); ``r_groups`` records
    the sub-partition the nodal/loop analyses need.
    """

    graph: DirectedGraph
    grounds: tuple[str, ...]
    kept_vertices: tuple[str, ...]
    a_full: np.ndarray
    b_full: np.ndarray
    cols: dict
    edge_ids: dict
    r_groups: tuple[RGroup, ...]
    components: tuple[ComponentModel, ...]
    edge_map: dict

    def a_block(self, cls: str) -> np.ndarray:
        return self.a_full[:, self.cols[cls]]

    def b_block(self, cls: str) -> np.ndarray:
        return self.b_full[:, self.cols[cls]]

    @property
    def a_r(self):
        return self.a_block("R")

    @property
    def a_l(self):
        return self.a_block("L")

    @property
    def a_c(self):
        return self.a_block("C")

    @property
    def a_i(self):
        return self.a_block("I")

    @property
    def a_v(self):
        return self.a_block("V")

    @property
    def a_s(self):
        return np.hstack([self.a_i, self.a_v])

    def class_components(self, cls: str) -> list[ComponentModel]:
        by_edge = {}
        for comp in self.components:
            for eid in comp.edge_ids():
                by_edge[eid] = comp
        return [by_edge[e] for e in self.edge_ids[cls]]


def circuit_blocks(netlist: Netlist) -> CircuitBlocks:
    """Group the reduced incidence and cycle matrices by component class."""
    g, grounds, edge_map = build_graph(netlist)
    a0 = incidence_matrix(g)
    ground_rows = [g.vertex_index(v) for v in grounds]
    a = graphmod.reduced_incidence(a0, ground_rows)
    kept = tuple(v for i, v in enumerate(g.vertices) if i not in set(ground_rows))
    b = fundamental_cycle_matrix(g, spanning_forest(g))

    cols = {c: [] for c in CLASSES}
    edge_ids = {c: [] for c in CLASSES}
    r_groups: list[RGroup] = []
    eindex = {e: j for j, e in enumerate(g.edges)}
    for comp in netlist.components:
        cls = _CLASS_OF_KIND[comp.kind]
        ids = comp.edge_ids()
        positions = []
        for eid in ids:
            positions.append(len(cols[cls]))
            cols[cls].append(eindex[eid])
            edge_ids[cls].append(eid)
        if cls == "R":
            if comp.kind == "transformer":
                r_groups.append(RGroup("transformer", comp, tuple(positions)))
            elif comp.kind == "npn_transistor":
                r_groups.append(RGroup("transistor", comp, tuple(positions)))
            else:
                r_groups.append(RGroup("map", comp, tuple(positions)))
    cols = {c: np.array(v, dtype=int) for c, v in cols.items()}
    return CircuitBlocks(g, grounds, kept, a, b, cols,
                         {c: tuple(v) for c, v in edge_ids.items()},
                         tuple(r_groups), netlist.components, edge_map)


# ---------------------------------------------------------------------------
# assembled pH model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssembledCircuit:
    """Interconnected circuit model plus the bookkeeping to navigate it."""

    netlist: Netlist
    blocks: CircuitBlocks
    kirchhoff: KirchhoffPH
    component_systems: tuple[tuple[ComponentModel, PHSystem], ...]
    system: PHSystem

    @property
    def dirac(self) -> DiracKernel:
        return self.system.dirac


def closed_form_kernel(blocks: CircuitBlocks, layout: PortLayout) -> DiracKernel:
    """Direct construction of the interconnected Dirac structure.

    Row content: vertex balance j = sum of class terms, then one voltage
    row per edge (u_e = A^T phi expressed on the component's own
    flow/effort coordinate).  Must describe the same subspace as the
    numerically composed kernel; assembly asserts that.
    """
    n_phi = len(blocks.kept_vertices)
    dim = layout.dim
    st = {b.name: sl for b, sl in layout.block_slices("storage")}
    rs = {b.name: sl for b, sl in layout.block_slices("resistive")}
    ex = {b.name: sl for b, sl in layout.block_slices("external")}
    rows = n_phi + blocks.graph.m
    k = np.zeros((rows, dim))
    l = np.zeros((rows, dim))
    nodes = st["nodes"]
    k[:n_phi, nodes] = np.eye(n_phi)

    r = n_phi
    a = blocks.a_full.astype(float)
    eindex = {e: j for j, e in enumerate(blocks.graph.edges)}
    for comp in blocks.components:
        cls = _CLASS_OF_KIND[comp.kind]
        slot = {"C": st, "L": st, "R": rs, "I": ex, "V": ex}[cls].get(comp.name)
        for port, eid in enumerate(comp.edge_ids()):
            col = eindex[eid]
            coord = slot.start + port
            if cls == "L":
                # storage flow is -u_L: node row couples through the effort i_L
                l[:n_phi, coord] -= a[:, col]
                k[r, coord] = -1.0
                l[r, nodes] = -a[:, col]
            else:
                # storage/resistive/external flow is -i: node row couples the flow
                k[:n_phi, coord] = a[:, col]
                l[r, nodes] = -a[:, col]
                l[r, coord] = 1.0
            r += 1
    return DiracKernel(k, l, layout)


def assemble(netlist: Netlist) -> AssembledCircuit:
    """Interconnect the Kirchhoff system with the component product.

    The composed Dirac structure is validated with is_dirac and checked
    against the independently built closed-form kernel (mutual
    containment of the two subspaces).
    """
    blocks = circuit_blocks(netlist)
    kir = kirchhoff_dirac(blocks.graph, blocks.grounds)
    comp_systems = tuple((c, to_ph(c)) for c in netlist.components)
    prod = product([s for _, s in comp_systems])
    sys = interconnect(kir.system, prod)
    if not is_dirac(sys.dirac.k_mat, sys.dirac.l_mat, tol=1e-10):
        raise AssemblyError("assembled structure failed Dirac validation")
    _assert_same_subspace(sys.dirac, closed_form_kernel(blocks, sys.layout))
    return AssembledCircuit(netlist, blocks, kir, comp_systems, sys)


def assemble_ph(netlist: Netlist) -> PHSystem:
    return assemble(netlist).system


def _assert_same_subspace(d1: DiracKernel, d2: DiracKernel, tol: float = 1e-9):
    b1 = kernel_basis(d1)
    b2 = kernel_basis(d2)
    if b1.shape != b2.shape:
        raise AssemblyError(
            f"composed kernel dimension {b1.shape[0]} != closed form {b2.shape[0]}"
        )
    n = d1.dim
    r1 = np.max(np.abs(d2.k_mat @ b1[:, :n].T + d2.l_mat @ b1[:, n:].T), initial=0.0)
    r2 = np.max(np.abs(d1.k_mat @ b2[:, :n].T + d1.l_mat @ b2[:, n:].T), initial=0.0)
    scale = 1.0 + max(np.max(np.abs(d2.k_mat), initial=0.0),
                      np.max(np.abs(d2.l_mat), initial=0.0))
    if max(r1, r2) > tol * scale:
        raise AssemblyError(
            f"composed kernel and closed form disagree (witness {max(r1, r2):.3e})"
        )


# ---------------------------------------------------------------------------
# scalar storage laws
# ---------------------------------------------------------------------------

class _StorageLaw:
    """Scalar capacitor/inductor law with inverse and Jacobian-of-inverse."""

    def __init__(self, ham: Hamiltonian):
        self.ham = ham

    def energy(self, x: float) -> float:
        return float(self.ham.value(x))

    def effort(self, x: float) -> float:
        return float(self.ham.grad(x))

    def state_of_effort(self, u: float) -> float:
        if self.ham.grad_inverse is not None:
            return float(self.ham.grad_inverse(u))
        from .components import invert_increasing

        return float(invert_increasing(self.ham.grad, self.ham.hess, u))

    def jac_of_inverse(self, u: float) -> float:
        """d(state)/d(effort), the inverse of the Hessian at the state."""
        if self.ham.hess is not None:
            h = float(self.ham.hess(self.state_of_effort(u)))
            if h == 0.0:
                raise NonInvertibleConstitutive("singular Hessian in storage law")
            return 1.0 / h
        step = max(1e-6, 1e-6 * abs(u))
        return (self.state_of_effort(u + step) - self.state_of_effort(u - step)) / (2 * step)


# ---------------------------------------------------------------------------
# modified nodal analysis
# ---------------------------------------------------------------------------

class MnaSystem:
    """Residual form of the (charge/flux-oriented or potential) MNA.

    Charge/flux unknowns: (phi, q_C, psi_L, i_L, i_V[, i_T]); residual
    blocks: node balance, flux rate, voltage-source constraint, charge
    definition, flux definition[, transformer relations].  The potential
    form drops q_C/psi_L and uses the Jacobians of the inverse
    constitutive maps instead.
    """

    def __init__(self, blocks: CircuitBlocks, form: str = "charge_flux"):
        if form not in ("charge_flux", "potential"):
            raise ValueError(f"unknown MNA form {form!r}")
        self.blocks = blocks
        self.form = form
        self.n_phi = len(blocks.kept_vertices)
        self.m_r = len(blocks.cols["R"])
        self.m_l = len(blocks.cols["L"])
        self.m_c = len(blocks.cols["C"])
        self.m_i = len(blocks.cols["I"])
        self.m_v = len(blocks.cols["V"])
        self.xforms = [g for g in blocks.r_groups if g.kind == "transformer"]
        self.n_t = len(self.xforms)

        self.c_laws = [_StorageLaw(c.hamiltonian) for c in blocks.class_components("C")]
        self.l_laws = [_StorageLaw(c.hamiltonian) for c in blocks.class_components("L")]
        self.i_sources = blocks.class_components("I")
        self.v_sources = blocks.class_components("V")

        self._xform_cols = [g.cols for g in self.xforms]
        self._map_groups = [g for g in blocks.r_groups if g.kind != "transformer"]

        names: list[str] = [f"phi({v})" for v in blocks.kept_vertices]
        slices = {}
        off = self.n_phi
        slices["phi"] = slice(0, self.n_phi)
        if form == "charge_flux":
            slices["q"] = slice(off, off + self.m_c)
            names += [f"q({e})" for e in blocks.edge_ids["C"]]
            off += self.m_c
            slices["psi"] = slice(off, off + self.m_l)
            names += [f"psi({e})" for e in blocks.edge_ids["L"]]
            off += self.m_l
        slices["il"] = slice(off, off + self.m_l)
        names += [f"iL({e})" for e in blocks.edge_ids["L"]]
        off += self.m_l
        slices["iv"] = slice(off, off + self.m_v)
        names += [f"iV({e})" for e in blocks.edge_ids["V"]]
        off += self.m_v
        slices["it"] = slice(off, off + 2 * self.n_t)
        names += [f"iT({g.comp.name}.{p + 1})" for g in self.xforms for p in (0, 1)]
        off += 2 * self.n_t
        self.slices = slices
        self.dim = off
        self.unknown_names = tuple(names)

        mask = np.zeros(self.dim, dtype=bool)
        if form == "charge_flux":
            mask[slices["q"]] = True
            mask[slices["psi"]] = True
        else:
            # rates of phi enter through A_C C(.) A_C^T; only capacitor-touched
            # potentials are differential
            touched = np.any(self.blocks.a_c != 0, axis=1)
            mask[slices["phi"]] = touched
            mask[slices["il"]] = True
        self.diff_mask = mask

        self._linear_storage = all(
            law.ham.hess is not None and law.ham.grad_inverse is not None
            for law in self.c_laws + self.l_laws
        )

    # -- device evaluations -------------------------------------------------

    def _r_currents(self, u_r: np.ndarray, i_t: np.ndarray) -> np.ndarray:
        i_r = np.zeros(self.m_r)
        for grp in self._map_groups:
            if grp.kind == "map":
                c = grp.cols[0]
                law = _resistive_law(grp.comp)
                g_val, _ = law.as_form("conductance")
                i_r[c] = float(g_val(u_r[c]))
            else:
                c0, c1 = grp.cols
                i_pair = transistor_edge_currents(u_r[[c0, c1]], grp.comp.transistor)
                i_r[c0], i_r[c1] = i_pair
        for idx, grp in enumerate(self.xforms):
            c0, c1 = grp.cols
            i_r[c0] = i_t[2 * idx]
            i_r[c1] = i_t[2 * idx + 1]
        return i_r

    def _r_conductance_jac(self, u_r: np.ndarray) -> np.ndarray:
        """d i_R / d u_R (zero on transformer columns)."""
        jac = np.zeros((self.m_r, self.m_r))
        for grp in self._map_groups:
            if grp.kind == "map":
                c = grp.cols[0]
                law = _resistive_law(grp.comp)
                _, g_der = law.as_form("conductance")
                jac[c, c] = float(g_der(u_r[c]))
            else:
                c0, c1 = grp.cols
                jac[np.ix_([c0, c1], [c0, c1])] = transistor_edge_jacobian(
                    u_r[[c0, c1]], grp.comp.transistor)
        return jac

    def _i_wave(self, t: float) -> np.ndarray:
        return np.array([c.waveform(t) if c.waveform is not None else 0.0
                         for c in self.i_sources])

    def _u_wave(self, t: float) -> np.ndarray:
        return np.array([c.waveform(t) for c in self.v_sources])

    def _q_of_u(self, u_c: np.ndarray) -> np.ndarray:
        return np.array([law.state_of_effort(u) for law, u in zip(self.c_laws, u_c)])

    def _psi_of_i(self, i_l: np.ndarray) -> np.ndarray:
        return np.array([law.state_of_effort(i) for law, i in zip(self.l_laws, i_l)])

    def _c_diag(self, u_c: np.ndarray) -> np.ndarray:
        return np.array([law.jac_of_inverse(u) for law, u in zip(self.c_laws, u_c)])

    def _l_diag(self, i_l: np.ndarray) -> np.ndarray:
        return np.array([law.jac_of_inverse(i) for law, i in zip(self.l_laws, i_l)])

    # -- residual and jacobian ----------------------------------------------

    def residual(self, t: float, y: np.ndarray, ydot: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ydot = np.asarray(ydot, dtype=float)
        if y.shape[0] != self.dim or ydot.shape[0] != self.dim:
            raise ShapeMismatch(f"state vectors must have length {self.dim}")
        b = self.blocks
        sl = self.slices
        phi = y[sl["phi"]]
        i_l = y[sl["il"]]
        i_v = y[sl["iv"]]
        i_t = y[sl["it"]]
        u_r = b.a_r.T @ phi
        i_r = self._r_currents(u_r, i_t)

        pieces = []
        if self.form == "charge_flux":
            q = y[sl["q"]]
            psi = y[sl["psi"]]
            node = (b.a_c @ ydot[sl["q"]] + b.a_r @ i_r + b.a_l @ i_l
                    + b.a_i @ self._i_wave(t) + b.a_v @ i_v)
            pieces.append(node)
            pieces.append(-b.a_l.T @ phi + ydot[sl["psi"]])
            pieces.append(-b.a_v.T @ phi + self._u_wave(t))
            pieces.append(q - self._q_of_u(b.a_c.T @ phi))
            pieces.append(psi - self._psi_of_i(i_l))
        else:
            u_c = b.a_c.T @ phi
            node = (b.a_c @ (self._c_diag(u_c) * (b.a_c.T @ ydot[sl["phi"]]))
                    + b.a_r @ i_r + b.a_l @ i_l
                    + b.a_i @ self._i_wave(t) + b.a_v @ i_v)
            pieces.append(node)
            pieces.append(-b.a_l.T @ phi + self._l_diag(i_l) * ydot[sl["il"]])
            pieces.append(-b.a_v.T @ phi + self._u_wave(t))
        for idx, grp in enumerate(self.xforms):
            ratio = grp.comp.params["ratio"]
            c0, c1 = grp.cols
            a0 = b.a_r[:, c0]
            a1 = b.a_r[:, c1]
            pieces.append(np.array([
                ratio * i_t[2 * idx] + i_t[2 * idx + 1],
                float((a0 - ratio * a1) @ phi),
            ]))
        return np.concatenate(pieces) if pieces else np.zeros(0)

    def jacobian(self, t: float, y: np.ndarray, ydot: np.ndarray,
                 alpha: float) -> np.ndarray:
        """dF/dy + alpha * dF/dydot, analytic."""
        if self.form == "potential" and not self._linear_storage:
            raise NotImplementedError  # DaeProblem falls back to finite differences
        b = self.blocks
        sl = self.slices
        phi = y[sl["phi"]]
        u_r = b.a_r.T @ phi
        jac = np.zeros((self.dim, self.dim))
        g_jac = self._r_conductance_jac(u_r)

        node = slice(0, self.n_phi)
        jac[node, sl["phi"]] += b.a_r @ g_jac @ b.a_r.T
        jac[node, sl["il"]] += b.a_l
        jac[node, sl["iv"]] += b.a_v
        for idx, grp in enumerate(self.xforms):
            c0, c1 = grp.cols
            jac[node, sl["it"].start + 2 * idx] += b.a_r[:, c0]
            jac[node, sl["it"].start + 2 * idx + 1] += b.a_r[:, c1]

        if self.form == "charge_flux":
            jac[node, sl["q"]] += alpha * b.a_c
            flux = slice(self.n_phi, self.n_phi + self.m_l)
            jac[flux, sl["phi"]] += -b.a_l.T
            jac[flux.start + np.arange(self.m_l),
                sl["psi"].start + np.arange(self.m_l)] += alpha
            vsrc = slice(flux.stop, flux.stop + self.m_v)
            jac[vsrc, sl["phi"]] += -b.a_v.T
            charge = slice(vsrc.stop, vsrc.stop + self.m_c)
            u_c = b.a_c.T @ phi
            jac[charge.start + np.arange(self.m_c),
                sl["q"].start + np.arange(self.m_c)] += 1.0
            jac[charge, sl["phi"]] += -(self._c_diag(u_c)[:, None] * b.a_c.T)
            fluxdef = slice(charge.stop, charge.stop + self.m_l)
            i_l = y[sl["il"]]
            jac[fluxdef.start + np.arange(self.m_l),
                sl["psi"].start + np.arange(self.m_l)] += 1.0
            jac[fluxdef, sl["il"]] += -np.diag(self._l_diag(i_l))
            row = fluxdef.stop
        else:
            u_c = b.a_c.T @ phi
            jac[node, sl["phi"]] += alpha * (b.a_c @ (self._c_diag(u_c)[:, None] * b.a_c.T))
            flux = slice(self.n_phi, self.n_phi + self.m_l)
            jac[flux, sl["phi"]] += -b.a_l.T
            i_l = y[sl["il"]]
            jac[flux, sl["il"]] += alpha * np.diag(self._l_diag(i_l))
            vsrc = slice(flux.stop, flux.stop + self.m_v)
            jac[vsrc, sl["phi"]] += -b.a_v.T
            row = vsrc.stop

        for idx, grp in enumerate(self.xforms):
            ratio = grp.comp.params["ratio"]
            c0, c1 = grp.cols
            jac[row, sl["it"].start + 2 * idx] = ratio
            jac[row, sl["it"].start + 2 * idx + 1] = 1.0
            jac[row + 1, sl["phi"]] = b.a_r[:, c0] - ratio * b.a_r[:, c1]
            row += 2
        return jac

    # -- observables and audit ----------------------------------------------

    def observable_names(self) -> tuple[str, ...]:
        edges = self.blocks.graph.edges
        return tuple([f"i({e})" for e in edges] + [f"u({e})" for e in edges])

    def observables(self, t: float, y: np.ndarray, ydot: np.ndarray) -> dict:
        """Per-edge currents and device-side voltages."""
        b = self.blocks
        sl = self.slices
        phi = y[sl["phi"]]
        u_r = b.a_r.T @ phi
        i_t = y[sl["it"]]
        i_r = self._r_currents(u_r, i_t)
        i_l = y[sl["il"]]
        i_v = y[sl["iv"]]
        i_i = self._i_wave(t)

        cur: dict[str, float] = {}
        volt: dict[str, float] = {}
        for pos, e in enumerate(b.edge_ids["R"]):
            cur[e] = float(i_r[pos])
            volt[e] = float(u_r[pos])
        for idx, grp in enumerate(self.xforms):
            ratio = grp.comp.params["ratio"]
            c0, c1 = grp.cols
            e0, e1 = b.edge_ids["R"][c0], b.edge_ids["R"][c1]
            volt[e0] = float(ratio * u_r[c1])  # device-side primary voltage
            volt[e1] = float(u_r[c1])
        for pos, e in enumerate(b.edge_ids["L"]):
            cur[e] = float(i_l[pos])
            if self.form == "charge_flux":
                volt[e] = float(ydot[sl["psi"]][pos])
            else:
                volt[e] = float(self._l_diag(i_l)[pos] * ydot[sl["il"]][pos])
        if self.form == "charge_flux":
            u_c_dev = [law.effort(q) for law, q in zip(self.c_laws, y[sl["q"]])]
            i_c = ydot[sl["q"]]
        else:
            u_c = b.a_c.T @ phi
            u_c_dev = list(u_c)
            i_c = self._c_diag(u_c) * (b.a_c.T @ ydot[sl["phi"]])
        for pos, e in enumerate(b.edge_ids["C"]):
            cur[e] = float(i_c[pos])
            volt[e] = float(u_c_dev[pos])
        u_all = b.a_full.T @ phi
        for pos, e in enumerate(b.edge_ids["I"]):
            cur[e] = float(i_i[pos])
            volt[e] = float(u_all[b.cols["I"][pos]])
        for pos, e in enumerate(b.edge_ids["V"]):
            cur[e] = float(i_v[pos])
            volt[e] = float(self._u_wave(t)[pos])
        out = {}
        for e in b.graph.edges:
            out[f"i({e})"] = cur[e]
        for e in b.graph.edges:
            out[f"u({e})"] = volt[e]
        return out

    def audit_terms(self, t: float, y: np.ndarray, ydot: np.ndarray):
        """(stored energy H, supplied source power P_S, dissipation D)."""
        b = self.blocks
        sl = self.slices
        if self.form == "charge_flux":
            q = y[sl["q"]]
            psi = y[sl["psi"]]
        else:
            phi = y[sl["phi"]]
            q = self._q_of_u(b.a_c.T @ phi)
            psi = self._psi_of_i(y[sl["il"]])
        h = sum(law.energy(x) for law, x in zip(self.c_laws, q))
        h += sum(law.energy(x) for law, x in zip(self.l_laws, psi))
        obs = self.observables(t, y, ydot)
        p_s = -sum(obs[f"u({e})"] * obs[f"i({e})"]
                   for e in b.edge_ids["I"] + b.edge_ids["V"])
        diss = sum(obs[f"u({e})"] * obs[f"i({e})"] for e in b.edge_ids["R"])
        return float(h), float(p_s), float(diss)

    def dae_problem(self):
        from .solver import DaeProblem

        jac = None if (self.form == "potential" and not self._linear_storage) \
            else self.jacobian
        return DaeProblem(residual=self.residual, dim=self.dim,
                          diff_mask=self.diff_mask, jacobian=jac,
                          observables=self.observables,
                          observable_names=self.observable_names())


def _resistive_law(comp: ComponentModel) -> ScalarMap:
    if comp.resistive_map is not None:
        return comp.resistive_map
    if comp.kind in ("pn_diode", "ideal_diode"):
        from .components import pn_diode_conductance

        return pn_diode_conductance(comp.params["a"], comp.params["b"])
    raise AssemblyError(f"component {comp.name!r} has no scalar resistive law")


def to_mna_cf(blocks: CircuitBlocks, components=None) -> MnaSystem:
    """Charge/flux-oriented modified nodal analysis residual system."""
    return MnaSystem(blocks, form="charge_flux")


def to_mna(blocks: CircuitBlocks, components=None) -> MnaSystem:
    """Potential-form modified nodal analysis residual system."""
    return MnaSystem(blocks, form="potential")


# ---------------------------------------------------------------------------
# modified loop analysis
# ---------------------------------------------------------------------------

class MlaSystem:
    """Residual form of the modified loop analysis.

    Unknowns (iota, u_C, u_I); residual blocks: loop balance with
    B_L L(B_L^T iota) B_L^T d/dt iota + B_R r(B_R^T iota) + B_C u_C
    + B_I u_I + B_V u_V(t), the capacitor rate rows, and the
    current-source constraint rows.  Resistive devices must be available
    in resistance form; transformers and transistors are not.
    """

    def __init__(self, blocks: CircuitBlocks):
        for grp in blocks.r_groups:
            if grp.kind != "map":
                raise NonInvertibleConstitutive(
                    f"{grp.comp.name}: {grp.kind} relations have no single-edge "
                    "resistance form; loop analysis does not support them"
                )
        self.blocks = blocks
        self.n_loops = blocks.b_full.shape[0]
        self.m_r = len(blocks.cols["R"])
        self.m_c = len(blocks.cols["C"])
        self.m_l = len(blocks.cols["L"])
        self.m_i = len(blocks.cols["I"])
        self.m_v = len(blocks.cols["V"])
        self.c_laws = [_StorageLaw(c.hamiltonian) for c in blocks.class_components("C")]
        self.l_laws = [_StorageLaw(c.hamiltonian) for c in blocks.class_components("L")]
        self.r_laws = [_resistive_law(c) for c in blocks.class_components("R")]
        self.i_sources = blocks.class_components("I")
        self.v_sources = blocks.class_components("V")

        self.slices = {
            "iota": slice(0, self.n_loops),
            "uc": slice(self.n_loops, self.n_loops + self.m_c),
            "ui": slice(self.n_loops + self.m_c, self.n_loops + self.m_c + self.m_i),
        }
        self.dim = self.n_loops + self.m_c + self.m_i
        self.unknown_names = tuple(
            [f"iota({c})" for c in _loop_names(blocks)]
            + [f"uC({e})" for e in blocks.edge_ids["C"]]
            + [f"uI({e})" for e in blocks.edge_ids["I"]]
        )
        mask = np.zeros(self.dim, dtype=bool)
        mask[self.slices["iota"]] = np.any(blocks.b_block("L") != 0, axis=1)
        mask[self.slices["uc"]] = True
        self.diff_mask = mask
        self._linear_storage = all(
            law.ham.hess is not None and law.ham.grad_inverse is not None
            for law in self.c_laws + self.l_laws
        )

    def _r_voltages(self, i_r: np.ndarray) -> np.ndarray:
        out = np.zeros(self.m_r)
        for pos, law in enumerate(self.r_laws):
            r_val, _ = law.as_form("resistance")
            out[pos] = float(r_val(i_r[pos]))
        return out

    def _u_wave(self, t: float) -> np.ndarray:
        return np.array([c.waveform(t) for c in self.v_sources])

    def _i_wave(self, t: float) -> np.ndarray:
        return np.array([c.waveform(t) if c.waveform is not None else 0.0
                         for c in self.i_sources])

    def residual(self, t: float, y: np.ndarray, ydot: np.ndarray) -> np.ndarray:
        b = self.blocks
        sl = self.slices
        iota = y[sl["iota"]]
        u_c = y[sl["uc"]]
        u_i = y[sl["ui"]]
        b_r, b_l, b_c = b.b_block("R"), b.b_block("L"), b.b_block("C")
        b_i, b_v = b.b_block("I"), b.b_block("V")
        i_l = b_l.T @ iota
        l_diag = np.array([law.jac_of_inverse(i) for law, i in zip(self.l_laws, i_l)])
        loop = (b_l @ (l_diag * (b_l.T @ ydot[sl["iota"]]))
                + b_r @ self._r_voltages(b_r.T @ iota)
                + b_c @ u_c + b_i @ u_i + b_v @ self._u_wave(t))
        c_diag = np.array([law.jac_of_inverse(u) for law, u in zip(self.c_laws, u_c)])
        cap = -b_c.T @ iota + c_diag * ydot[sl["uc"]]
        isrc = -b_i.T @ iota + self._i_wave(t)
        return np.concatenate([loop, cap, isrc])

    def jacobian(self, t, y, ydot, alpha):
        if not self._linear_storage:
            raise NotImplementedError
        b = self.blocks
        sl = self.slices
        iota = y[sl["iota"]]
        b_r, b_l, b_c = b.b_block("R"), b.b_block("L"), b.b_block("C")
        b_i, b_v = b.b_block("I"), b.b_block("V")
        i_r = b_r.T @ iota
        r_diag = np.zeros(self.m_r)
        for pos, law in enumerate(self.r_laws):
            _, r_der = law.as_form("resistance")
            r_diag[pos] = float(r_der(i_r[pos]))
        i_l = b_l.T @ iota
        l_diag = np.array([law.jac_of_inverse(i) for law, i in zip(self.l_laws, i_l)])
        u_c = y[sl["uc"]]
        c_diag = np.array([law.jac_of_inverse(u) for law, u in zip(self.c_laws, u_c)])

        jac = np.zeros((self.dim, self.dim))
        loop = sl["iota"]
        jac[loop, sl["iota"]] += b_r @ (r_diag[:, None] * b_r.T) \
            + alpha * (b_l @ (l_diag[:, None] * b_l.T))
        jac[loop, sl["uc"]] += b_c
        jac[loop, sl["ui"]] += b_i
        cap = slice(self.n_loops, self.n_loops + self.m_c)
        jac[cap, sl["iota"]] += -b_c.T
        jac[cap.start + np.arange(self.m_c),
            sl["uc"].start + np.arange(self.m_c)] += alpha * c_diag
        isrc = slice(cap.stop, cap.stop + self.m_i)
        jac[isrc, sl["iota"]] += -b_i.T
        return jac

    def observable_names(self) -> tuple[str, ...]:
        edges = self.blocks.graph.edges
        return tuple([f"i({e})" for e in edges] + [f"u({e})" for e in edges])

    def observables(self, t, y, ydot) -> dict:
        b = self.blocks
        sl = self.slices
        iota = y[sl["iota"]]
        i_all = b.b_full.T @ iota
        cur = {e: float(i_all[j]) for j, e in enumerate(b.graph.edges)}
        volt: dict[str, float] = {}
        for pos, e in enumerate(b.edge_ids["R"]):
            volt[e] = float(self._r_voltages(b.b_block("R").T @ iota)[pos])
        i_l = b.b_block("L").T @ iota
        l_diag = np.array([law.jac_of_inverse(i) for law, i in zip(self.l_laws, i_l)])
        u_l = l_diag * (b.b_block("L").T @ ydot[sl["iota"]])
        for pos, e in enumerate(b.edge_ids["L"]):
            volt[e] = float(u_l[pos])
        for pos, e in enumerate(b.edge_ids["C"]):
            volt[e] = float(y[sl["uc"]][pos])
        for pos, e in enumerate(b.edge_ids["I"]):
            volt[e] = float(y[sl["ui"]][pos])
        for pos, e in enumerate(b.edge_ids["V"]):
            volt[e] = float(self._u_wave(t)[pos])
        out = {}
        for e in b.graph.edges:
            out[f"i({e})"] = cur[e]
        for e in b.graph.edges:
            out[f"u({e})"] = volt[e]
        return out

    def audit_terms(self, t, y, ydot):
        sl = self.slices
        i_l = self.blocks.b_block("L").T @ y[sl["iota"]]
        psi = [law.state_of_effort(i) for law, i in zip(self.l_laws, i_l)]
        q = [law.state_of_effort(u) for law, u in zip(self.c_laws, y[sl["uc"]])]
        h = sum(law.energy(x) for law, x in zip(self.c_laws, q))
        h += sum(law.energy(x) for law, x in zip(self.l_laws, psi))
        obs = self.observables(t, y, ydot)
        b = self.blocks
        p_s = -sum(obs[f"u({e})"] * obs[f"i({e})"]
                   for e in b.edge_ids["I"] + b.edge_ids["V"])
        diss = sum(obs[f"u({e})"] * obs[f"i({e})"] for e in b.edge_ids["R"])
        return float(h), float(p_s), float(diss)

    def dae_problem(self):
        from .solver import DaeProblem

        jac = self.jacobian if self._linear_storage else None
        return DaeProblem(residual=self.residual, dim=self.dim,
                          diff_mask=self.diff_mask, jacobian=jac,
                          observables=self.observables,
                          observable_names=self.observable_names())


def _loop_names(blocks: CircuitBlocks) -> list[str]:
    forest = set(spanning_forest(blocks.graph))
    return [e for e in blocks.graph.edges if e not in forest]


def to_mla(blocks: CircuitBlocks, components=None) -> MlaSystem:
    """Modified loop analysis residual system."""
    return MlaSystem(blocks)


# ---------------------------------------------------------------------------
# pH <-> MNA equivalence
# ---------------------------------------------------------------------------

def _mna_point_to_ph(assembled: AssembledCircuit, mna: MnaSystem, t, y, ydot):
    """Map an MNA charge/flux point to assembled-system variables (x, xdot, z)."""
    sys = assembled.system
    layout = sys.layout
    b = assembled.blocks
    sl = mna.slices
    phi = y[sl["phi"]]
    n_l, n_r, n_p, _ = sys.dims

    st = {blk.name: s for blk, s in layout.local_block_slices("storage")}
    rs = {blk.name: s for blk, s in layout.local_block_slices("resistive")}
    ex = {blk.name: s for blk, s in layout.local_block_slices("external")}

    x = np.zeros(n_l)
    xdot = np.zeros(n_l)
    e_l = np.zeros(n_l)
    e_l[st["nodes"]] = phi
    c_pos = {e: j for j, e in enumerate(b.edge_ids["C"])}
    l_pos = {e: j for j, e in enumerate(b.edge_ids["L"])}
    for comp in b.components:
        if comp.kind == "capacitor":
            j = c_pos[comp.edge_ids()[0]]
            s = st[comp.name]
            x[s] = y[sl["q"]][j]
            xdot[s] = ydot[sl["q"]][j]
            e_l[s] = mna.c_laws[j].effort(y[sl["q"]][j])
        elif comp.kind == "inductor":
            j = l_pos[comp.edge_ids()[0]]
            s = st[comp.name]
            x[s] = y[sl["psi"]][j]
            xdot[s] = ydot[sl["psi"]][j]
            e_l[s] = y[sl["il"]][j]

    f_r = np.zeros(n_r)
    e_r = np.zeros(n_r)
    u_r = b.a_r.T @ phi
    i_r = mna._r_currents(u_r, y[sl["it"]])
    r_pos = {e: j for j, e in enumerate(b.edge_ids["R"])}
    for comp in b.components:
        if _CLASS_OF_KIND[comp.kind] != "R":
            continue
        s = rs[comp.name]
        cols = [r_pos[e] for e in comp.edge_ids()]
        f_r[s] = -i_r[cols]
        e_r[s] = u_r[cols]

    f_p = np.zeros(n_p)
    e_p = np.zeros(n_p)
    u_all = b.a_full.T @ phi
    eindex = {e: j for j, e in enumerate(b.graph.edges)}
    v_pos = {e: j for j, e in enumerate(b.edge_ids["V"])}
    i_pos = {e: j for j, e in enumerate(b.edge_ids["I"])}
    for comp in b.components:
        if _CLASS_OF_KIND[comp.kind] == "V":
            s = ex[comp.name]
            j = v_pos[comp.edge_ids()[0]]
            f_p[s] = -y[sl["iv"]][j]
            e_p[s] = comp.waveform(t)
        elif _CLASS_OF_KIND[comp.kind] == "I":
            s = ex[comp.name]
            wave = comp.waveform(t) if comp.waveform is not None else 0.0
            f_p[s] = -wave
            e_p[s] = u_all[eindex[comp.edge_ids()[0]]]
    z = np.concatenate([e_l, f_r, e_r, f_p, e_p])
    return x, xdot, z


def _ph_point_to_mna(assembled: AssembledCircuit, mna: MnaSystem, t, x, xdot, z):
    """Map assembled-system variables back to MNA unknowns (y, ydot)."""
    sys = assembled.system
    layout = sys.layout
    b = assembled.blocks
    n_l, n_r, n_p, _ = sys.dims
    e_l = z[:n_l]
    f_r = z[n_l:n_l + n_r]
    f_p = z[n_l + 2 * n_r:n_l + 2 * n_r + n_p]

    st = {blk.name: s for blk, s in layout.local_block_slices("storage")}
    rs = {blk.name: s for blk, s in layout.local_block_slices("resistive")}
    ex = {blk.name: s for blk, s in layout.local_block_slices("external")}
    sl = mna.slices
    y = np.zeros(mna.dim)
    ydot = np.zeros(mna.dim)
    y[sl["phi"]] = e_l[st["nodes"]]
    c_pos = {e: j for j, e in enumerate(b.edge_ids["C"])}
    l_pos = {e: j for j, e in enumerate(b.edge_ids["L"])}
    v_pos = {e: j for j, e in enumerate(b.edge_ids["V"])}
    for comp in b.components:
        if comp.kind == "capacitor":
            j = c_pos[comp.edge_ids()[0]]
            s = st[comp.name]
            y[sl["q"].start + j] = x[s][0]
            ydot[sl["q"].start + j] = xdot[s][0]
        elif comp.kind == "inductor":
            j = l_pos[comp.edge_ids()[0]]
            s = st[comp.name]
            y[sl["psi"].start + j] = x[s][0]
            ydot[sl["psi"].start + j] = xdot[s][0]
            y[sl["il"].start + j] = e_l[s][0]
        elif _CLASS_OF_KIND[comp.kind] == "V":
            j = v_pos[comp.edge_ids()[0]]
            y[sl["iv"].start + j] = -f_p[ex[comp.name]][0]
    for idx, grp in enumerate(mna.xforms):
        s = rs[grp.comp.name]
        y[sl["it"].start + 2 * idx] = -f_r[s][0]
        y[sl["it"].start + 2 * idx + 1] = -f_r[s][1]
    return y, ydot


def _ph_constraint_residual(assembled: AssembledCircuit, t, w):
    """Stacked pH-point constraints: dynamics, source pins, zero vertex rates."""
    sys = assembled.system
    n_l, n_r, n_p, _ = sys.dims
    x = w[:n_l]
    xdot = w[n_l:2 * n_l]
    z = w[2 * n_l:]
    res = [ph_residual(sys, t, x, xdot, z)]
    layout = sys.layout
    ex = {blk.name: s for blk, s in layout.local_block_slices("external")}
    f_p = z[n_l + 2 * n_r:n_l + 2 * n_r + n_p]
    e_p = z[n_l + 2 * n_r + n_p:n_l + 2 * n_r + 2 * n_p]
    pins = []
    for comp in assembled.blocks.components:
        cls = _CLASS_OF_KIND[comp.kind]
        if cls == "V":
            s = ex[comp.name]
            pins.append(e_p[s] - comp.waveform(t))
        elif cls == "I":
            s = ex[comp.name]
            wave = comp.waveform(t) if comp.waveform is not None else 0.0
            pins.append(f_p[s] + wave)
    if pins:
        res.append(np.concatenate(pins))
    st = {blk.name: s for blk, s in layout.local_block_slices("storage")}
    res.append(xdot[st["nodes"]])  # differentiated zero-charge constraint
    return np.concatenate(res)


def _gauss_newton_project(fun, w0, tol=1e-12, max_iter=100, jac_fun=None):
    """Damped least-norm Newton onto {fun(w) = 0} from w0 (underdetermined)."""
    w = np.asarray(w0, dtype=float).copy()
    f = fun(w)
    norm = float(np.max(np.abs(f)))
    for _ in range(max_iter):
        scale = 1.0 + float(np.max(np.abs(w)))
        if norm <= tol * scale:
            return w, norm
        jac = jac_fun(w) if jac_fun is not None else _fd_jacobian(fun, w, f)
        direction, *_ = np.linalg.lstsq(jac, -f, rcond=None)
        lam = 1.0
        while lam >= 2.0 ** -30:
            w_new = w + lam * direction
            f_new = fun(w_new)
            norm_new = float(np.max(np.abs(f_new)))
            if np.isfinite(norm_new) and norm_new < (1.0 - 1e-4 * lam) * norm:
                break
            lam *= 0.5
        else:
            return w, norm
        w, f, norm = w_new, f_new, norm_new
    return w, norm


def _fd_jacobian(fun, w, f0):
    jac = np.empty((f0.shape[0], w.shape[0]))
    for j in range(w.shape[0]):
        h = 1e-7 * max(1.0, abs(w[j]))
        wp = w.copy()
        wp[j] += h
        jac[:, j] = (fun(wp) - f0) / h
    return jac


def ph_mna_equivalence(assembled: AssembledCircuit, mna: MnaSystem, points,
                       rng: np.random.Generator | None = None,
                       perturb: float = 0.1, tol: float = 1e-9) -> dict:
    """Check that the assembled pH model and the MNA describe the same set.

    ``points`` are approximate solution points (t, y, ydot) of the MNA
    (trajectory states are natural).  Each is randomly perturbed and
    projected back onto one system's solution set, then the other
    system's residual is evaluated there; the largest such witness is
    reported for both directions.
    """
    if mna.form != "charge_flux":
        raise ValueError("equivalence check expects the charge/flux MNA")
    points = list(points)
    rng = rng or np.random.default_rng(0)
    sys = assembled.system
    n_l = sys.dims[0]
    witness_ph = 0.0   # pH residual on MNA solutions
    witness_mna = 0.0  # MNA residual on pH solutions
    used_mna = used_ph = 0
    diff = np.flatnonzero(mna.diff_mask)

    for (t, y0, ydot0) in points:
        # --- direction 1: project onto {F_mna = 0}, evaluate pH residual
        w0 = np.concatenate([y0, ydot0[diff]])
        w0 = w0 + perturb * rng.standard_normal(w0.shape) * (1.0 + np.abs(w0))

        def mna_fun(w):
            y = w[:mna.dim]
            yd = np.zeros(mna.dim)
            yd[diff] = w[mna.dim:]
            return mna.residual(t, y, yd)

        def mna_jac(w):
            y = w[:mna.dim]
            yd = np.zeros(mna.dim)
            yd[diff] = w[mna.dim:]
            j_y = mna.jacobian(t, y, yd, 0.0)
            j_yd = mna.jacobian(t, y, yd, 1.0) - j_y
            return np.hstack([j_y, j_yd[:, diff]])

        w, res = _gauss_newton_project(mna_fun, w0, jac_fun=mna_jac)
        y = w[:mna.dim]
        ydot = np.zeros(mna.dim)
        ydot[diff] = w[mna.dim:]
        if res >= 1e-10 * (1.0 + float(np.max(np.abs(w)))):
            continue
        used_mna += 1
        x, xdot, z = _mna_point_to_ph(assembled, mna, t, y, ydot)
        r = ph_residual(sys, t, x, xdot, z)
        scale = 1.0 + float(np.max(np.abs(z))) + float(np.max(np.abs(xdot), initial=0.0))
        witness_ph = max(witness_ph, float(np.max(np.abs(r))) / scale)

        # --- direction 2: perturb, project onto the pH solution set,
        # evaluate the MNA residual there
        wp0 = np.concatenate([x, xdot, z])
        wp0 = wp0 + perturb * rng.standard_normal(wp0.shape) * (1.0 + np.abs(wp0))
        wp, res2 = _gauss_newton_project(
            lambda w_: _ph_constraint_residual(assembled, t, w_), wp0)
        if res2 < 1e-10 * (1.0 + float(np.max(np.abs(wp)))):
            used_ph += 1
            x2 = wp[:n_l]
            xd2 = wp[n_l:2 * n_l]
            z2 = wp[2 * n_l:]
            y2, yd2 = _ph_point_to_mna(assembled, mna, t, x2, xd2, z2)
            r2 = mna.residual(t, y2, yd2)
            scale2 = 1.0 + float(np.max(np.abs(y2)))
            witness_mna = max(witness_mna, float(np.max(np.abs(r2))) / scale2)

    return {
        "witness_ph_on_mna": witness_ph,
        "witness_mna_on_ph": witness_mna,
        "max_witness": max(witness_ph, witness_mna),
        "samples": len(points),
        "samples_mna": used_mna,
        "samples_ph": used_ph,
        "passed": max(witness_ph, witness_mna) <= tol and used_mna > 0 and used_ph > 0,
        "tol": tol,
    }


# ---------------------------------------------------------------------------
# trajectory checks and JSON export
# ---------------------------------------------------------------------------

def trajectory_checks(traj, mna: MnaSystem) -> dict:
    """Kirchhoff current/voltage law and Tellegen identity along a run.

    Relative residuals, maximized over accepted steps:
    ||A i||_inf / ||i||_inf, ||u_dev - A^T phi||_inf / ||u||_inf and
    |sum_e u_e i_e| / sum_e |u_e i_e|.
    """
    b = mna.blocks
    a = b.a_full.astype(float)
    kcl = kvl = tell = 0.0
    for idx in range(len(traj.times)):
        t = traj.times[idx]
        y = traj.states[idx]
        ydot = traj.rates[idx]
        obs = traj.observables
        i_vec = np.array([obs[f"i({e})"][idx] for e in b.graph.edges])
        u_vec = np.array([obs[f"u({e})"][idx] for e in b.graph.edges])
        phi = y[mna.slices["phi"]]
        i_scale = float(np.max(np.abs(i_vec), initial=0.0))
        u_scale = float(np.max(np.abs(u_vec), initial=0.0))
        if i_scale > 0:
            kcl = max(kcl, float(np.max(np.abs(a @ i_vec))) / i_scale)
        if u_scale > 0:
            kvl = max(kvl, float(np.max(np.abs(u_vec - a.T @ phi))) / u_scale)
        p_abs = float(np.sum(np.abs(u_vec * i_vec)))
        if p_abs > 0:
            tell = max(tell, abs(float(u_vec @ i_vec)) / p_abs)
    return {"kcl": kcl, "kvl": kvl, "tellegen": tell}


def emit_json(assembled: AssembledCircuit) -> str:
    """{K, L, layout, blocks:{A_R,...,B_V}} for `assemble --emit json`."""
    d = assembled.system.dirac
    b = assembled.blocks
    doc = {
        "n": d.dim,
        "K": d.k_mat.tolist(),
        "L": d.l_mat.tolist(),
        "layout": [{"role": blk.role, "name": blk.name, "size": blk.size}
                   for blk in d.layout.blocks],
        "blocks": {
            "A_R": b.a_r.tolist(), "A_L": b.a_l.tolist(), "A_C": b.a_c.tolist(),
            "A_I": b.a_i.tolist(), "A_V": b.a_v.tolist(),
            "B_R": b.b_block("R").tolist(), "B_L": b.b_block("L").tolist(),
            "B_C": b.b_block("C").tolist(), "B_I": b.b_block("I").tolist(),
            "B_V": b.b_block("V").tolist(),
        },
    }
    return json.dumps(doc)
