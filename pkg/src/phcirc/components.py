"""Constitutive port-Hamiltonian models of the circuit component library.

Every device is exposed two ways: as evaluable constitutive maps
(currents, gradients, their derivatives and inverses) and as a
:class:`~phcirc.ph_core.PHSystem` whose link ports carry the device's
edge currents and voltages for circuit interconnection.

Storage devices (capacitances, inductances) carry a Hamiltonian whose
gradient must pass the gradient-field test.  Static devices live in the
resistive slot: conductances/resistances via accretive maps, PN and
ideal diodes, the transformer's exact linear relation, and the NPN
transistor's Ebers-Moll characteristic, which is resistive only on a
neighborhood of the origin whose size is computed explicitly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    BadParams,
    NonInvertibleConstitutive,
    NotAccretive,
    NotAGradient,
    NotLocallyPassive,
)
from .ph_core import (
    DiracKernel,
    GradientLagrange,
    PHSystem,
    PortLayout,
    ResistiveRelation,
    gradient_field_check,
    swap_link_roles,
)

__all__ = [
    "Hamiltonian",
    "Waveform",
    "ScalarMap",
    "TransistorParams",
    "PassivitySearch",
    "ComponentModel",
    "standard_dirac",
    "capacitor_ph",
    "inductor_ph",
    "conductance_ph",
    "resistance_ph",
    "ideal_diode_relation",
    "pn_diode_current",
    "pn_diode_conductance",
    "transformer_ph",
    "ebers_moll",
    "ebers_moll_jacobian",
    "transistor_ph",
    "transistor_passivity_radius",
    "source_ph",
    "to_ph",
    "guarded_exp",
    "guarded_exp_deriv",
    "invert_increasing",
]

# Exponential overflow guard: arguments above this evaluate via a linearized
# continuation exp(700)*(1 + (x - 700)) so Newton iterates stay finite far
# from the solution.  Deterministic; the derivative is constant past the cap,
# and the excess is saturated so the continuation itself cannot overflow.
EXP_ARG_MAX = 700.0
_EXP_CAP = math.exp(EXP_ARG_MAX)
_EXCESS_MAX = 9e3

# Minimum shunt conductance across exponential junctions (diode, transistor).
# Reverse-biased junctions otherwise have conductance ~exp(-u/b), which makes
# the off-state node potentials numerically indeterminate.
GMIN = 1e-12


def guarded_exp(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(np.minimum(x, EXP_ARG_MAX))
    excess = np.minimum(x - EXP_ARG_MAX, _EXCESS_MAX)
    out = np.where(excess > 0, _EXP_CAP * (1.0 + excess), out)
    return float(out) if out.ndim == 0 else out


def guarded_exp_deriv(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(np.minimum(x, EXP_ARG_MAX))
    out = np.where(x > EXP_ARG_MAX, np.where(x - EXP_ARG_MAX > _EXCESS_MAX, 0.0, _EXP_CAP),
                   out)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hamiltonian:
    """Energy storage function with its gradient and optional extras.

    ``value``: R^dim -> R (joules); ``grad``: R^dim -> R^dim.  For the
    one-port library devices all callables are elementwise-vectorized
    scalar maps; ``hess`` and ``grad_inverse`` are scalar and feed the
    nodal/loop analyses (Hessian and inverse of the gradient).
    """

    dim: int
    value: Callable
    grad: Callable
    hess: Callable | None = None
    grad_inverse: Callable | None = None
    label: str = ""

    @classmethod
    def quadratic(cls, coeff: float, label: str = "") -> "Hamiltonian":
        """H(x) = x^2 / (2 coeff): linear capacitance/inductance."""
        if coeff <= 0:
            raise BadParams(f"storage coefficient must be positive, got {coeff}")
        return cls(
            dim=1,
            value=lambda x: float(np.sum(np.square(x))) / (2.0 * coeff),
            grad=lambda x: np.asarray(x, dtype=float) / coeff,
            hess=lambda x: 1.0 / coeff,
            grad_inverse=lambda u: coeff * np.asarray(u, dtype=float),
            label=label or f"quadratic({coeff!r})",
        )

    @classmethod
    def from_poly(cls, coeffs: Sequence[float], label: str = "") -> "Hamiltonian":
        """H(x) = sum_k c_k x^k for scalar x."""
        c = [float(v) for v in coeffs]
        grad_c = [k * c[k] for k in range(1, len(c))]
        hess_c = [k * grad_c[k] for k in range(1, len(grad_c))]
        value = lambda x: float(np.sum(_polyval(c, np.asarray(x, dtype=float))))
        grad = lambda x: _polyval(grad_c, np.asarray(x, dtype=float))
        hess = lambda x: _polyval(hess_c, x)
        inv = _poly_gradient_inverse(grad_c, grad, hess)
        return cls(1, value, grad, hess, inv, label or f"poly({','.join(map(repr, c))})")

    @classmethod
    def from_tanh(cls, a: float, b: float, label: str = "") -> "Hamiltonian":
        """H(x) = (a/b) log cosh(b x), so grad H(x) = a tanh(b x)."""
        if a <= 0 or b <= 0:
            raise BadParams("tanh storage law needs positive a, b")

        def value(x):
            bx = np.abs(b * np.asarray(x, dtype=float))
            # stable log cosh
            return float(np.sum((bx + np.log1p(np.exp(-2.0 * bx)) - math.log(2.0)) * a / b))

        def grad_inverse(u):
            u = np.asarray(u, dtype=float)
            if np.any(np.abs(u) >= a):
                raise NonInvertibleConstitutive(
                    f"effort {u} outside the range (-{a}, {a}) of a tanh law"
                )
            return np.arctanh(u / a) / b

        return cls(
            dim=1,
            value=value,
            grad=lambda x: a * np.tanh(b * np.asarray(x, dtype=float)),
            hess=lambda x: a * b / np.cosh(b * x) ** 2,
            grad_inverse=grad_inverse,
            label=label or f"tanh({a!r},{b!r})",
        )


def _polyval(coeffs: Sequence[float], x):
    out = np.zeros_like(np.asarray(x, dtype=float))
    for c in reversed(coeffs):
        out = out * x + c
    return out


def _poly_gradient_inverse(grad_c, grad, hess):
    """Inverse of a polynomial gradient: analytic where possible, else Newton."""
    nonzero = [(k, c) for k, c in enumerate(grad_c) if c != 0.0]
    if not nonzero:
        return None
    if len(nonzero) == 1:
        p, c = nonzero[0]
        if p == 0:
            return None  # constant gradient is not invertible
        if p == 1:
            return lambda u: np.asarray(u, dtype=float) / c
        if p % 2 == 1 and c > 0:
            return lambda u: np.sign(u) * np.abs(np.asarray(u, dtype=float) / c) ** (1.0 / p)
        return None  # even power: not a homeomorphism
    if len(nonzero) == 2 and nonzero[0][0] == 0 and nonzero[1][0] == 1:
        c0, c1 = nonzero[0][1], nonzero[1][1]
        return lambda u: (np.asarray(u, dtype=float) - c0) / c1
    return lambda u: invert_increasing(grad, hess, u)


def invert_increasing(fn: Callable, dfn: Callable | None, y, tol: float = 1e-12,
                      max_iter: int = 200):
    """Solve fn(x) = y for a strictly increasing scalar fn.

    Safeguarded Newton inside a bracket grown geometrically from 0, with
    bisection fallback.  Raises NonInvertibleConstitutive when no bracket
    can be established (fn not increasing onto y's side).
    """
    y_arr = np.asarray(y, dtype=float)
    if y_arr.ndim > 0:
        return np.array([invert_increasing(fn, dfn, float(v), tol, max_iter)
                         for v in y_arr.ravel()]).reshape(y_arr.shape)
    y = float(y_arr)
    f0 = float(fn(0.0))
    if f0 == y:
        return 0.0
    direction = 1.0 if y > f0 else -1.0
    step = 1e-6
    lo, hi = 0.0, direction * step
    f_hi = float(fn(hi))
    grow = 0
    while (f_hi - y) * direction < 0:
        lo, hi = hi, hi * 2.0
        f_hi = float(fn(hi))
        grow += 1
        if grow > 200 or not math.isfinite(f_hi):
            raise NonInvertibleConstitutive(
                f"could not bracket fn(x) = {y}; map may not be surjective"
            )
    a, b = (lo, hi) if lo < hi else (hi, lo)
    x = 0.5 * (a + b)
    for _ in range(max_iter):
        fx = float(fn(x))
        if abs(fx - y) <= tol * (1.0 + abs(y)):
            return x
        if fx > y:
            b = x
        else:
            a = x
        d = float(dfn(x)) if dfn is not None else 0.0
        if d > 0:
            x_new = x - (fx - y) / d
            x = x_new if a < x_new < b else 0.5 * (a + b)
        else:
            x = 0.5 * (a + b)
        if b - a < 1e-16 * (1.0 + abs(x)):
            return x
    raise NonInvertibleConstitutive(f"inversion of constitutive law stalled at x={x}")


# ---------------------------------------------------------------------------
# waveforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Waveform:
    """Source excitation: DC(v) or SIN(offset, amplitude, freq_hz[, phase_rad])."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("dc", "sin"):
            raise BadParams(f"unsupported waveform {self.kind!r}")
        if self.kind == "dc" and len(self.params) != 1:
            raise BadParams("DC waveform takes one value")
        if self.kind == "sin" and len(self.params) not in (3, 4):
            raise BadParams("SIN waveform takes (offset, amplitude, freq[, phase])")

    @classmethod
    def dc(cls, value: float) -> "Waveform":
        return cls("dc", (float(value),))

    @classmethod
    def sin(cls, offset: float, amplitude: float, freq_hz: float,
            phase_rad: float = 0.0) -> "Waveform":
        return cls("sin", (float(offset), float(amplitude), float(freq_hz),
                           float(phase_rad)))

    def __call__(self, t: float) -> float:
        if self.kind == "dc":
            return self.params[0]
        o, a, f = self.params[0], self.params[1], self.params[2]
        ph = self.params[3] if len(self.params) == 4 else 0.0
        return o + a * math.sin(2.0 * math.pi * f * t + ph)


# ---------------------------------------------------------------------------
# scalar resistive maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarMap:
    """One-port static law with derivative and optional analytic inverse.

    ``form`` states what the primary map computes: "conductance" maps
    voltage to current (i = g(u)); "resistance" maps current to voltage
    (u = r(i)).  ``inverse_value``/``inverse_deriv`` give the opposite
    form when it exists in closed form; otherwise the nodal/loop
    assemblers fall back to safeguarded Newton inversion.
    """

    form: str
    value: Callable
    deriv: Callable
    inverse_value: Callable | None = None
    inverse_deriv: Callable | None = None
    spec: str = ""

    def as_form(self, form: str) -> tuple[Callable, Callable]:
        """(value, deriv) pair of the requested form."""
        if form == self.form:
            return self.value, self.deriv
        if self.inverse_value is not None:
            return self.inverse_value, self.inverse_deriv
        inv = lambda y: invert_increasing(self.value, self.deriv, y)

        def inv_deriv(y):
            x = inv(y)
            d = self.deriv(x)
            if d == 0:
                raise NonInvertibleConstitutive(f"{self.spec}: zero slope at {x}")
            return 1.0 / d

        return inv, inv_deriv

    @classmethod
    def linear_resistance(cls, r: float) -> "ScalarMap":
        if r == 0:
            raise BadParams("zero resistance; use a voltage source instead")
        return cls("conductance", lambda u: np.asarray(u, float) / r,
                   lambda u: 1.0 / r,
                   inverse_value=lambda i: r * np.asarray(i, float),
                   inverse_deriv=lambda i: r, spec=f"R={r!r}")

    @classmethod
    def linear_conductance(cls, g: float) -> "ScalarMap":
        if g == 0:
            raise BadParams("zero conductance; use a current source instead")
        return cls("conductance", lambda u: g * np.asarray(u, float),
                   lambda u: g,
                   inverse_value=lambda i: np.asarray(i, float) / g,
                   inverse_deriv=lambda i: 1.0 / g, spec=f"G={g!r}")


# ---------------------------------------------------------------------------
# component records
# ---------------------------------------------------------------------------

KINDS = (
    "capacitor", "inductor", "conductance", "resistance", "ideal_diode",
    "pn_diode", "transformer", "npn_transistor", "source_current",
    "source_voltage", "sink",
)

_TWO_TERMINAL = {
    "capacitor", "inductor", "conductance", "resistance", "ideal_diode",
    "pn_diode", "source_current", "source_voltage", "sink",
}


@dataclass(frozen=True)
class TransistorParams:
    """Ebers-Moll constants.  Defaults sit inside the documented ranges."""

    alpha_f: float = 0.99
    alpha_r: float = 0.5
    i_s: float = 1e-14
    v_t: float = 0.025

    RANGES = {
        "alpha_f": (50.0 / 51.0, 1000.0 / 1001.0),
        "alpha_r": (1.0 / 100.0, 1.0 / 2.0),
        "i_s": (1e-15, 1e-12),
        "v_t": (0.02, 0.03),
    }

    def __post_init__(self):
        for nm in ("alpha_f", "alpha_r", "i_s", "v_t"):
            v = getattr(self, nm)
            if not (v > 0):
                raise BadParams(f"transistor parameter {nm} must be positive, got {v}")
            lo, hi = self.RANGES[nm]
            if not (lo <= v <= hi):
                warnings.warn(
                    f"transistor parameter {nm}={v} outside the usual range "
                    f"[{lo:.4g}, {hi:.4g}]",
                    stacklevel=2,
                )


@dataclass(frozen=True)
class ComponentModel:
    """Tagged constitutive description of one circuit device.

    ``params`` holds the raw numeric record (JSON-serializable);
    evaluable laws live in ``hamiltonian`` / ``resistive_map`` /
    ``waveform`` / ``transistor``.  ``nodes`` are the terminal node names
    when the component comes from a netlist.
    """

    kind: str
    name: str
    params: Mapping
    nodes: tuple[str, ...] = ()
    hamiltonian: Hamiltonian | None = None
    resistive_map: ScalarMap | None = None
    waveform: Waveform | None = None
    transistor: TransistorParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadParams(f"unknown component kind {self.kind!r}")
        if self.kind == "pn_diode":
            a, b = self.params.get("a", 0), self.params.get("b", 0)
            if not (a > 0 and b > 0):
                raise BadParams(f"{self.name}: PN diode needs a > 0 and b > 0")

    @property
    def ports(self) -> int:
        if self.kind in ("transformer", "npn_transistor"):
            return 2
        if self.kind in ("capacitor", "inductor") and self.hamiltonian is not None:
            return self.hamiltonian.dim
        return 1

    @property
    def terminals(self) -> int:
        if self.kind == "transformer":
            return 4
        if self.kind == "npn_transistor":
            return 3
        return 2

    def edge_pairs(self) -> tuple[tuple[str, str], ...]:
        """(init, ter) node pair per edge, in the component's port order."""
        if self.kind in _TWO_TERMINAL:
            return ((self.nodes[0], self.nodes[1]),)
        if self.kind == "transformer":
            n1, n2, n3, n4 = self.nodes
            return ((n1, n2), (n4, n3))
        # transistor nodes are (collector, basis, emitter); edges run
        # basis -> collector and basis -> emitter
        nc, nb, ne = self.nodes
        return ((nb, nc), (nb, ne))

    def edge_ids(self) -> tuple[str, ...]:
        if self.kind == "transformer":
            return (f"{self.name}.1", f"{self.name}.2")
        if self.kind == "npn_transistor":
            return (f"{self.name}.bc", f"{self.name}.be")
        return (self.name,)

    def params_json(self) -> dict:
        return {"kind": self.kind, "name": self.name, "nodes": list(self.nodes),
                "params": dict(self.params)}


# ---------------------------------------------------------------------------
# Dirac structures of the devices
# ---------------------------------------------------------------------------

def standard_dirac(l_p: int, first_role: str = "resistive", name: str = "") -> DiracKernel:
    """The 4*l_p-dimensional structure {(-i, i, u, u) : i, u in R^{l_p}}.

    First flow/effort block plays the given role, the copy is the link
    port consumed by circuit interconnection.
    """
    if l_p < 1:
        raise BadParams("a component has at least one port")
    ident = np.eye(l_p)
    zero = np.zeros((l_p, l_p))
    k = np.block([[ident, ident], [zero, zero]])
    l = np.block([[zero, zero], [ident, -ident]])
    layout = PortLayout.build(
        **{first_role: [(name, l_p)]}, link=[(name, l_p)]
    )
    return DiracKernel(k, l, layout)


def _inductor_dirac(l_p: int, name: str) -> DiracKernel:
    """{(-u, i, i, u)}: storage flow is the flux rate, storage effort the current."""
    ident = np.eye(l_p)
    zero = np.zeros((l_p, l_p))
    k = np.block([[zero, ident], [ident, zero]])
    l = np.block([[-ident, zero], [zero, ident]])
    layout = PortLayout.build(storage=[(name, l_p)], link=[(name, l_p)])
    return DiracKernel(k, l, layout)


def _default_samples(dim: int) -> list[np.ndarray]:
    pts = [np.zeros(dim)]
    for j in range(dim):
        for s in (0.5, -0.5, 1.0):
            v = np.zeros(dim)
            v[j] = s
            pts.append(v)
    if dim > 1:
        pts.append(np.full(dim, 0.3))
    return pts


def capacitor_ph(h: Hamiltonian, l_p: int | None = None, name: str = "C",
                 samples=None) -> PHSystem:
    """Capacitance: state is the charge, effort the voltage grad H_C(q_C).

    The derived behavior is i_C = d/dt q_C and u_C = grad H_C(q_C); an
    open port (i = 0) keeps the charge constant.
    """
    l_p = h.dim if l_p is None else l_p
    if l_p != h.dim:
        raise BadParams(f"Hamiltonian dimension {h.dim} != ports {l_p}")
    grad = _vectorized_grad(h)
    if not gradient_field_check(grad, samples or _default_samples(l_p)):
        raise NotAGradient(f"{name}: supplied map is not a gradient field")
    d = standard_dirac(l_p, first_role="storage", name=name)
    lag = GradientLagrange(h.value, grad, l_p)
    return PHSystem(d, (lag,), ())


def inductor_ph(h: Hamiltonian, l_p: int | None = None, name: str = "L",
                samples=None) -> PHSystem:
    """Inductance: state is the magnetic flux, effort the current grad H_L.

    Derived behavior u_L = d/dt psi_L, i_L = grad H_L(psi_L); a shorted
    port (u = 0) keeps the flux constant.
    """
    l_p = h.dim if l_p is None else l_p
    if l_p != h.dim:
        raise BadParams(f"Hamiltonian dimension {h.dim} != ports {l_p}")
    grad = _vectorized_grad(h)
    if not gradient_field_check(grad, samples or _default_samples(l_p)):
        raise NotAGradient(f"{name}: supplied map is not a gradient field")
    d = _inductor_dirac(l_p, name)
    lag = GradientLagrange(h.value, grad, l_p)
    return PHSystem(d, (lag,), ())


def _vectorized_grad(h: Hamiltonian) -> Callable:
    return lambda x: np.atleast_1d(np.asarray(h.grad(np.asarray(x, dtype=float)),
                                              dtype=float))


_ACCRETIVE_SAMPLES = (1.0, 0.5, 0.1, 0.01, -0.01, -0.1, -0.5, -1.0)


def _accretive_or_raise(mapping: Callable, l_p: int, name: str, samples=None):
    if samples is None:
        if l_p == 1:
            samples = [np.array([s]) for s in _ACCRETIVE_SAMPLES]
        else:
            rng = np.random.default_rng(0)
            samples = [rng.uniform(-1, 1, l_p) for _ in range(16)]
            for j in range(l_p):
                v = np.zeros(l_p)
                v[j] = 1.0
                samples.extend([v, -v])
    for phi in samples:
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        val = np.atleast_1d(np.asarray(mapping(phi), dtype=float))
        if float(phi @ val) < 0.0:
            raise NotAccretive(
                f"{name}: map is not accretive at phi={phi.tolist()}",
                witness=phi,
            )


def conductance_ph(g_map: Callable, l_p: int = 1, name: str = "G",
                   samples=None, g_jac: Callable | None = None) -> PHSystem:
    """Conductance i = g(u) for an accretive g; resistive pair (-i, u)."""
    _accretive_or_raise(g_map, l_p, name, samples)
    d = standard_dirac(l_p, first_role="resistive", name=name)
    rel = ResistiveRelation(l_p, "conductance",
                            mapping=lambda e: np.atleast_1d(np.asarray(g_map(e), float)),
                            mapping_jac=g_jac)
    return PHSystem(d, (), (rel,))


def resistance_ph(r_map: Callable, l_p: int = 1, name: str = "R",
                  samples=None, r_jac: Callable | None = None) -> PHSystem:
    """Resistance u = r(i) for an accretive r; resistive pair (-i, u)."""
    _accretive_or_raise(r_map, l_p, name, samples)
    d = standard_dirac(l_p, first_role="resistive", name=name)
    rel = ResistiveRelation(l_p, "resistance",
                            mapping=lambda i: np.atleast_1d(np.asarray(r_map(i), float)),
                            mapping_jac=r_jac)
    return PHSystem(d, (), (rel,))


def ideal_diode_relation(tol: float = 0.0) -> ResistiveRelation:
    """Ideal diode as a complementarity relation.

    Members are pairs (f, e) = (-i, u) with i >= 0, u <= 0 and i u = 0,
    i.e. (i, u) in ({0} x R_<=0) union (R_>=0 x {0}).  Every member has
    e^T f = -i u = 0 exactly, so the relation is resistive (lossless).
    """

    def member(f, e):
        i = -float(f[0])
        u = float(e[0])
        scale = 1.0 + abs(i) + abs(u)
        return i >= -tol * scale and u <= tol * scale and abs(i * u) <= tol * scale

    return ResistiveRelation(1, "implicit", predicate=member)


def pn_diode_current(u, a: float, b: float):
    """PN-junction characteristic i = a (exp(u/b) - 1), overflow-guarded."""
    if not (a > 0 and b > 0):
        raise BadParams(f"PN diode needs a > 0, b > 0 (got a={a}, b={b})")
    return a * (guarded_exp(np.asarray(u, dtype=float) / b) - 1.0)


def pn_diode_conductance(a: float, b: float, gmin: float = GMIN) -> ScalarMap:
    """The diode as a conductance-form scalar law used for simulation.

    Adds the minimum shunt conductance ``gmin`` across the junction, so
    the reverse-biased branch keeps a nonzero slope; the inverse form is
    obtained by safeguarded Newton (the map is strictly increasing).
    """
    if not (a > 0 and b > 0):
        raise BadParams(f"PN diode needs a > 0, b > 0 (got a={a}, b={b})")

    def value(u):
        u = np.asarray(u, dtype=float)
        return a * (guarded_exp(u / b) - 1.0) + gmin * u

    def deriv(u):
        return (a / b) * guarded_exp_deriv(np.asarray(u, dtype=float) / b) + gmin

    return ScalarMap("conductance", value, deriv, spec=f"pn(a={a!r},b={b!r})")


def pn_diode_ph(a: float, b: float, name: str = "D") -> PHSystem:
    law = pn_diode_conductance(a, b)
    return conductance_ph(law.value, 1, name, g_jac=lambda e: np.array([[law.deriv(e[0])]]))


def transformer_ph(t_ratio: float, name: str = "T") -> PHSystem:
    """Ideal transformer: T i_1 = -i_2 and u_1 = T u_2 on two edges.

    Power-conserving: u_1 i_1 + u_2 i_2 = 0 identically on the relation,
    yet the relation is housed in the resistive slot.
    """
    t = float(t_ratio)
    d = standard_dirac(2, first_role="resistive", name=name)
    # pairs (f, e) = ((-i1, -i2), (u1, u2)); rows: T f1 + f2 = 0, e1 - T e2 = 0
    cf = np.array([[t, 1.0], [0.0, 0.0]])
    ce = np.array([[0.0, 0.0], [1.0, -t]])
    rel = ResistiveRelation(2, "linear", linear_f=cf, linear_e=ce)
    return PHSystem(d, (), (rel,))


# ---------------------------------------------------------------------------
# NPN transistor (Ebers-Moll)
# ---------------------------------------------------------------------------

def ebers_moll(u_bc: float, u_be: float, params: TransistorParams):
    """Collector and emitter currents of the Ebers-Moll large-signal model.

    i_C = i_S (e^{u_BE/V_T} - 1) - (i_S/alpha_R)(e^{u_BC/V_T} - 1)
    i_E = (i_S/alpha_F)(e^{u_BE/V_T} - 1) - i_S (e^{u_BC/V_T} - 1)

    The basis current follows from the Kirchhoff laws as
    i_B = i_E - i_C.
    """
    p = params
    ebe = guarded_exp(np.asarray(u_be, dtype=float) / p.v_t) - 1.0
    ebc = guarded_exp(np.asarray(u_bc, dtype=float) / p.v_t) - 1.0
    i_c = p.i_s * ebe - (p.i_s / p.alpha_r) * ebc
    i_e = (p.i_s / p.alpha_f) * ebe - p.i_s * ebc
    return i_c, i_e


def ebers_moll_jacobian(u_bc: float, u_be: float, params: TransistorParams) -> np.ndarray:
    """d(i_C, i_E) / d(u_BC, u_BE)."""
    p = params
    dbe = guarded_exp_deriv(u_be / p.v_t) / p.v_t
    dbc = guarded_exp_deriv(u_bc / p.v_t) / p.v_t
    return np.array([
        [-(p.i_s / p.alpha_r) * dbc, p.i_s * dbe],
        [-p.i_s * dbc, (p.i_s / p.alpha_f) * dbe],
    ])


def transistor_edge_currents(u_edges: np.ndarray, params: TransistorParams,
                             gmin: float = GMIN) -> np.ndarray:
    """Currents along the (basis->collector, basis->emitter) edges.

    The collector current is directed against its edge, so the edge
    currents are (-i_C, +i_E) as functions of the edge voltages
    (u_BC, u_BE); a ``gmin`` shunt per edge keeps off junctions regular.
    """
    i_c, i_e = ebers_moll(float(u_edges[0]), float(u_edges[1]), params)
    return np.array([-i_c + gmin * u_edges[0], i_e + gmin * u_edges[1]])


def transistor_edge_jacobian(u_edges: np.ndarray, params: TransistorParams,
                             gmin: float = GMIN) -> np.ndarray:
    jac = ebers_moll_jacobian(float(u_edges[0]), float(u_edges[1]), params)
    return np.array([[-jac[0, 0] + gmin, -jac[0, 1]], [jac[1, 0], jac[1, 1] + gmin]])


def transistor_ph(params: TransistorParams, name: str = "Q") -> PHSystem:
    """NPN transistor as a two-port relation in the resistive slot.

    Relation members are (f, e) = ((i_C, -i_E), (u_BC, u_BE)); the
    resistive inequality e^T f <= 0 holds on a neighborhood of the origin
    (see :func:`transistor_passivity_radius`), not globally.
    """
    d = standard_dirac(2, first_role="resistive", name=name)
    rel = ResistiveRelation(
        2, "conductance",
        mapping=lambda e: transistor_edge_currents(e, params),
        mapping_jac=lambda e: transistor_edge_jacobian(e, params),
    )
    return PHSystem(d, (), (rel,))


@dataclass(frozen=True)
class PassivitySearch:
    grid_step: float = 1e-3
    max_radius: float = 0.5
    boundary_points: int = 17
    tol: float = 1e-12


def _phi_ratio(x: float, v_t: float) -> float:
    """(exp(x/v_t) - 1) / x with its continuous extension 1/v_t at 0."""
    if abs(x) < 1e-9 * v_t:
        return (1.0 + x / (2.0 * v_t)) / v_t
    return (guarded_exp(x / v_t) - 1.0) / x


def _smallsignal_sym(u_bc: float, u_be: float, p: TransistorParams) -> np.ndarray:
    a11 = -(p.i_s / p.alpha_r) * _phi_ratio(u_bc, p.v_t)
    a12 = p.i_s * _phi_ratio(u_be, p.v_t)
    a21 = p.i_s * _phi_ratio(u_bc, p.v_t)
    a22 = -(p.i_s / p.alpha_f) * _phi_ratio(u_be, p.v_t)
    a = np.array([[a11, a12], [a21, a22]])
    return 0.5 * (a + a.T)


def transistor_passivity_radius(params: TransistorParams,
                                search: PassivitySearch | None = None) -> float:
    """Largest box radius on which the Ebers-Moll relation is resistive.

    Computes the symmetric part of the voltage-quadratic-form matrix and
    bisects over a radius grid (default step 1 mV) for the largest rho
    such that it stays negative semidefinite for all sampled
    ||(u_BC, u_BE)||_inf <= rho.  The definiteness region of this family
    is monotone in rho (the off-diagonal/diagonal ratio grows with the
    voltage), so grid bisection finds the first failing grid point.

    Raises NotLocallyPassive when the matrix at the origin is not
    negative definite (e.g. alpha_F * alpha_R = 1).
    """
    search = search or PassivitySearch()
    m0 = _smallsignal_sym(0.0, 0.0, params)
    scale = np.max(np.abs(m0))
    if np.max(np.linalg.eigvalsh(m0)) >= -search.tol * scale:
        raise NotLocallyPassive(
            f"A(0,0) is not negative definite for {params}; "
            f"alpha_F*alpha_R = {params.alpha_f * params.alpha_r:.6g}"
        )

    def passes(rho: float) -> bool:
        ts = np.linspace(-rho, rho, search.boundary_points)
        for t in ts:
            for u_bc, u_be in ((rho, t), (-rho, t), (t, rho), (t, -rho)):
                m = _smallsignal_sym(u_bc, u_be, params)
                bound = search.tol * max(scale, float(np.max(np.abs(m))))
                if float(np.max(np.linalg.eigvalsh(m))) > bound:
                    return False
        return True

    n_grid = max(1, int(round(search.max_radius / search.grid_step)))
    if passes(n_grid * search.grid_step):
        return n_grid * search.grid_step
    lo, hi = 0, n_grid  # grid index: lo passes, hi fails
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid * search.grid_step):
            lo = mid
        else:
            hi = mid
    return lo * search.grid_step


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------

def source_ph(kind: str, waveform: Waveform | None = None, name: str = "S") -> PHSystem:
    """Current/voltage source (or sink): one external port and one link port.

    The Lagrange and resistive parts are trivial; the prescribed variable
    (current for a current source, voltage for a voltage source) is
    pinned to the waveform as an external constraint at assembly time.
    A sink is an open port: its current is pinned to zero.
    """
    if kind not in ("source_current", "source_voltage", "sink"):
        raise BadParams(f"not a source kind: {kind!r}")
    d = standard_dirac(1, first_role="external", name=name)
    return PHSystem(d, (), ())


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def to_ph(component: ComponentModel, loop_roles: bool = False) -> PHSystem:
    """The pH system of a component; all port pairs become link ports.

    With ``loop_roles`` the flow/effort roles of the link ports are
    exchanged, as required when interconnecting with the cycle-based
    Kirchhoff structure.
    """
    c = component
    if c.kind == "capacitor":
        sys = capacitor_ph(c.hamiltonian, name=c.name)
    elif c.kind == "inductor":
        sys = inductor_ph(c.hamiltonian, name=c.name)
    elif c.kind in ("conductance", "resistance"):
        law = c.resistive_map
        if law.form == "conductance":
            sys = conductance_ph(law.value, 1, c.name,
                                 g_jac=lambda e: np.array([[law.deriv(float(e[0]))]]))
        else:
            sys = resistance_ph(law.value, 1, c.name,
                                r_jac=lambda i: np.array([[law.deriv(float(i[0]))]]))
    elif c.kind in ("pn_diode", "ideal_diode"):
        sys = pn_diode_ph(c.params["a"], c.params["b"], name=c.name)
    elif c.kind == "transformer":
        sys = transformer_ph(c.params["ratio"], name=c.name)
    elif c.kind == "npn_transistor":
        sys = transistor_ph(c.transistor, name=c.name)
    elif c.kind in ("source_current", "source_voltage", "sink"):
        sys = source_ph(c.kind, c.waveform, name=c.name)
    else:  # pragma: no cover - guarded by ComponentModel validation
        raise BadParams(f"unknown component kind {c.kind!r}")
    return swap_link_roles(sys) if loop_roles else sys
