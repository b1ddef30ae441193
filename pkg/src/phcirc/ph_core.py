"""Finite-dimensional port-Hamiltonian algebra.

Linear power-routing structures are kept in kernel form: a pair (K, L)
with K L^T + L K^T = 0 and full row rank describes the subspace
{(f, e) : K f + L e = 0} of flow/effort space.  Energy storage is a
graph of a Hamiltonian gradient or a linear subspace S^T f = P^T e;
dissipation is a relation with e^T f <= 0.  A PHSystem bundles the three
with an explicit, ordered port layout (storage / resistive / external /
link blocks).

All interconnection happens on the linear kernel representations; the
nonlinear constitutive parts are never eliminated, they ride along as
residual attachments.  Composition with respect to link ports is
computed numerically: stack both kernels with shared link efforts and
opposite-sign link flows, take the solution span, project out the link
coordinates and rebuild a kernel via :func:`kernel_from_span`.

Numerical rank decisions use a relative singular-value threshold
(default 1e-10) and a hard gap test: if the retained/discarded singular
values are closer than a factor 1e3, DegenerateSpan is raised instead of
guessing.  Inputs here are small integer-entried matrices, so ranks are
crisp and an ambiguous gap signals a bug.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateSpan,
    EvaluationFailure,
    InvalidDiracStructure,
    LinkMismatch,
    ShapeMismatch,
)

__all__ = [
    "PortBlock",
    "PortLayout",
    "DiracKernel",
    "LinearLagrange",
    "GradientLagrange",
    "ResistiveRelation",
    "PHSystem",
    "is_dirac",
    "dirac_contains",
    "kernel_from_span",
    "kernel_basis",
    "random_members",
    "is_linear_lagrange",
    "gradient_field_check",
    "resistive_check",
    "product",
    "interconnect",
    "swap_link_roles",
    "ph_residual",
    "dirac_to_json",
    "dirac_from_json",
    "lagrange_to_json",
    "lagrange_from_json",
]

DEFAULT_TOL = 1e-10
RANK_GAP = 1e3

ROLES = ("storage", "resistive", "external", "link")


# ---------------------------------------------------------------------------
# port layouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PortBlock:
    role: str
    name: str
    size: int

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown port role {self.role!r}")
        if self.size < 0:
            raise ValueError("block size must be nonnegative")


@dataclass(frozen=True)
class PortLayout:
    """Ordered labelled partition of the flow/effort coordinates.

    Blocks are kept in canonical role order: all storage blocks first,
    then resistive, external, and link blocks.  Within a role, block
    order is declaration order.
    """

    blocks: tuple[PortBlock, ...]

    def __post_init__(self):
        order = {r: i for i, r in enumerate(ROLES)}
        ranks = [order[b.role] for b in self.blocks]
        if ranks != sorted(ranks):
            raise ValueError("layout blocks must be grouped storage/resistive/external/link")

    @classmethod
    def build(cls, storage=(), resistive=(), external=(), link=()) -> "PortLayout":
        """Blocks given as (name, size) pairs per role."""
        blocks = []
        for role, pairs in zip(ROLES, (storage, resistive, external, link)):
            for name, size in pairs:
                blocks.append(PortBlock(role, name, size))
        return cls(tuple(blocks))

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    def role_dim(self, role: str) -> int:
        return sum(b.size for b in self.blocks if b.role == role)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(n_storage, n_resistive, n_external, n_link)."""
        return tuple(self.role_dim(r) for r in ROLES)  # type: ignore[return-value]

    def role_indices(self, role: str) -> np.ndarray:
        """Coordinate indices of all blocks with the given role."""
        idx = []
        off = 0
        for b in self.blocks:
            if b.role == role:
                idx.extend(range(off, off + b.size))
            off += b.size
        return np.array(idx, dtype=int)

    def block_slices(self, role: str) -> list[tuple[PortBlock, slice]]:
        """Blocks of a role with their slices in the full coordinate vector."""
        out = []
        off = 0
        for b in self.blocks:
            if b.role == role:
                out.append((b, slice(off, off + b.size)))
            off += b.size
        return out

    def local_block_slices(self, role: str) -> list[tuple[PortBlock, slice]]:
        """Blocks of a role with slices into that role's own stacked vector."""
        out = []
        off = 0
        for b in self.blocks:
            if b.role == role:
                out.append((b, slice(off, off + b.size)))
                off += b.size
        return out

    def role_blocks(self, role: str) -> tuple[PortBlock, ...]:
        return tuple(b for b in self.blocks if b.role == role)

    def drop_link(self) -> "PortLayout":
        return PortLayout(tuple(b for b in self.blocks if b.role != "link"))


def _concat_layouts(a: PortLayout, b: PortLayout, keep_link: bool = True) -> PortLayout:
    blocks = []
    for role in ROLES:
        if role == "link" and not keep_link:
            continue
        blocks.extend(a.role_blocks(role))
        blocks.extend(b.role_blocks(role))
    return PortLayout(tuple(blocks))


# ---------------------------------------------------------------------------
# Dirac structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiracKernel:
    """Kernel representation {(f, e) : K f + L e = 0} with a port layout.

    K and L have the same shape (p, n) with n = layout.dim; a minimal
    representation has p = n.  Validation (the Dirac property) is
    :func:`is_dirac`, kept separate so candidates can be inspected.
    """

    k_mat: np.ndarray
    l_mat: np.ndarray
    layout: PortLayout

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.k_mat, dtype=float))
        l = np.atleast_2d(np.asarray(self.l_mat, dtype=float))
        if k.shape != l.shape:
            raise ShapeMismatch(f"K {k.shape} and L {l.shape} differ in shape")
        if k.shape[1] != self.layout.dim:
            raise ShapeMismatch(
                f"kernel has {k.shape[1]} columns but layout dimension is {self.layout.dim}"
            )
        object.__setattr__(self, "k_mat", k)
        object.__setattr__(self, "l_mat", l)

    @property
    def dim(self) -> int:
        return self.k_mat.shape[1]

    def residual(self, f: np.ndarray, e: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float).reshape(-1)
        e = np.asarray(e, dtype=float).reshape(-1)
        if f.shape[0] != self.dim or e.shape[0] != self.dim:
            raise ShapeMismatch(
                f"expected flow/effort of length {self.dim}, got {f.shape[0]}/{e.shape[0]}"
            )
        return self.k_mat @ f + self.l_mat @ e


def is_dirac(k: np.ndarray, l: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True iff {K f + L e = 0} is a Dirac structure on R^n x R^n.

    Checks ||K L^T + L K^T||_max <= tol and numerical rank of [K L]
    equal to n (so the kernel has dimension n).  K and L must have equal
    shape; rows may be redundant (p >= n is accepted).
    """
    k = np.atleast_2d(np.asarray(k, dtype=float))
    l = np.atleast_2d(np.asarray(l, dtype=float))
    if k.shape != l.shape:
        raise ShapeMismatch(f"K {k.shape} and L {l.shape} differ in shape")
    n = k.shape[1]
    if n == 0:
        return True
    skew = k @ l.T + l @ k.T
    if skew.size and np.max(np.abs(skew)) > tol:
        return False
    return _numerical_rank(np.hstack([k, l]), tol) == n


def dirac_contains(d: DiracKernel, f, e, tol: float = DEFAULT_TOL) -> bool:
    """Membership test with mixed tolerance tol * (1 + |f|_inf + |e|_inf)."""
    f = np.asarray(f, dtype=float).reshape(-1)
    e = np.asarray(e, dtype=float).reshape(-1)
    res = d.residual(f, e)
    scale = 1.0 + _inf(f) + _inf(e)
    return _inf(res) <= tol * scale


def kernel_from_span(basis, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Kernel matrices (K, L) annihilating the span of the given vectors.

    ``basis`` is a sequence of vectors in R^{2n} (or a matrix with such
    rows).  Returns (K, L), each with n columns, such that [K L] has
    orthonormal rows spanning the orthogonal complement of the span;
    rank [K L] = 2n - rank(span).  The caller validates the Dirac
    property via :func:`is_dirac`.

    Raises DegenerateSpan when the numerical rank of the span is
    ambiguous at ``tol`` (singular-value gap below 1e3).
    """
    mat = np.atleast_2d(np.asarray(basis, dtype=float))
    if mat.size == 0 and mat.shape[1] == 0:
        raise ShapeMismatch("cannot infer ambient dimension from an empty basis; "
                            "pass a (0, 2n) array")
    two_n = mat.shape[1]
    if two_n % 2 != 0:
        raise ShapeMismatch(f"span vectors live in R^{two_n}, expected even dimension")
    n = two_n // 2
    if mat.shape[0] == 0:
        w = np.eye(two_n)
        return w[:, :n], w[:, n:]
    _, svals, vt = np.linalg.svd(mat, full_matrices=True)
    r = _rank_with_gap(svals, tol)
    w = vt[r:, :]
    return w[:, :n], w[:, n:]


def kernel_basis(d: DiracKernel, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (rows) of the subspace {(f, e) : K f + L e = 0}."""
    mat = np.hstack([d.k_mat, d.l_mat])
    _, svals, vt = np.linalg.svd(mat, full_matrices=True)
    r = int(np.sum(svals > tol * svals[0])) if svals.size else 0
    return vt[r:, :]


def random_members(d: DiracKernel, count: int, rng: np.random.Generator):
    """Random elements (f, e) of the structure, for property checks."""
    basis = kernel_basis(d)
    n = d.dim
    out = []
    for _ in range(count):
        coeff = rng.standard_normal(basis.shape[0])
        v = coeff @ basis
        out.append((v[:n], v[n:]))
    return out


def _numerical_rank(mat: np.ndarray, tol: float) -> int:
    if mat.size == 0:
        return 0
    svals = np.linalg.svd(mat, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


def _rank_with_gap(svals: np.ndarray, tol: float) -> int:
    """Rank by relative threshold, with a hard gap test across the cut."""
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    r = int(np.sum(svals > tol * svals[0]))
    if 0 < r < svals.size and svals[r] > 0.0:
        if svals[r - 1] / svals[r] < RANK_GAP:
            raise DegenerateSpan(
                f"ambiguous rank decision: sigma_{r}={svals[r-1]:.3e}, "
                f"sigma_{r+1}={svals[r]:.3e}"
            )
    return r


def _inf(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


# ---------------------------------------------------------------------------
# energy storage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearLagrange:
    """Lagrange subspace {(f, e) : S^T f = P^T e}."""

    s_mat: np.ndarray
    p_mat: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.s_mat, dtype=float))
        p = np.atleast_2d(np.asarray(self.p_mat, dtype=float))
        if s.shape != p.shape or s.shape[0] != s.shape[1]:
            raise ShapeMismatch("S and P must be square matrices of equal size")
        object.__setattr__(self, "s_mat", s)
        object.__setattr__(self, "p_mat", p)

    @property
    def dim(self) -> int:
        return self.s_mat.shape[0]

    def residual(self, x: np.ndarray, e: np.ndarray) -> np.ndarray:
        return self.s_mat.T @ np.asarray(x, float) - self.p_mat.T @ np.asarray(e, float)

    @classmethod
    def trivial(cls) -> "LinearLagrange":
        return cls(np.zeros((0, 0)), np.zeros((0, 0)))

    @classmethod
    def zero_state(cls, n: int) -> "LinearLagrange":
        """The subspace {0} x R^n (state pinned to zero, effort free)."""
        return cls(np.eye(n), np.zeros((n, n)))


@dataclass(frozen=True)
class GradientLagrange:
    """Graph of a Hamiltonian gradient: {(x, grad H(x))}.

    ``hamiltonian`` maps R^n -> R (joules); ``gradient`` maps R^n -> R^n
    (effort per state).  Consistency of the pair is checked by
    :meth:`check`, not at construction.
    """

    hamiltonian: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    dim: int

    def residual(self, x: np.ndarray, e: np.ndarray) -> np.ndarray:
        return np.asarray(e, float) - np.asarray(self.gradient(np.asarray(x, float)), float).reshape(-1)

    def check(self, samples: Iterable[np.ndarray], tol: float = 1e-6) -> bool:
        """Gradient-field test plus value/gradient consistency at samples."""
        if not gradient_field_check(self.gradient, samples, tol=tol):
            return False
        h = 1e-6
        for x in samples:
            x = np.asarray(x, dtype=float).reshape(-1)
            g = np.asarray(self.gradient(x), float).reshape(-1)
            for j in range(self.dim):
                step = np.zeros(self.dim)
                step[j] = h * max(1.0, abs(x[j]))
                dh = (self.hamiltonian(x + step) - self.hamiltonian(x - step)) / (2 * step[j])
                if abs(dh - g[j]) > tol * (1.0 + abs(g[j])):
                    return False
        return True


def is_linear_lagrange(s: np.ndarray, p: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True iff S^T P = P^T S and [S^T P^T] has full numerical rank."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if s.shape != p.shape:
        raise ShapeMismatch("S and P must have equal shape")
    if s.shape[0] != s.shape[1]:
        raise ShapeMismatch("S and P must be square")
    n = s.shape[0]
    if n == 0:
        return True
    sym = s.T @ p - p.T @ s
    if np.max(np.abs(sym)) > tol:
        return False
    return _numerical_rank(np.hstack([s.T, p.T]), tol) == n


def gradient_field_check(q: Callable, samples: Iterable, tol: float = 1e-6,
                         h: float = 1e-6) -> bool:
    """Necessary-condition test that q is a gradient field.

    The finite-difference Jacobian of q must be symmetric (to a mixed
    tolerance) at every sample point.
    """
    for x in samples:
        x = np.asarray(x, dtype=float).reshape(-1)
        n = x.shape[0]
        jac = np.empty((n, n))
        try:
            for j in range(n):
                step = np.zeros(n)
                step[j] = h * max(1.0, abs(x[j]))
                qp = np.asarray(q(x + step), dtype=float).reshape(-1)
                qm = np.asarray(q(x - step), dtype=float).reshape(-1)
                jac[:, j] = (qp - qm) / (2 * step[j])
        except Exception as exc:  # noqa: BLE001 - user map may raise anything
            raise EvaluationFailure(f"map evaluation failed at {x}: {exc}") from exc
        if not np.all(np.isfinite(jac)):
            raise EvaluationFailure(f"map returned non-finite values near {x}")
        scale = 1.0 + np.max(np.abs(jac))
        if np.max(np.abs(jac - jac.T)) > tol * scale:
            return False
    return True


# ---------------------------------------------------------------------------
# resistive relations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResistiveRelation:
    """A set of (flow, effort) pairs with e^T f <= 0.

    Three explicit forms cover every device in the library:

    * ``conductance``: f + g(e) = 0 for an effort-to-flow map g;
    * ``resistance``:  e - r(-f) = 0 for a flow-to-effort map r;
    * ``linear``:      C_f f + C_e e = 0, an exact linear relation
      (transformers);
    * ``implicit``:    membership predicate only (ideal diode); has no
      residual and cannot be simulated directly.
    """

    dim: int
    form: str
    mapping: Callable | None = None
    mapping_jac: Callable | None = None
    predicate: Callable | None = None
    linear_f: np.ndarray | None = None
    linear_e: np.ndarray | None = None

    def __post_init__(self):
        if self.form not in ("conductance", "resistance", "linear", "implicit"):
            raise ValueError(f"unknown resistive form {self.form!r}")
        if self.form == "linear":
            cf = np.atleast_2d(np.asarray(self.linear_f, dtype=float))
            ce = np.atleast_2d(np.asarray(self.linear_e, dtype=float))
            if self.dim == 0:
                cf = cf.reshape(0, 0)
                ce = ce.reshape(0, 0)
            if cf.shape != (self.dim, self.dim) or ce.shape != (self.dim, self.dim):
                raise ShapeMismatch("linear relation matrices must be dim x dim")
            object.__setattr__(self, "linear_f", cf)
            object.__setattr__(self, "linear_e", ce)

    @classmethod
    def trivial(cls) -> "ResistiveRelation":
        return cls(0, "linear", linear_f=np.zeros((0, 0)), linear_e=np.zeros((0, 0)))

    def residual(self, f, e) -> np.ndarray:
        f = np.asarray(f, dtype=float).reshape(-1)
        e = np.asarray(e, dtype=float).reshape(-1)
        if f.shape[0] != self.dim or e.shape[0] != self.dim:
            raise ShapeMismatch(f"expected vectors of length {self.dim}")
        if self.form == "conductance":
            return f + np.asarray(self.mapping(e), dtype=float).reshape(-1)
        if self.form == "resistance":
            return e - np.asarray(self.mapping(-f), dtype=float).reshape(-1)
        if self.form == "linear":
            return self.linear_f @ f + self.linear_e @ e
        raise ValueError("implicit relation has no residual form")

    def contains(self, f, e, tol: float = 1e-9) -> bool:
        if self.form == "implicit":
            return bool(self.predicate(np.asarray(f, float).reshape(-1),
                                       np.asarray(e, float).reshape(-1)))
        res = self.residual(f, e)
        return _inf(res) <= tol * (1.0 + _inf(np.asarray(f)) + _inf(np.asarray(e)))

    def pairs_from_samples(self, samples) -> list[tuple[np.ndarray, np.ndarray]]:
        """Relation members constructed from sample inputs.

        Conductance form samples efforts, resistance form samples
        currents (i = -f); linear/implicit forms take (f, e) pairs and
        verify membership.
        """
        out = []
        for s in samples:
            if self.form == "conductance":
                e = np.asarray(s, dtype=float).reshape(-1)
                out.append((-np.asarray(self.mapping(e), float).reshape(-1), e))
            elif self.form == "resistance":
                i = np.asarray(s, dtype=float).reshape(-1)
                out.append((-i, np.asarray(self.mapping(i), float).reshape(-1)))
            else:
                f, e = s
                f = np.asarray(f, dtype=float).reshape(-1)
                e = np.asarray(e, dtype=float).reshape(-1)
                if not self.contains(f, e):
                    raise ValueError("sample pair is not a member of the relation")
                out.append((f, e))
        return out


def resistive_check(rel: ResistiveRelation, samples, tol: float = 1e-12) -> bool:
    """True iff e^T f <= tol slack for every sampled member of the relation."""
    for f, e in rel.pairs_from_samples(samples):
        power = float(e @ f)
        if power > tol * (1.0 + _inf(f) * _inf(e)):
            return False
    return True


# ---------------------------------------------------------------------------
# pH systems and their composition
# ---------------------------------------------------------------------------

LagrangePart = LinearLagrange | GradientLagrange


@dataclass(frozen=True)
class PHSystem:
    """Triple (Dirac, Lagrange, resistive) with an explicit port layout.

    ``lagrange_parts`` and ``resistive_parts`` align one-to-one with the
    storage/resistive blocks of the Dirac structure's layout (same order,
    same sizes).  Trivial parts are zero-dimensional blocks, not special
    cases.
    """

    dirac: DiracKernel
    lagrange_parts: tuple[LagrangePart, ...] = ()
    resistive_parts: tuple[ResistiveRelation, ...] = ()

    def __post_init__(self):
        st = self.dirac.layout.role_blocks("storage")
        rs = self.dirac.layout.role_blocks("resistive")
        if len(st) != len(self.lagrange_parts):
            raise ShapeMismatch(
                f"{len(st)} storage blocks but {len(self.lagrange_parts)} Lagrange parts"
            )
        for b, part in zip(st, self.lagrange_parts):
            if part.dim != b.size:
                raise ShapeMismatch(
                    f"storage block {b.name!r} has size {b.size}, part has dim {part.dim}"
                )
        if len(rs) != len(self.resistive_parts):
            raise ShapeMismatch(
                f"{len(rs)} resistive blocks but {len(self.resistive_parts)} resistive parts"
            )
        for b, part in zip(rs, self.resistive_parts):
            if part.dim != b.size:
                raise ShapeMismatch(
                    f"resistive block {b.name!r} has size {b.size}, part has dim {part.dim}"
                )

    @property
    def layout(self) -> PortLayout:
        return self.dirac.layout

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(n_storage, n_resistive, n_external, n_link)."""
        return self.layout.dims


def product(systems: Sequence[PHSystem]) -> PHSystem:
    """Cartesian product of pH systems (interconnection over a trivial link).

    Kernel matrices are block-diagonal up to the canonical regrouping of
    coordinates: storage blocks of all systems first (in declaration
    order), then resistive, external, and link blocks.
    """
    systems = list(systems)
    if not systems:
        layout = PortLayout(())
        d = DiracKernel(np.zeros((0, 0)), np.zeros((0, 0)), layout)
        return PHSystem(d, (), ())
    acc = systems[0]
    for sys_i in systems[1:]:
        acc = _pair_product(acc, sys_i)
    return acc


def _scatter_columns(sys_list: Sequence[PHSystem], keep_link: bool = True):
    """Column index maps from each system's coordinates into the composed order."""
    roles = ROLES if keep_link else ROLES[:-1]
    maps = [[] for _ in sys_list]
    total = 0
    for role in roles:
        for i, s in enumerate(sys_list):
            size = s.layout.role_dim(role)
            maps[i].append((role, total, size))
            total += size
    out = []
    for i, s in enumerate(sys_list):
        dim = s.layout.dim if keep_link else s.layout.dim - s.layout.role_dim("link")
        cmap = np.empty(dim, dtype=int)
        for role, start, size in maps[i]:
            cmap[_local_positions(s.layout, role, keep_link)] = np.arange(start, start + size)
        out.append(cmap)
    return out, total


def _local_positions(layout: PortLayout, role: str, keep_link: bool) -> np.ndarray:
    """Positions of a role's coordinates within the (possibly link-less) layout."""
    idx = layout.role_indices(role)
    if keep_link:
        return idx
    link_idx = set(layout.role_indices("link").tolist())
    keep = [i for i in range(layout.dim) if i not in link_idx]
    pos = {orig: new for new, orig in enumerate(keep)}
    return np.array([pos[i] for i in idx], dtype=int)


def _pair_product(a: PHSystem, b: PHSystem) -> PHSystem:
    layout = _concat_layouts(a.layout, b.layout)
    (cmap_a, cmap_b), total = _scatter_columns([a, b])
    rows = a.dirac.k_mat.shape[0] + b.dirac.k_mat.shape[0]
    k = np.zeros((rows, total))
    l = np.zeros((rows, total))
    ra = a.dirac.k_mat.shape[0]
    k[:ra, cmap_a] = a.dirac.k_mat
    l[:ra, cmap_a] = a.dirac.l_mat
    k[ra:, cmap_b] = b.dirac.k_mat
    l[ra:, cmap_b] = b.dirac.l_mat
    d = DiracKernel(k, l, layout)
    return PHSystem(d, a.lagrange_parts + b.lagrange_parts,
                    a.resistive_parts + b.resistive_parts)


def interconnect(sys1: PHSystem, sys2: PHSystem, tol: float = DEFAULT_TOL,
                 validate: bool = True) -> PHSystem:
    """Power-conserving interconnection of two pH systems over their link ports.

    The composed Dirac structure consists of the non-link flows/efforts
    for which link variables exist with shared link efforts and
    opposite-sign link flows (the sign flip is applied to ``sys2``).
    Link blocks are identified pairwise in declared order and must have
    equal total size.  Lagrange and resistive parts are concatenated.

    Realized in kernel form: stack both kernel systems over the combined
    variables, compute the solution span, project out the link
    coordinates, rebuild (K, L) via :func:`kernel_from_span` and validate
    the result with :func:`is_dirac`.
    """
    n_link = sys1.layout.role_dim("link")
    if n_link != sys2.layout.role_dim("link"):
        raise LinkMismatch(
            f"link dimensions differ: {n_link} vs {sys2.layout.role_dim('link')}"
        )

    rest1 = sys1.layout.dim - n_link
    rest2 = sys2.layout.dim - n_link
    link1 = sys1.layout.role_indices("link")
    link2 = sys2.layout.role_indices("link")
    keep1 = np.array([i for i in range(sys1.layout.dim) if i not in set(link1.tolist())],
                     dtype=int)
    keep2 = np.array([i for i in range(sys2.layout.dim) if i not in set(link2.tolist())],
                     dtype=int)

    # variable order: f1_rest, f2_rest, f_link, e1_rest, e2_rest, e_link
    nf = rest1 + rest2 + n_link
    total = 2 * nf
    of1, of2, ofl = 0, rest1, rest1 + rest2
    oe1, oe2, oel = nf, nf + rest1, nf + rest1 + rest2

    rows1 = sys1.dirac.k_mat.shape[0]
    rows2 = sys2.dirac.k_mat.shape[0]
    sysmat = np.zeros((rows1 + rows2, total))
    sysmat[:rows1, of1:of1 + rest1] = sys1.dirac.k_mat[:, keep1]
    sysmat[:rows1, ofl:ofl + n_link] = sys1.dirac.k_mat[:, link1]
    sysmat[:rows1, oe1:oe1 + rest1] = sys1.dirac.l_mat[:, keep1]
    sysmat[:rows1, oel:oel + n_link] = sys1.dirac.l_mat[:, link1]
    sysmat[rows1:, of2:of2 + rest2] = sys2.dirac.k_mat[:, keep2]
    sysmat[rows1:, ofl:ofl + n_link] = -sys2.dirac.k_mat[:, link2]
    sysmat[rows1:, oe2:oe2 + rest2] = sys2.dirac.l_mat[:, keep2]
    sysmat[rows1:, oel:oel + n_link] = sys2.dirac.l_mat[:, link2]

    # solution span of the stacked system
    if sysmat.shape[0] == 0:
        null = np.eye(total)
    else:
        _, svals, vt = np.linalg.svd(sysmat, full_matrices=True)
        r = _rank_with_gap(svals, tol)
        null = vt[r:, :]

    # project onto the non-link coordinates, reordered into the composed layout
    layout = _concat_layouts(sys1.layout, sys2.layout, keep_link=False)
    (cmap1, cmap2), n_rest = _scatter_columns([sys1, sys2], keep_link=False)
    proj = np.zeros((null.shape[0], 2 * n_rest))
    proj[:, cmap1] = null[:, of1:of1 + rest1]
    proj[:, cmap2] = null[:, of2:of2 + rest2]
    proj[:, n_rest + cmap1] = null[:, oe1:oe1 + rest1]
    proj[:, n_rest + cmap2] = null[:, oe2:oe2 + rest2]

    k, l = kernel_from_span(proj, tol=tol) if n_rest > 0 else (np.zeros((0, 0)),
                                                               np.zeros((0, 0)))
    d = DiracKernel(k, l, layout)
    if validate and not is_dirac(k, l, tol=max(tol, 1e-12)):
        raise InvalidDiracStructure(
            "interconnection did not produce a Dirac structure; "
            "inputs were likely not Dirac"
        )
    return PHSystem(d, sys1.lagrange_parts + sys2.lagrange_parts,
                    sys1.resistive_parts + sys2.resistive_parts)


def swap_link_roles(sys: PHSystem) -> PHSystem:
    """Exchange flow and effort on the link ports (loop-analysis roles).

    Swapping the link columns of K and L preserves the Dirac property:
    K L^T + L K^T is symmetric under exchanging the pair columnwise.
    """
    link = sys.layout.role_indices("link")
    k = sys.dirac.k_mat.copy()
    l = sys.dirac.l_mat.copy()
    k[:, link], l[:, link] = sys.dirac.l_mat[:, link], sys.dirac.k_mat[:, link]
    return PHSystem(DiracKernel(k, l, sys.layout), sys.lagrange_parts,
                    sys.resistive_parts)


# ---------------------------------------------------------------------------
# residual evaluation
# ---------------------------------------------------------------------------

def ph_residual(sys: PHSystem, t: float, x, xdot, z) -> np.ndarray:
    """Residual of the pH dynamics at one instant.

    ``x``/``xdot`` are the storage states and their rates; ``z`` stacks
    the remaining port variables in layout order:

        z = (e_L, f_R, e_R, f_P, e_P, f_link, e_link)

    The residual stacks (i) the Dirac rows K f + L e with
    f = (-xdot, f_R, f_P, f_link) and e = (e_L, e_R, e_P, e_link),
    (ii) the Lagrange residuals (e_L - grad H(x) for gradient parts,
    S^T x - P^T e_L for subspace parts), and (iii) the resistive
    residuals in their declared form.
    """
    n_l, n_r, n_p, n_link = sys.dims
    x = np.asarray(x, dtype=float).reshape(-1)
    xdot = np.asarray(xdot, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    if x.shape[0] != n_l or xdot.shape[0] != n_l:
        raise ShapeMismatch(f"state must have length {n_l}")
    expected = n_l + 2 * n_r + 2 * n_p + 2 * n_link
    if z.shape[0] != expected:
        raise ShapeMismatch(f"z must have length {expected}, got {z.shape[0]}")

    e_l, off = z[:n_l], n_l
    f_r, off = z[off:off + n_r], off + n_r
    e_r, off = z[off:off + n_r], off + n_r
    f_p, off = z[off:off + n_p], off + n_p
    e_p, off = z[off:off + n_p], off + n_p
    f_link, off = z[off:off + n_link], off + n_link
    e_link = z[off:off + n_link]

    f = np.empty(sys.layout.dim)
    e = np.empty(sys.layout.dim)
    f[sys.layout.role_indices("storage")] = -xdot
    f[sys.layout.role_indices("resistive")] = f_r
    f[sys.layout.role_indices("external")] = f_p
    f[sys.layout.role_indices("link")] = f_link
    e[sys.layout.role_indices("storage")] = e_l
    e[sys.layout.role_indices("resistive")] = e_r
    e[sys.layout.role_indices("external")] = e_p
    e[sys.layout.role_indices("link")] = e_link

    pieces = [sys.dirac.residual(f, e)]
    off = 0
    for part in sys.lagrange_parts:
        sl = slice(off, off + part.dim)
        pieces.append(np.asarray(part.residual(x[sl], e_l[sl]), float).reshape(-1))
        off += part.dim
    off = 0
    for part in sys.resistive_parts:
        sl = slice(off, off + part.dim)
        pieces.append(part.residual(f_r[sl], e_r[sl]))
        off += part.dim
    return np.concatenate(pieces) if pieces else np.zeros(0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def dirac_to_json(d: DiracKernel) -> str:
    doc = {
        "n": d.dim,
        "K": d.k_mat.tolist(),
        "L": d.l_mat.tolist(),
        "layout": [{"role": b.role, "name": b.name, "size": b.size}
                   for b in d.layout.blocks],
    }
    return json.dumps(doc)


def dirac_from_json(text: str) -> DiracKernel:
    doc = json.loads(text)
    layout = PortLayout(tuple(PortBlock(b["role"], b["name"], b["size"])
                              for b in doc["layout"]))
    return DiracKernel(np.array(doc["K"], dtype=float),
                       np.array(doc["L"], dtype=float), layout)


def lagrange_to_json(lag: LinearLagrange) -> str:
    return json.dumps({"n": lag.dim, "S": lag.s_mat.tolist(), "P": lag.p_mat.tolist()})


def lagrange_from_json(text: str) -> LinearLagrange:
    doc = json.loads(text)
    return LinearLagrange(np.array(doc["S"], dtype=float), np.array(doc["P"], dtype=float))
