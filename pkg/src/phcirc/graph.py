"""Directed multigraphs of circuits and their structural matrices.

A circuit graph is a finite, loop-free directed multigraph.  From it we
derive the incidence matrix, reduced incidence matrices for a chosen
ground set, spanning forests, and fundamental cycle matrices.  All
structural matrices are integer valued; ranks at this level are computed
exactly over the rationals (fraction-free elimination), never with a
floating tolerance.

Conventions, fixed once and used everywhere downstream:

* vertex order and edge order are insertion order;
* incidence entry (j, k) is +1 if edge k starts at vertex j, -1 if it
  ends there, 0 otherwise;
* each fundamental cycle is oriented like its chord, and the chord's own
  column carries +1.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import GroundSetViolation, LoopEdge, NotAForest

__all__ = [
    "DirectedGraph",
    "incidence_matrix",
    "connected_components",
    "reduced_incidence",
    "spanning_forest",
    "fundamental_cycle_matrix",
    "verify_cutset_cycle_duality",
    "integer_rank",
    "to_dense_csv",
    "to_coordinate_triplets",
]


class _DisjointSet:
    """Union-find over hashable items, path compression + union by size."""

    def __init__(self, items: Iterable = ()):
        self._parent = {}
        self._size = {}
        for it in items:
            self.add(it)

    def add(self, item):
        if item not in self._parent:
            self._parent[item] = item
            self._size[item] = 1

    def find(self, item):
        root = item
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[item] != root:
            self._parent[item], item = root, self._parent[item]
        return root

    def union(self, a, b) -> bool:
        """Merge the classes of a and b; False if already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        return True


@dataclass(frozen=True)
class DirectedGraph:
    """Finite loop-free directed multigraph with ordered, named vertices/edges.

    ``init`` and ``ter`` map each edge id to its initial/terminal vertex.
    Parallel edges and multiple connected components are allowed;
    self-loops are rejected at construction.
    """

    vertices: tuple[str, ...]
    edges: tuple[str, ...]
    init: Mapping[str, str]
    ter: Mapping[str, str]

    def __post_init__(self):
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError("duplicate vertex ids")
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate edge ids")
        vset = set(self.vertices)
        for e in self.edges:
            if e not in self.init or e not in self.ter:
                raise ValueError(f"edge {e!r} missing init/ter assignment")
            if self.init[e] not in vset or self.ter[e] not in vset:
                raise ValueError(f"edge {e!r} references unknown vertex")
            if self.init[e] == self.ter[e]:
                raise LoopEdge(f"edge {e!r} is a self-loop at {self.init[e]!r}")

    @classmethod
    def from_edges(
        cls,
        edge_list: Sequence[tuple[str, str, str]],
        extra_vertices: Sequence[str] = (),
    ) -> "DirectedGraph":
        """Build a graph from (edge_id, init_vertex, ter_vertex) triples.

        Vertex order is first appearance in the triples, followed by any
        ``extra_vertices`` (isolated ones).
        """
        vertices: list[str] = []
        seen = set()
        init, ter = {}, {}
        edges = []
        for eid, a, b in edge_list:
            for v in (a, b):
                if v not in seen:
                    seen.add(v)
                    vertices.append(v)
            edges.append(eid)
            init[eid] = a
            ter[eid] = b
        for v in extra_vertices:
            if v not in seen:
                seen.add(v)
                vertices.append(v)
        return cls(tuple(vertices), tuple(edges), init, ter)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def m(self) -> int:
        return len(self.edges)

    def vertex_index(self, v: str) -> int:
        return self.vertices.index(v)

    def edge_index(self, e: str) -> int:
        return self.edges.index(e)


def incidence_matrix(g: DirectedGraph) -> np.ndarray:
    """Incidence matrix A0 of ``g`` (n x m, integer entries in {-1, 0, 1}).

    Row order is the vertex order, column order the edge order.  Entry
    (j, k) is +1 iff edge k starts at vertex j and -1 iff it ends there.
    """
    vindex = {v: i for i, v in enumerate(g.vertices)}
    a0 = np.zeros((g.n, g.m), dtype=np.int64)
    for k, e in enumerate(g.edges):
        a0[vindex[g.init[e]], k] = 1
        a0[vindex[g.ter[e]], k] = -1
    return a0


def connected_components(g: DirectedGraph) -> list[list[str]]:
    """Partition of the vertices into connected components.

    Edge directions are ignored: paths may traverse reversed edges.
    Components are listed in order of their first vertex, vertices in
    insertion order within each class.
    """
    ds = _DisjointSet(g.vertices)
    for e in g.edges:
        ds.union(g.init[e], g.ter[e])
    groups: dict[str, list[str]] = {}
    for v in g.vertices:
        groups.setdefault(ds.find(v), []).append(v)
    return list(groups.values())


def _component_labels_from_matrix(a0: np.ndarray) -> np.ndarray:
    """Component label per row of an incidence matrix (via shared columns)."""
    n = a0.shape[0]
    ds = _DisjointSet(range(n))
    for k in range(a0.shape[1]):
        rows = np.flatnonzero(a0[:, k])
        for r in rows[1:]:
            ds.union(int(rows[0]), int(r))
    return np.array([ds.find(i) for i in range(n)])


def reduced_incidence(a0: np.ndarray, ground_rows: Sequence[int]) -> np.ndarray:
    """Delete the rows of ``a0`` listed in ``ground_rows``.

    ``ground_rows`` must contain at most one row per connected component
    (components are recovered from the matrix itself); otherwise
    GroundSetViolation is raised.  Remaining row order is preserved.  If
    every component contributes one grounded row, the result has full row
    rank n - k.
    """
    a0 = np.asarray(a0)
    ground = list(ground_rows)
    if len(set(ground)) != len(ground):
        raise GroundSetViolation("duplicate grounded vertex")
    labels = _component_labels_from_matrix(a0)
    seen: dict[int, int] = {}
    for r in ground:
        lab = labels[r]
        if lab in seen:
            raise GroundSetViolation(
                f"grounded rows {seen[lab]} and {r} lie in the same component"
            )
        seen[lab] = r
    keep = [i for i in range(a0.shape[0]) if i not in set(ground)]
    return a0[keep, :]


def spanning_forest(g: DirectedGraph) -> tuple[str, ...]:
    """Greedy spanning forest: scan edges in order, keep each edge that
    does not close a cycle.  Deterministic given the input ordering, which
    makes every derived cycle matrix reproducible across runs."""
    ds = _DisjointSet(g.vertices)
    kept = []
    for e in g.edges:
        if ds.union(g.init[e], g.ter[e]):
            kept.append(e)
    return tuple(kept)


def _forest_adjacency(g: DirectedGraph, forest: Sequence[str]):
    adj: dict[str, list[tuple[str, str, int]]] = {v: [] for v in g.vertices}
    for e in forest:
        a, b = g.init[e], g.ter[e]
        adj[a].append((b, e, +1))   # traversing e forward
        adj[b].append((a, e, -1))   # traversing e reversed
    return adj


def fundamental_cycle_matrix(g: DirectedGraph, forest: Sequence[str]) -> np.ndarray:
    """Fundamental cycle matrix B ((m-n+k) x m) for the given spanning forest.

    One row per chord, rows in chord (edge) order.  Each cycle is the
    chord plus the unique forest path from its terminal back to its
    initial vertex; the cycle carries the chord's orientation, so the
    chord's own entry is +1 and forest edges get +1/-1 as the path
    traverses them forward/backward.  Rows of B satisfy A0 B^T = 0
    exactly in integer arithmetic.
    """
    forest = list(forest)
    fset = set(forest)
    if len(fset) != len(forest):
        raise NotAForest("forest contains repeated edges")
    if not fset.issubset(set(g.edges)):
        raise NotAForest("forest contains edges not in the graph")
    ds = _DisjointSet(g.vertices)
    for e in forest:
        if not ds.union(g.init[e], g.ter[e]):
            raise NotAForest(f"edge {e!r} closes a cycle inside the forest")
    k = len(connected_components(g))
    if len(forest) != g.n - k:
        raise NotAForest(
            f"forest has {len(forest)} edges, a maximal acyclic subgraph has {g.n - k}"
        )

    adj = _forest_adjacency(g, forest)
    eindex = {e: j for j, e in enumerate(g.edges)}
    chords = [e for e in g.edges if e not in fset]
    b = np.zeros((len(chords), g.m), dtype=np.int64)

    for row, chord in enumerate(chords):
        start, goal = g.ter[chord], g.init[chord]
        # BFS through the forest from ter(chord) to init(chord)
        prev: dict[str, tuple[str, str, int]] = {}
        frontier = [start]
        visited = {start}
        while frontier and goal not in visited:
            nxt = []
            for v in frontier:
                for w, e, sign in adj[v]:
                    if w not in visited:
                        visited.add(w)
                        prev[w] = (v, e, sign)
                        nxt.append(w)
            frontier = nxt
        if goal not in visited:
            raise NotAForest(
                f"chord {chord!r} connects vertices in different forest trees"
            )
        b[row, eindex[chord]] = 1
        v = goal
        while v != start:
            v, e, sign = prev[v]
            b[row, eindex[e]] = sign
    return b


def integer_rank(mat: np.ndarray) -> int:
    """Exact rank of an integer (or rational) matrix.

    Fraction-free Gaussian elimination (Bareiss) over Python integers;
    Fractions are cleared by their common denominator first.
    """
    a = np.asarray(mat)
    if a.size == 0:
        return 0
    rows: list[list[int]]
    if np.issubdtype(a.dtype, np.integer):
        rows = [[int(x) for x in r] for r in a]
    elif a.dtype == object:
        fracs = [[Fraction(x) for x in r] for r in a]
        denom = 1
        for r in fracs:
            for x in r:
                denom = denom * x.denominator // _gcd(denom, x.denominator)
        rows = [[int(x * denom) for x in r] for r in fracs]
    else:
        if not np.all(a == np.round(a)):
            raise ValueError("integer_rank requires integer or rational entries")
        rows = [[int(round(x)) for x in r] for r in a]

    nrow, ncol = len(rows), len(rows[0])
    rank = 0
    prev_pivot = 1
    r = 0
    for c in range(ncol):
        pivot_row = next((i for i in range(r, nrow) if rows[i][c] != 0), None)
        if pivot_row is None:
            continue
        rows[r], rows[pivot_row] = rows[pivot_row], rows[r]
        for i in range(r + 1, nrow):
            for j in range(c + 1, ncol):
                rows[i][j] = (rows[r][c] * rows[i][j] - rows[i][c] * rows[r][j]) // prev_pivot
            rows[i][c] = 0
        prev_pivot = rows[r][c]
        r += 1
        rank += 1
        if r == nrow:
            break
    return rank


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def verify_cutset_cycle_duality(a: np.ndarray, b: np.ndarray, tol: float = 0.0) -> bool:
    """Check that reduced incidence ``a`` and cycle matrix ``b`` are dual.

    True iff a b^T = 0 (exactly, for integer inputs; within ``tol``
    otherwise) and rank(a) + rank(b) = m, i.e. the rows of b span the
    null space of a.  Requires a ground set covering every component so
    that a has full row rank.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[1]:
        return False
    m = a.shape[1]
    if m == 0:
        return True
    integral = np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer)
    prod = a.astype(object) @ b.T.astype(object) if integral else a @ b.T
    if integral:
        if any(x != 0 for x in np.ravel(prod)):
            return False
    elif np.max(np.abs(prod)) > tol:
        return False
    return integer_rank(a) + integer_rank(b) == m


# -- matrix export ------------------------------------------------------------

def to_dense_csv(mat: np.ndarray) -> str:
    """Dense CSV text of a matrix, one row per line."""
    mat = np.asarray(mat)
    buf = io.StringIO()
    for row in np.atleast_2d(mat):
        buf.write(",".join(_fmt_entry(x) for x in row))
        buf.write("\n")
    return buf.getvalue()


def to_coordinate_triplets(mat: np.ndarray) -> str:
    """Coordinate-triplet text: 'row col value', one nonzero per line."""
    mat = np.atleast_2d(np.asarray(mat))
    lines = []
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            if mat[i, j] != 0:
                lines.append(f"{i} {j} {_fmt_entry(mat[i, j])}")
    return "\n".join(lines) + ("\n" if lines else "")


def _fmt_entry(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    xf = float(x)
    if xf == int(xf) and abs(xf) < 1e15:
        return str(int(xf))
    return repr(xf)
