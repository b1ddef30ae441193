"""SPICE-like netlist parsing and circuit-graph construction.

Line-oriented grammar, case-insensitive keywords, '*' comment lines,
'+' continuation lines:

    C<name> n+ n-  C=<farads> | H=<expr>
    L<name> n+ n-  L=<henry>  | H=<expr>
    R<name> n+ n-  R=<ohm> | G=<siemens> | law=<expr>
    D<name> n+ n-  [A=<a>] [B=<b>] | ideal
    T<name> n1 n2 n3 n4  ratio=<T>
    Q<name> nC nB nE  [IS=..] [VT=..] [AF=..] [AR=..]
    V<name> n+ n-  DC <v> | SIN(<off>,<ampl>,<freq>[,<phase>])
    I<name> n+ n-  DC <v> | SIN(...)
    .ground <node> [<node> ...]
    .tran <tstop> <dt>
    .op
    .end

Numeric values take the usual engineering suffixes p, n, u, m, k, meg.
Nonlinear laws reference a small built-in expression table: poly(c0,c1,
...) and tanh(a,b); there is no general expression parser.  Edges are
oriented from the first listed node to the second (that choice merely
defines the positive direction of voltage and current); a transformer
contributes edges n1->n2 and n4->n3, a transistor contributes nB->nC and
nB->nE.

The circuit graph is the union of the per-component graphs on disjoint
edge sets.  Node "0" is conventionally ground, but only when listed in
.ground or auto-selected; an explicit .ground always wins.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .components import (
    ComponentModel,
    Hamiltonian,
    ScalarMap,
    TransistorParams,
    Waveform,
)
from .errors import (
    DuplicateName,
    GroundSetViolation,
    LoopEdge,
    NetlistSyntaxError,
    UnknownDirective,
)
from .graph import DirectedGraph, connected_components

__all__ = [
    "Statement",
    "Analysis",
    "Netlist",
    "parse",
    "serialize",
    "build_graph",
    "lint",
    "parse_value",
    "parse_expression",
]

_SUFFIXES = [("meg", 1e6), ("p", 1e-12), ("n", 1e-9), ("u", 1e-6),
             ("m", 1e-3), ("k", 1e3)]

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_value(token: str) -> float:
    """Parse a SPICE-style number with optional engineering suffix."""
    t = token.strip().lower()
    for suf, mult in _SUFFIXES:
        if t.endswith(suf) and _NUMBER_RE.match(t[: -len(suf)] or ""):
            return float(t[: -len(suf)]) * mult
    if _NUMBER_RE.match(t):
        return float(t)
    raise ValueError(f"not a number: {token!r}")


_EXPR_RE = re.compile(r"^(poly|tanh)\(([^()]*)\)$", re.IGNORECASE)


def parse_expression(token: str):
    """Built-in expression table entry: ('poly', coeffs) or ('tanh', (a, b))."""
    m = _EXPR_RE.match(token.strip())
    if not m:
        raise ValueError(f"unknown expression {token!r}; expected poly(...) or tanh(...)")
    name = m.group(1).lower()
    args = tuple(parse_value(a) for a in m.group(2).split(",") if a.strip() != "")
    if name == "tanh" and len(args) != 2:
        raise ValueError("tanh expression takes exactly (a, b)")
    if name == "poly" and not args:
        raise ValueError("poly expression needs at least one coefficient")
    return name, args


def _expression_hamiltonian(token: str) -> Hamiltonian:
    name, args = parse_expression(token)
    if name == "poly":
        return Hamiltonian.from_poly(args, label=_canon_expr(name, args))
    return Hamiltonian.from_tanh(args[0], args[1], label=_canon_expr(name, args))


def _expression_resistance(token: str) -> ScalarMap:
    name, args = parse_expression(token)
    if name == "poly":
        coeffs = [float(c) for c in args]
        deriv_c = [k * coeffs[k] for k in range(1, len(coeffs))]

        def value(x):
            out = np.zeros_like(np.asarray(x, dtype=float))
            for c in reversed(coeffs):
                out = out * x + c
            return out

        def deriv(x):
            out = np.zeros_like(np.asarray(x, dtype=float))
            for c in reversed(deriv_c):
                out = out * x + c
            return float(out) if out.ndim == 0 else out

        return ScalarMap("resistance", value, deriv, spec=f"law={_canon_expr(name, args)}")
    a, b = args

    def t_value(x):
        return a * np.tanh(b * np.asarray(x, dtype=float))

    def t_deriv(x):
        return a * b / np.cosh(b * np.asarray(x, dtype=float)) ** 2

    def t_inverse(u):
        return np.arctanh(np.asarray(u, dtype=float) / a) / b

    return ScalarMap("resistance", t_value, t_deriv, inverse_value=t_inverse,
                     spec=f"law={_canon_expr(name, args)}")


def _canon_expr(name: str, args) -> str:
    return f"{name}({','.join(repr(float(a)) for a in args)})"


# ---------------------------------------------------------------------------
# statements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Statement:
    """One canonicalized netlist statement (component card or directive)."""

    kind: str                 # "component" | "directive"
    fields: tuple[str, ...]   # canonical tokens, re-emitted verbatim
    line: int = 0

    def text(self) -> str:
        return " ".join(self.fields)

    def __eq__(self, other):
        return isinstance(other, Statement) and self.kind == other.kind \
            and self.fields == other.fields

    def __hash__(self):
        return hash((self.kind, self.fields))


@dataclass(frozen=True)
class Analysis:
    kind: str                 # "tran" | "op"
    params: tuple[float, ...] = ()


@dataclass(frozen=True)
class Netlist:
    title: str
    statements: tuple[Statement, ...]
    components: tuple[ComponentModel, ...]
    grounds: tuple[str, ...]
    analyses: tuple[Analysis, ...]

    def component(self, name: str) -> ComponentModel:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def nodes(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for c in self.components:
            for a, b in c.edge_pairs():
                seen.setdefault(a)
                seen.setdefault(b)
        return tuple(seen)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _logical_lines(text: str):
    """Join '+' continuations; yield (line_number, content) skipping comments."""
    pending: tuple[int, str] | None = None
    first_comment: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("*"):
            if first_comment is None and lineno == 1:
                first_comment = stripped.lstrip("*").strip()
            continue
        if stripped.startswith("+"):
            if pending is None:
                raise NetlistSyntaxError("continuation line without a statement",
                                         line=lineno, column=1)
            pending = (pending[0], pending[1] + " " + stripped[1:].strip())
            continue
        if pending is not None:
            yield pending
        pending = (lineno, stripped)
    if pending is not None:
        yield pending
    yield (-1, first_comment or "")  # sentinel carrying the title


def parse(text: str) -> Netlist:
    """Parse netlist text into components, ground set and analyses."""
    statements: list[Statement] = []
    components: list[ComponentModel] = []
    grounds: list[str] = []
    analyses: list[Analysis] = []
    names: set[str] = set()
    title = ""
    ended = False

    for lineno, content in _logical_lines(text):
        if lineno == -1:
            title = content
            break
        if ended:
            continue
        tokens = content.split()
        head = tokens[0]
        if head.startswith("."):
            directive = head.lower()
            if directive == ".end":
                statements.append(Statement("directive", (".end",), lineno))
                ended = True
            elif directive == ".ground":
                if len(tokens) < 2:
                    raise NetlistSyntaxError(".ground needs at least one node",
                                             line=lineno, column=len(head) + 1)
                grounds.extend(tokens[1:])
                statements.append(Statement("directive", (".ground", *tokens[1:]), lineno))
            elif directive == ".tran":
                if len(tokens) != 3:
                    raise NetlistSyntaxError(".tran takes <tstop> <dt>", line=lineno)
                try:
                    tstop, dt = parse_value(tokens[1]), parse_value(tokens[2])
                except ValueError as exc:
                    raise NetlistSyntaxError(str(exc), line=lineno) from exc
                analyses.append(Analysis("tran", (tstop, dt)))
                statements.append(Statement("directive",
                                            (".tran", repr(tstop), repr(dt)), lineno))
            elif directive == ".op":
                analyses.append(Analysis("op"))
                statements.append(Statement("directive", (".op",), lineno))
            else:
                raise UnknownDirective(f"line {lineno}: unknown directive {head!r}")
            continue

        letter = head[0].upper()
        if letter not in "CLRDTQVI":
            raise NetlistSyntaxError(f"unknown component card {head!r}",
                                     line=lineno, column=1)
        name = head
        if name in names:
            raise DuplicateName(f"line {lineno}: component {name!r} already defined")
        names.add(name)
        try:
            comp, canon = _parse_component(letter, name, tokens[1:], lineno)
        except (ValueError, KeyError) as exc:
            raise NetlistSyntaxError(str(exc), line=lineno) from exc
        for a, b in comp.edge_pairs():
            if a == b:
                raise LoopEdge(
                    f"line {lineno}: component {name!r} would create a self-loop at "
                    f"node {a!r}"
                )
        components.append(comp)
        statements.append(Statement("component", (name, *canon), lineno))

    node_set = set()
    for c in components:
        node_set.update(c.nodes)
    for g in grounds:
        if g not in node_set:
            raise NetlistSyntaxError(f"ground node {g!r} is not used by any component",
                                     line=0)
    return Netlist(title, tuple(statements), tuple(components), tuple(grounds),
                   tuple(analyses))


def _keyed(tokens: Iterable[str]) -> dict[str, str]:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise ValueError(f"expected key=value, got {t!r}")
        k, v = t.split("=", 1)
        out[k.lower()] = v
    return out


def _parse_waveform(tokens: list[str]):
    if not tokens:
        raise ValueError("source needs DC <v> or SIN(...)")
    head = tokens[0].upper()
    if head == "DC":
        if len(tokens) != 2:
            raise ValueError("DC takes exactly one value")
        v = parse_value(tokens[1])
        return Waveform.dc(v), ("DC", repr(v))
    if head.startswith("SIN(") and len(tokens) == 1:
        inner = tokens[0][4:]
        if not inner.endswith(")"):
            raise ValueError(f"malformed SIN waveform {tokens[0]!r}")
        args = [parse_value(a) for a in inner[:-1].split(",")]
        if len(args) not in (3, 4):
            raise ValueError("SIN takes (offset, amplitude, freq[, phase])")
        wave = Waveform.sin(*args)
        canon = f"SIN({','.join(repr(float(a)) for a in wave.params)})"
        return wave, (canon,)
    raise ValueError(f"unknown source specification {' '.join(tokens)!r}")


def _parse_component(letter: str, name: str, rest: list[str], lineno: int):
    """Returns (ComponentModel, canonical tokens after the name)."""
    if letter in "CLRDVI":
        if len(rest) < 2:
            raise ValueError(f"{name}: needs two nodes")
        nodes = (rest[0], rest[1])
        tail = rest[2:]
    elif letter == "T":
        if len(rest) < 4:
            raise ValueError(f"{name}: transformer needs four nodes")
        nodes = tuple(rest[:4])
        tail = rest[4:]
    else:  # Q
        if len(rest) < 3:
            raise ValueError(f"{name}: transistor needs three nodes")
        nodes = tuple(rest[:3])
        tail = rest[3:]

    if letter in ("C", "L"):
        kv = _keyed(tail)
        if len(kv) != 1:
            raise ValueError(f"{name}: give exactly one of {letter}= or H=")
        if letter.lower() in kv:
            val = parse_value(kv[letter.lower()])
            ham = Hamiltonian.quadratic(val)
            canon = (*nodes, f"{letter}={val!r}")
            params = {letter.lower(): val}
        elif "h" in kv:
            ham = _expression_hamiltonian(kv["h"])
            canon = (*nodes, f"H={ham.label}")
            params = {"h": ham.label}
        else:
            raise ValueError(f"{name}: give {letter}=<value> or H=<expr>")
        kind = "capacitor" if letter == "C" else "inductor"
        return ComponentModel(kind, name, params, nodes, hamiltonian=ham), canon

    if letter == "R":
        kv = _keyed(tail)
        if len(kv) != 1:
            raise ValueError(f"{name}: give exactly one of R=, G= or law=")
        if "r" in kv:
            val = parse_value(kv["r"])
            law = ScalarMap.linear_resistance(val)
            return (ComponentModel("resistance", name, {"r": val}, nodes,
                                   resistive_map=law),
                    (*nodes, f"R={val!r}"))
        if "g" in kv:
            val = parse_value(kv["g"])
            law = ScalarMap.linear_conductance(val)
            return (ComponentModel("conductance", name, {"g": val}, nodes,
                                   resistive_map=law),
                    (*nodes, f"G={val!r}"))
        if "law" in kv:
            law = _expression_resistance(kv["law"])
            return (ComponentModel("resistance", name, {"law": law.spec[4:]}, nodes,
                                   resistive_map=law),
                    (*nodes, law.spec))
        raise ValueError(f"{name}: give R=, G= or law=")

    if letter == "D":
        if len(tail) == 1 and tail[0].lower() == "ideal":
            # spec-mandated regularization of the exact complementarity relation
            params = {"a": 1e-12, "b": 1e-3, "ideal": True}
            return (ComponentModel("ideal_diode", name, params, nodes),
                    (*nodes, "ideal"))
        kv = _keyed(tail)
        extra = set(kv) - {"a", "b"}
        if extra:
            raise ValueError(f"{name}: unknown diode parameters {sorted(extra)}")
        a = parse_value(kv["a"]) if "a" in kv else 1e-12
        b = parse_value(kv["b"]) if "b" in kv else 0.025
        return (ComponentModel("pn_diode", name, {"a": a, "b": b}, nodes),
                (*nodes, f"A={a!r}", f"B={b!r}"))

    if letter == "T":
        kv = _keyed(tail)
        if set(kv) != {"ratio"}:
            raise ValueError(f"{name}: transformer takes ratio=<T>")
        t = parse_value(kv["ratio"])
        return (ComponentModel("transformer", name, {"ratio": t}, nodes),
                (*nodes, f"ratio={t!r}"))

    if letter == "Q":
        kv = _keyed(tail)
        extra = set(kv) - {"is", "vt", "af", "ar"}
        if extra:
            raise ValueError(f"{name}: unknown transistor parameters {sorted(extra)}")
        p = TransistorParams(
            alpha_f=parse_value(kv["af"]) if "af" in kv else 0.99,
            alpha_r=parse_value(kv["ar"]) if "ar" in kv else 0.5,
            i_s=parse_value(kv["is"]) if "is" in kv else 1e-14,
            v_t=parse_value(kv["vt"]) if "vt" in kv else 0.025,
        )
        params = {"is": p.i_s, "vt": p.v_t, "af": p.alpha_f, "ar": p.alpha_r}
        canon = (*nodes, f"IS={p.i_s!r}", f"VT={p.v_t!r}", f"AF={p.alpha_f!r}",
                 f"AR={p.alpha_r!r}")
        return ComponentModel("npn_transistor", name, params, nodes, transistor=p), canon

    # V / I
    wave, canon_wave = _parse_waveform(tail)
    kind = "source_voltage" if letter == "V" else "source_current"
    params = {"waveform": canon_wave[0] if len(canon_wave) == 1
              else f"{canon_wave[0]} {canon_wave[1]}"}
    return (ComponentModel(kind, name, params, nodes, waveform=wave),
            (*nodes, *canon_wave))


def serialize(netlist: Netlist) -> str:
    """Canonical re-emission; parsing it back yields the same statements."""
    lines = []
    if netlist.title:
        lines.append(f"* {netlist.title}")
    lines.extend(st.text() for st in netlist.statements)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

def _node_sort_key(name: str):
    try:
        return (0, float(name), name)
    except ValueError:
        return (1, 0.0, name)


def build_graph(netlist: Netlist):
    """Union circuit graph, ground set, and component -> edge-ids map.

    Every connected component of the graph must carry exactly one ground;
    missing ones are auto-grounded at their lowest node id (with a
    warning), conflicting explicit grounds raise GroundSetViolation.
    """
    triples = []
    edge_map: dict[str, tuple[str, ...]] = {}
    for comp in netlist.components:
        ids = comp.edge_ids()
        for eid, (a, b) in zip(ids, comp.edge_pairs()):
            triples.append((eid, a, b))
        edge_map[comp.name] = ids
    g = DirectedGraph.from_edges(triples)

    comps = connected_components(g)
    chosen: dict[int, str] = {}
    comp_of = {v: i for i, cls in enumerate(comps) for v in cls}
    for node in netlist.grounds:
        i = comp_of[node]
        if i in chosen and chosen[i] != node:
            raise GroundSetViolation(
                f"grounds {chosen[i]!r} and {node!r} lie in the same connected component"
            )
        chosen[i] = node
    for i, cls in enumerate(comps):
        if i not in chosen:
            auto = sorted(cls, key=_node_sort_key)[0]
            chosen[i] = auto
            warnings.warn(
                f"no ground in component {{{', '.join(cls)}}}; auto-grounding {auto!r}",
                stacklevel=2,
            )
    grounds = tuple(v for v in g.vertices if v in set(chosen.values()))
    return g, grounds, edge_map


def lint(text: str) -> dict:
    """Lint report for the `check` command: errors, warnings, graph sizes."""
    report = {"errors": [], "warnings": [], "graph": None}
    try:
        netlist = parse(text)
    except Exception as exc:  # noqa: BLE001 - every parse failure becomes a report entry
        report["errors"].append({"type": type(exc).__name__, "message": str(exc),
                                 "line": getattr(exc, "line", None)})
        return report
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            g, grounds, _ = build_graph(netlist)
        report["warnings"].extend(str(w.message) for w in caught)
        k = len(connected_components(g))
        report["graph"] = {"n": g.n, "m": g.m, "k": k,
                           "grounds": list(grounds)}
    except Exception as exc:  # noqa: BLE001
        report["errors"].append({"type": type(exc).__name__, "message": str(exc),
                                 "line": getattr(exc, "line", None)})
    if not any(a.kind == "tran" for a in netlist.analyses):
        report["warnings"].append("no .tran directive; simulate needs --tstop/--dt")
    return report
