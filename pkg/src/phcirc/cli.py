"""Command-line front end: check, assemble, mna, mla, simulate, verify.

Batch-only.  Exit codes: 0 success, 1 failure (with a JSON diagnostic on
stderr), 2 usage errors.  PHCIRC_LOG in {error, info, debug} controls
logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .assembly import assemble, circuit_blocks, emit_json, to_mla, to_mna, to_mna_cf
from .errors import PhcircError
from .netlist import lint, parse
from .solver import (
    IntegratorConfig,
    consistent_initial_state,
    energy_audit,
    simulate,
    trajectory_to_csv,
)
from .verify import run_suites

log = logging.getLogger("phcirc")


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write(text: str, path: str | None):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="phcirc",
                                  description="port-Hamiltonian circuit compiler")
    top.add_argument("--version", action="version", version=f"phcirc {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    def add_common(p, output=True):
        p.add_argument("netlist", help="path to a .cir netlist")
        if output:
            p.add_argument("-o", "--output", default=None, help="output file (default stdout)")

    p_check = sub.add_parser("check", help="parse and lint a netlist")
    add_common(p_check)

    p_asm = sub.add_parser("assemble", help="emit the assembled structure")
    add_common(p_asm)
    p_asm.add_argument("--emit", choices=["json"], default="json")

    for name, help_text in (("mna", "modified nodal analysis blocks"),
                            ("mla", "modified loop analysis blocks")):
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        if name == "mna":
            p.add_argument("--form", choices=["cf", "potential"], default="cf")

    p_sim = sub.add_parser("simulate", help="transient simulation to CSV")
    add_common(p_sim)
    p_sim.add_argument("--dt", type=float, default=None)
    p_sim.add_argument("--tstop", type=float, default=None)
    p_sim.add_argument("--method", choices=["backward_euler", "trapezoidal"],
                       default="backward_euler")
    p_sim.add_argument("--start", choices=["dc", "zero"], default="dc",
                       help="initial state: DC operating point or zero storage")
    p_sim.add_argument("--format", choices=["csv"], default="csv")

    p_ver = sub.add_parser("verify", help="run the invariant suites")
    add_common(p_ver, output=False)
    p_ver.add_argument("--seed", type=int, default=0)
    return top


def _cmd_check(args) -> int:
    report = lint(_read(args.netlist))
    _write(json.dumps(report) + "\n", args.output)
    return 0 if not report["errors"] else 1


def _cmd_assemble(args) -> int:
    assembled = assemble(parse(_read(args.netlist)))
    _write(emit_json(assembled) + "\n", args.output)
    return 0


def _cmd_mna(args) -> int:
    blocks = circuit_blocks(parse(_read(args.netlist)))
    mna = to_mna_cf(blocks) if args.form == "cf" else to_mna(blocks)
    doc = {
        "form": mna.form,
        "dim": mna.dim,
        "unknowns": list(mna.unknown_names),
        "blocks": {nm: blocks.a_block(c).tolist()
                   for nm, c in (("A_R", "R"), ("A_L", "L"), ("A_C", "C"),
                                 ("A_I", "I"), ("A_V", "V"))},
    }
    _write(json.dumps(doc) + "\n", args.output)
    return 0


def _cmd_mla(args) -> int:
    blocks = circuit_blocks(parse(_read(args.netlist)))
    mla = to_mla(blocks)
    doc = {
        "dim": mla.dim,
        "unknowns": list(mla.unknown_names),
        "blocks": {nm: blocks.b_block(c).tolist()
                   for nm, c in (("B_R", "R"), ("B_L", "L"), ("B_C", "C"),
                                 ("B_I", "I"), ("B_V", "V"))},
    }
    _write(json.dumps(doc) + "\n", args.output)
    return 0


def _cmd_simulate(args) -> int:
    netlist = parse(_read(args.netlist))
    tran = next((a for a in netlist.analyses if a.kind == "tran"), None)
    tstop = args.tstop if args.tstop is not None else (tran.params[0] if tran else None)
    dt = args.dt if args.dt is not None else (tran.params[1] if tran else None)
    if tstop is None or dt is None:
        raise PhcircError("no .tran directive; pass --tstop and --dt")
    mna = to_mna_cf(circuit_blocks(netlist))
    problem = mna.dae_problem()
    cfg = IntegratorConfig(method=args.method, dt=dt)
    if args.start == "zero":
        y0, yd0 = consistent_initial_state(problem, 0.0)
        traj = simulate(problem, cfg, tstop, x0=y0, xdot0=yd0)
    else:
        traj = simulate(problem, cfg, tstop)
    energy_audit(traj, mna)
    _write(trajectory_to_csv(traj), args.output)
    return 0


def _cmd_verify(args) -> int:
    netlist = parse(_read(args.netlist))
    results = run_suites(netlist, seed=args.seed)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {
    "check": _cmd_check,
    "assemble": _cmd_assemble,
    "mna": _cmd_mna,
    "mla": _cmd_mla,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    level = os.environ.get("PHCIRC_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR))
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PhcircError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("line", "column", "cond_estimate", "witness"):
            val = getattr(exc, attr, None)
            if val is not None:
                diag[attr] = val if not isinstance(val, np.ndarray) else val.tolist()
        sys.stderr.write(json.dumps(diag) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "OSError", "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
