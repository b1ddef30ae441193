"""Invariant suites over a netlist, shared by the CLI and the test suite.

Four suites: structural graph algebra, Dirac-structure checks, pH vs MNA
equivalence, and Kirchhoff/Tellegen plus the energy audit on a short
simulated run.  Each returns a SuiteResult with a pass flag and check
counts; the `verify` command exits 0 iff all suites pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as graphmod
from .assembly import (
    AssembledCircuit,
    assemble,
    kirchhoff_dirac,
    ph_mna_equivalence,
    to_mna_cf,
    trajectory_checks,
)
from .components import standard_dirac
from .netlist import Netlist
from .ph_core import is_dirac, random_members
from .solver import IntegratorConfig, consistent_initial_state, energy_audit, simulate

__all__ = ["SuiteResult", "run_suites", "dirac_member_check"]

MEMBER_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: int
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status} ({self.checks} checks; {self.detail})"


def dirac_member_check(dirac, rng, count: int = 100, tol: float = MEMBER_TOL) -> float:
    """Largest scaled |e^T f| over random members of the structure."""
    worst = 0.0
    for f, e in random_members(dirac, count, rng):
        scale = 1.0 + float(np.linalg.norm(f)) * float(np.linalg.norm(e))
        worst = max(worst, abs(float(e @ f)) / scale)
    return worst


def _structural_suite(assembled: AssembledCircuit) -> SuiteResult:
    g = assembled.blocks.graph
    a0 = graphmod.incidence_matrix(g)
    k = len(graphmod.connected_components(g))
    checks, ok = 0, True
    detail = []
    checks += 1
    if graphmod.integer_rank(a0) != g.n - k:
        ok = False
        detail.append("rank(A0) != n - k")
    b = assembled.blocks.b_full
    checks += 1
    if any(x != 0 for x in np.ravel(a0.astype(object) @ b.T.astype(object))):
        ok = False
        detail.append("A0 B^T != 0")
    checks += 1
    if not graphmod.verify_cutset_cycle_duality(assembled.blocks.a_full, b):
        ok = False
        detail.append("rank(A) + rank(B) != m")
    return SuiteResult("structural", ok, checks, "; ".join(detail) or "graph algebra exact")


def _dirac_suite(assembled: AssembledCircuit, rng) -> SuiteResult:
    checks, worst = 0, 0.0
    ok = True
    for lp in range(1, 5):
        d = standard_dirac(lp)
        checks += 1
        ok &= is_dirac(d.k_mat, d.l_mat, tol=1e-10)
        worst = max(worst, dirac_member_check(d, rng))
    kd = assembled.kirchhoff.system.dirac
    checks += 1
    ok &= is_dirac(kd.k_mat, kd.l_mat, tol=1e-10)
    worst = max(worst, dirac_member_check(kd, rng))
    ad = assembled.system.dirac
    checks += 1
    ok &= is_dirac(ad.k_mat, ad.l_mat, tol=1e-10)
    worst = max(worst, dirac_member_check(ad, rng))
    for _, csys in assembled.component_systems:
        checks += 1
        ok &= is_dirac(csys.dirac.k_mat, csys.dirac.l_mat, tol=1e-10)
    ok &= worst <= MEMBER_TOL
    return SuiteResult("dirac", ok, checks, f"max |e^T f| witness {worst:.2e}")


def _short_run(assembled: AssembledCircuit, max_steps: int = 1000):
    mna = to_mna_cf(assembled.blocks)
    problem = mna.dae_problem()
    tran = next((a for a in assembled.netlist.analyses if a.kind == "tran"), None)
    if tran is not None:
        tstop, dt = tran.params
    else:
        tstop, dt = 1e-3, 1e-6
    steps = min(max_steps, max(10, int(round(tstop / dt))))
    cfg = IntegratorConfig(dt=dt)
    y0, yd0 = consistent_initial_state(problem, 0.0)
    traj = simulate(problem, cfg, t0=0.0, tstop=steps * dt, x0=y0, xdot0=yd0)
    return mna, traj, cfg


def _equivalence_suite(assembled: AssembledCircuit, mna, traj, rng) -> SuiteResult:
    idx = np.linspace(0, len(traj.times) - 1, 20).astype(int)
    points = [(traj.times[i], traj.states[i], traj.rates[i]) for i in idx]
    report = ph_mna_equivalence(assembled, mna, points, rng=rng)
    return SuiteResult("mna_equivalence", report["passed"], len(points),
                       f"max witness {report['max_witness']:.2e}")


def _trajectory_suite(assembled: AssembledCircuit, mna, traj, cfg) -> SuiteResult:
    checks = trajectory_checks(traj, mna)
    audit = energy_audit(traj, mna)
    bound = 10.0 * cfg.dt * float(np.max(np.abs(audit.supplied), initial=0.0)) + 1e-12
    ok = (checks["kcl"] <= 1e-9 and checks["kvl"] <= 1e-9
          and checks["tellegen"] <= 1e-9
          and float(np.min(audit.dissipated)) >= -1e-12
          and audit.max_balance_error <= bound)
    detail = (f"kcl {checks['kcl']:.1e} kvl {checks['kvl']:.1e} "
              f"tellegen {checks['tellegen']:.1e} balance {audit.max_balance_error:.1e}")
    return SuiteResult("trajectory", ok, 5, detail)


def run_suites(netlist: Netlist, seed: int = 0) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    assembled = assemble(netlist)
    results = [_structural_suite(assembled), _dirac_suite(assembled, rng)]
    mna, traj, cfg = _short_run(assembled)
    results.append(_equivalence_suite(assembled, mna, traj, rng))
    results.append(_trajectory_suite(assembled, mna, traj, cfg))
    return results
