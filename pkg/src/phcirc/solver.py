"""Implicit DAE integration with Newton iterations and an energy audit.

Fixed-step backward Euler and trapezoidal rules on residual-form DAEs
F(t, y, y') = 0.  Newton uses analytic Jacobians where the problem
registers them, forward differences otherwise; residual rows are scaled
by max(1, |row|) at the initial point to balance potentials against
currents.  Convergence failures halve the step (at most ten times)
before giving up.  Adaptive stepping beyond that is deliberately absent:
fixed steps keep acceptance numbers reproducible.

Every accepted step records the named observables plus the energy-audit
ledger: stored energy H, supplied port power P_S, dissipated power D,
and the cumulative balance error H(t) - H(0) - integral(P_S - D) with
quadrature matching the integrator (rectangle for backward Euler,
trapezoid for trapezoidal).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NewtonDivergence, SingularJacobian

__all__ = [
    "DaeProblem",
    "IntegratorConfig",
    "Trajectory",
    "AuditReport",
    "dc_operating_point",
    "consistent_initial_state",
    "step",
    "simulate",
    "energy_audit",
    "trajectory_to_csv",
]


@dataclass
class DaeProblem:
    """Residual-form DAE F(t, y, y') = 0 with observables.

    ``diff_mask`` marks the coordinates whose rates appear in F;
    ``jacobian(t, y, yd, alpha)`` must return dF/dy + alpha * dF/dy'
    (None selects finite differences).  ``observables`` maps a solution
    point to named scalars recorded along trajectories.
    """

    residual: Callable
    dim: int
    diff_mask: np.ndarray
    jacobian: Callable | None = None
    observables: Callable | None = None
    observable_names: tuple[str, ...] = ()

    def jac(self, t, y, ydot, alpha):
        if self.jacobian is not None:
            try:
                return self.jacobian(t, y, ydot, alpha)
            except NotImplementedError:
                pass
        return self._fd_jac(t, y, ydot, alpha)

    def _fd_jac(self, t, y, ydot, alpha):
        f0 = self.residual(t, y, ydot)
        jac = np.empty((f0.shape[0], self.dim))
        for j in range(self.dim):
            h = 1e-8 * max(1.0, abs(y[j]))
            yp = y.copy()
            yp[j] += h
            col = (self.residual(t, yp, ydot) - f0) / h
            if alpha != 0.0 and self.diff_mask[j]:
                hd = 1e-8 * max(1.0, abs(ydot[j]))
                yd = ydot.copy()
                yd[j] += hd
                col = col + alpha * (self.residual(t, y, yd) - f0) / hd
            jac[:, j] = col
        return jac


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "backward_euler"          # or "trapezoidal"
    dt: float = 1e-6
    newton_tol: float = 1e-10               # absolute, on the scaled residual
    max_newton: int = 25

    def __post_init__(self):
        if self.method not in ("backward_euler", "trapezoidal"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.dt <= 0 or self.newton_tol <= 0:
            raise ValueError("dt and newton_tol must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    rates: np.ndarray
    observables: dict
    newton_iterations: np.ndarray
    method: str
    audit: "AuditReport | None" = None


@dataclass
class AuditReport:
    stored: np.ndarray        # H(t)
    supplied: np.ndarray      # P_S(t), power delivered into the network
    dissipated: np.ndarray    # D(t) >= 0 for resistive relations
    balance_error: np.ndarray

    @property
    def max_balance_error(self) -> float:
        return float(np.max(np.abs(self.balance_error)))


# ---------------------------------------------------------------------------
# Newton cores
# ---------------------------------------------------------------------------

def _row_scales(problem: DaeProblem, t, y, ydot) -> np.ndarray:
    jac = problem.jac(t, y, ydot, 0.0)
    norms = np.max(np.abs(jac), axis=1)
    return np.maximum(1.0, norms)


def _solve(jac: np.ndarray, rhs: np.ndarray):
    try:
        sol = np.linalg.solve(jac, rhs)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(jac)) if np.all(np.isfinite(jac)) else float("inf")
        raise SingularJacobian(f"Jacobian solve failed: {exc}",
                               cond_estimate=cond) from exc
    if not np.all(np.isfinite(sol)):
        cond = float(np.linalg.cond(jac)) if np.all(np.isfinite(jac)) else float("inf")
        raise SingularJacobian(
            f"Jacobian is numerically singular (cond ~ {cond:.3e})",
            cond_estimate=cond,
        )
    return sol


def _newton(residual_fn, jac_fn, y0, scales, tol, max_iter, damped):
    """Scaled, optionally Armijo-damped Newton; returns (y, iterations).

    After the scaled residual passes ``tol`` one extra polish step is
    taken unless it is already at machine level, so accepted points sit
    far below the stopping tolerance (linear problems converge in a
    single iteration and skip the polish).
    """
    y = y0.copy()
    f = residual_fn(y)
    iterates = [y.copy()]
    norm = float(np.max(np.abs(f / scales)))
    its = 0
    polish_threshold = 0.01 * tol
    while its < max_iter:
        if norm <= tol:
            # polish: drive the residual to machine level so that per-step
            # conservation checks sit far below the stopping tolerance
            for _ in range(2):
                if norm <= polish_threshold:
                    break
                jac = jac_fn(y)
                dy = _solve(jac, -f)
                y_new = y + dy
                f_new = residual_fn(y_new)
                norm_new = float(np.max(np.abs(f_new / scales)))
                if not (norm_new < norm):
                    break
                y, f, norm = y_new, f_new, norm_new
                its += 1
            return y, its
        jac = jac_fn(y)
        dy = _solve(jac, -f)
        if damped:
            lam = 1.0
            base = norm
            while lam >= 2.0 ** -20:
                y_new = y + lam * dy
                f_new = residual_fn(y_new)
                norm_new = float(np.max(np.abs(f_new / scales)))
                if np.isfinite(norm_new) and norm_new < (1.0 - 1e-4 * lam) * base:
                    break
                lam *= 0.5
            else:
                raise NewtonDivergence(
                    f"damped Newton stalled at residual {norm:.3e}", iterates=iterates)
            y, f, norm = y_new, f_new, norm_new
        else:
            y = y + dy
            f = residual_fn(y)
            norm = float(np.max(np.abs(f / scales)))
            if not np.isfinite(norm):
                raise NewtonDivergence("Newton produced non-finite residual",
                                       iterates=iterates)
        iterates.append(y.copy())
        its += 1
    if norm <= tol:
        return y, its
    raise NewtonDivergence(
        f"no convergence in {max_iter} iterations (residual {norm:.3e})",
        iterates=iterates,
    )


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def dc_operating_point(problem: DaeProblem, guess: np.ndarray | None = None,
                       newton_tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Solve F(0, x, 0) = 0 by damped Newton (Armijo halving, min step 2^-20)."""
    y0 = np.zeros(problem.dim) if guess is None else np.asarray(guess, float).copy()
    zeros = np.zeros(problem.dim)
    scales = _row_scales(problem, 0.0, y0, zeros)
    y, _ = _newton(
        residual_fn=lambda y: problem.residual(0.0, y, zeros),
        jac_fn=lambda y: problem.jac(0.0, y, zeros, 0.0),
        y0=y0, scales=scales, tol=newton_tol, max_iter=max_iter, damped=True,
    )
    return y


def consistent_initial_state(problem: DaeProblem, diff_values: np.ndarray | dict | float,
                             t0: float = 0.0, newton_tol: float = 1e-10):
    """Initial (y, ydot) with the differential coordinates prescribed.

    ``diff_values`` fixes the differential coordinates (scalar 0 means
    "start from rest"); the algebraic coordinates and the differential
    rates are solved from F(t0, y, ydot) = 0, a square system.
    """
    diff = np.flatnonzero(problem.diff_mask)
    alg = np.flatnonzero(~problem.diff_mask)
    fixed = np.zeros(len(diff))
    if isinstance(diff_values, dict):
        for idx, val in diff_values.items():
            fixed[list(diff).index(idx)] = val
    elif np.ndim(diff_values) == 0:
        fixed[:] = float(diff_values)
    else:
        vals = np.asarray(diff_values, dtype=float)
        fixed[:] = vals[diff] if vals.shape[0] == problem.dim else vals

    def unpack(w):
        y = np.zeros(problem.dim)
        ydot = np.zeros(problem.dim)
        y[diff] = fixed
        y[alg] = w[: len(alg)]
        ydot[diff] = w[len(alg):]
        return y, ydot

    def fun(w):
        y, ydot = unpack(w)
        return problem.residual(t0, y, ydot)

    def jac_fn(w):
        y, ydot = unpack(w)
        j_y = problem.jac(t0, y, ydot, 0.0)
        j_yd = problem.jac(t0, y, ydot, 1.0) - j_y
        return np.hstack([j_y[:, alg], j_yd[:, diff]])

    w0 = np.zeros(len(alg) + len(diff))
    y_probe, yd_probe = unpack(w0)
    scales = np.maximum(1.0, np.max(np.abs(jac_fn(w0)), axis=1))
    w, _ = _newton(fun, jac_fn, w0, scales, newton_tol, 100, damped=True)
    return unpack(w)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def step(problem: DaeProblem, cfg: IntegratorConfig, t: float, y: np.ndarray,
         ydot: np.ndarray, scales: np.ndarray, _depth: int = 0):
    """One accepted step from t to t + cfg.dt; returns (y1, ydot1, iterations).

    Newton divergence triggers dt halving (two recursive half steps), at
    most ten times, then the failure propagates.
    """
    dt = cfg.dt
    mask = problem.diff_mask

    def rates(y1):
        yd = np.zeros(problem.dim)
        if cfg.method == "backward_euler":
            yd[mask] = (y1[mask] - y[mask]) / dt
        else:
            yd[mask] = 2.0 * (y1[mask] - y[mask]) / dt - ydot[mask]
        return yd

    alpha = (1.0 if cfg.method == "backward_euler" else 2.0) / dt
    t1 = t + dt

    try:
        y1, its = _newton(
            residual_fn=lambda y1: problem.residual(t1, y1, rates(y1)),
            jac_fn=lambda y1: problem.jac(t1, y1, rates(y1), alpha),
            y0=y.copy(), scales=scales, tol=cfg.newton_tol,
            max_iter=cfg.max_newton, damped=True,
        )
        return y1, rates(y1), its
    except NewtonDivergence:
        if _depth >= 10:
            raise
        half = IntegratorConfig(cfg.method, dt / 2.0, cfg.newton_tol, cfg.max_newton)
        ya, yda, ita = step(problem, half, t, y, ydot, scales, _depth + 1)
        yb, ydb, itb = step(problem, half, t + dt / 2.0, ya, yda, scales, _depth + 1)
        return yb, ydb, ita + itb


def simulate(problem: DaeProblem, cfg: IntegratorConfig, tstop: float,
             x0: np.ndarray | None = None, xdot0: np.ndarray | None = None,
             t0: float = 0.0) -> Trajectory:
    """Fixed-step march from the DC operating point (or a given state).

    Records states, rates, observables and Newton iteration counts at
    every accepted step; deterministic for fixed inputs.
    """
    if x0 is None:
        y = dc_operating_point(problem, newton_tol=cfg.newton_tol)
        ydot = np.zeros(problem.dim)
    else:
        y = np.asarray(x0, dtype=float).copy()
        ydot = np.zeros(problem.dim) if xdot0 is None else np.asarray(xdot0, float).copy()
    scales = _row_scales(problem, t0, y, ydot)

    n_steps = int(round((tstop - t0) / cfg.dt))
    times = [t0]
    states = [y.copy()]
    rates = [ydot.copy()]
    iters = [0]
    obs_records = [problem.observables(t0, y, ydot)] if problem.observables else [{}]

    t = t0
    for _ in range(n_steps):
        y, ydot, its = step(problem, cfg, t, y, ydot, scales)
        t += cfg.dt
        times.append(t)
        states.append(y.copy())
        rates.append(ydot.copy())
        iters.append(its)
        obs_records.append(problem.observables(t, y, ydot) if problem.observables else {})

    names = problem.observable_names or (tuple(obs_records[0]) if obs_records[0] else ())
    observables = {nm: np.array([rec[nm] for rec in obs_records]) for nm in names}
    return Trajectory(
        times=np.array(times), states=np.array(states), rates=np.array(rates),
        observables=observables, newton_iterations=np.array(iters), method=cfg.method,
    )


# ---------------------------------------------------------------------------
# energy audit
# ---------------------------------------------------------------------------

def energy_audit(trajectory: Trajectory, system) -> AuditReport:
    """Per-step energy ledger for a simulated circuit.

    ``system`` provides audit_terms(t, y, ydot) -> (H, P_S, D).  The
    balance error is H(t) - H(0) - integral(P_S - D) with rectangle
    quadrature for backward Euler and trapezoid for the trapezoidal
    method.  The report is also attached to the trajectory.
    """
    n = len(trajectory.times)
    stored = np.empty(n)
    supplied = np.empty(n)
    dissipated = np.empty(n)
    for k in range(n):
        h, p, d = system.audit_terms(trajectory.times[k], trajectory.states[k],
                                     trajectory.rates[k])
        stored[k], supplied[k], dissipated[k] = h, p, d
    net = supplied - dissipated
    integral = np.zeros(n)
    for k in range(1, n):
        dt = trajectory.times[k] - trajectory.times[k - 1]
        if trajectory.method == "backward_euler":
            integral[k] = integral[k - 1] + dt * net[k]
        else:
            integral[k] = integral[k - 1] + 0.5 * dt * (net[k] + net[k - 1])
    report = AuditReport(stored, supplied, dissipated,
                         stored - stored[0] - integral)
    trajectory.audit = report
    return report


def trajectory_to_csv(trajectory: Trajectory) -> str:
    """CSV export: t,<observables...>,H,P_S,D,balance_err."""
    if trajectory.audit is None:
        raise ValueError("run energy_audit before exporting a trajectory")
    names = list(trajectory.observables)
    buf = io.StringIO()
    buf.write(",".join(["t", *names, "H", "P_S", "D", "balance_err"]) + "\n")
    audit = trajectory.audit
    for k in range(len(trajectory.times)):
        row = [repr(float(trajectory.times[k]))]
        row += [repr(float(trajectory.observables[nm][k])) for nm in names]
        row += [repr(float(audit.stored[k])), repr(float(audit.supplied[k])),
                repr(float(audit.dissipated[k])), repr(float(audit.balance_error[k]))]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
