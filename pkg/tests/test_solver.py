import numpy as np
import pytest

from phcirc.assembly import circuit_blocks, to_mna_cf, trajectory_checks
from phcirc.errors import NewtonDivergence, SingularJacobian
from phcirc.netlist import parse
from phcirc.solver import (
    DaeProblem,
    IntegratorConfig,
    consistent_initial_state,
    dc_operating_point,
    energy_audit,
    simulate,
    step,
    trajectory_to_csv,
    _row_scales,
)


def decay_problem():
    """xdot + x = 0 as a residual DAE."""
    return DaeProblem(
        residual=lambda t, y, yd: yd + y,
        dim=1,
        diff_mask=np.array([True]),
        jacobian=lambda t, y, yd, alpha: np.array([[1.0 + alpha]]),
    )


class TestStep:
    def test_backward_euler_closed_form(self):
        prob = decay_problem()
        cfg = IntegratorConfig(dt=0.1)
        scales = _row_scales(prob, 0.0, np.array([1.0]), np.zeros(1))
        y1, yd1, _ = step(prob, cfg, 0.0, np.array([1.0]), np.zeros(1), scales)
        assert y1[0] == pytest.approx(1.0 / 1.1, rel=1e-12)

    def test_trapezoidal_closed_form(self):
        prob = decay_problem()
        cfg = IntegratorConfig(method="trapezoidal", dt=0.1)
        scales = _row_scales(prob, 0.0, np.array([1.0]), np.zeros(1))
        # consistent initial rate: xdot(0) = -x(0) = -1
        y1, yd1, _ = step(prob, cfg, 0.0, np.array([1.0]), np.array([-1.0]), scales)
        assert y1[0] == pytest.approx(19.0 / 21.0, rel=1e-12)

    def test_infeasible_constraint_fails_after_halvings(self):
        # (y - 3)^2 + 1 = 0 has no real solution; halving dt cannot help and
        # the divergence must propagate instead of looping forever
        prob = DaeProblem(residual=lambda t, y, yd: np.array([(y[0] - 3.0) ** 2 + 1.0]),
                          dim=1, diff_mask=np.array([False]),
                          jacobian=lambda t, y, yd, alpha: np.array([[2.0 * (y[0] - 3.0)]]))
        cfg = IntegratorConfig(dt=0.1)
        with pytest.raises(NewtonDivergence):
            step(prob, cfg, 0.0, np.zeros(1), np.zeros(1), np.ones(1))


class TestDcOperatingPoint:
    def test_series_rc(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        y = dc_operating_point(mna.dae_problem())
        named = dict(zip(mna.unknown_names, y))
        assert named["phi(1)"] == pytest.approx(5.0)
        assert named["phi(2)"] == pytest.approx(5.0)
        assert named["q(C1)"] == pytest.approx(5e-6)
        assert abs(named["iV(V1)"]) < 1e-12

    def test_all_zero_circuit(self):
        mna = to_mna_cf(circuit_blocks(parse("V1 1 0 DC 0\nR1 1 0 R=1\n"
                                             ".ground 0\n.end")))
        y = dc_operating_point(mna.dae_problem())
        assert np.max(np.abs(y)) < 1e-12

    def test_floating_node_singular(self):
        nl = parse("V1 1 0 DC 5\nC1 1 2 C=1u\nC2 2 0 C=1u\n.ground 0\n.end")
        mna = to_mna_cf(circuit_blocks(nl))
        with pytest.raises(SingularJacobian) as err:
            dc_operating_point(mna.dae_problem())
        assert err.value.cond_estimate is not None

    def test_divergence_reports_iterates(self):
        prob = DaeProblem(residual=lambda t, y, yd: np.array([1.0 + 0 * y[0]]),
                          dim=1, diff_mask=np.array([False]),
                          jacobian=lambda t, y, yd, alpha: np.array([[1e-30]]))
        with pytest.raises(NewtonDivergence) as err:
            dc_operating_point(prob)
        assert len(err.value.iterates) >= 1


class TestSimulate:
    def test_rc_charging_accuracy(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        prob = mna.dae_problem()
        y0, yd0 = consistent_initial_state(prob, 0.0)
        traj = simulate(prob, IntegratorConfig(dt=1e-6), 5e-3, x0=y0, xdot0=yd0)
        assert len(traj.times) == 5001
        exact = 5.0 * (1.0 - np.exp(-traj.times / 1e-3))
        rel = np.abs(traj.observables["u(C1)"][1:] - exact[1:]) / exact[1:]
        assert rel.max() <= 0.01

    def test_zero_source_zero_trajectory(self):
        nl = parse("V1 1 0 DC 0\nR1 1 2 R=1k\nC1 2 0 C=1u\n.ground 0\n.end")
        mna = to_mna_cf(circuit_blocks(nl))
        prob = mna.dae_problem()
        y0, yd0 = consistent_initial_state(prob, 0.0)
        traj = simulate(prob, IntegratorConfig(dt=1e-5), 1e-3, x0=y0, xdot0=yd0)
        assert np.max(np.abs(traj.states)) < 1e-14

    def test_single_newton_iteration_on_linear_problem(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        prob = mna.dae_problem()
        y0, yd0 = consistent_initial_state(prob, 0.0)
        traj = simulate(prob, IntegratorConfig(dt=1e-6), 5e-3, x0=y0, xdot0=yd0)
        assert np.all(traj.newton_iterations[1:] == 1)

    def test_dc_start_is_stationary(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        prob = mna.dae_problem()
        traj = simulate(prob, IntegratorConfig(dt=1e-5), 1e-4)
        assert np.max(np.abs(traj.observables["u(C1)"] - 5.0)) < 1e-9


class TestConvergenceOrder:
    def _max_err(self, method, dt, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        prob = mna.dae_problem()
        y0, yd0 = consistent_initial_state(prob, 0.0)
        traj = simulate(prob, IntegratorConfig(method=method, dt=dt), 5e-3,
                        x0=y0, xdot0=yd0)
        exact = 5.0 * (1.0 - np.exp(-traj.times / 1e-3))
        return float(np.max(np.abs(traj.observables["u(C1)"] - exact)))

    def test_backward_euler_first_order(self, golden_texts):
        ratio = self._max_err("backward_euler", 1e-6, golden_texts) \
            / self._max_err("backward_euler", 5e-7, golden_texts)
        assert 1.7 <= ratio <= 2.3

    def test_trapezoidal_second_order(self, golden_texts):
        ratio = self._max_err("trapezoidal", 1e-6, golden_texts) \
            / self._max_err("trapezoidal", 5e-7, golden_texts)
        assert 3.4 <= ratio <= 4.6


class TestEnergyAudit:
    def test_static_circuit_balance(self):
        nl = parse("I1 0 1 DC 1\nR1 1 0 R=2\n.ground 0\n.end")
        mna = to_mna_cf(circuit_blocks(nl))
        prob = mna.dae_problem()
        traj = simulate(prob, IntegratorConfig(dt=1e-5), 1e-4)
        audit = energy_audit(traj, mna)
        # dH/dt = 0 and P_S = D = i^2 R exactly
        assert np.max(np.abs(audit.stored)) == 0.0
        assert np.allclose(audit.supplied, 2.0)
        assert np.allclose(audit.dissipated, 2.0)
        assert audit.max_balance_error < 1e-12

    def test_lc_backward_euler_monotone_decay(self):
        nl = parse("C1 1 0 C=1u\nL1 1 0 L=1m\n.ground 0\n.end")
        mna = to_mna_cf(circuit_blocks(nl))
        prob = mna.dae_problem()
        init = np.zeros(prob.dim)
        init[mna.slices["q"]] = 1e-6  # one volt on the capacitor
        y0, yd0 = consistent_initial_state(prob, init)
        traj = simulate(prob, IntegratorConfig(dt=1e-6), 2e-3, x0=y0, xdot0=yd0)
        audit = energy_audit(traj, mna)
        assert np.all(np.diff(audit.stored) <= 1e-18)
        assert np.all(audit.dissipated == 0.0)

    def test_rc_charging_energy_split(self, golden_texts):
        # full charge stores C V^2/2 and dissipates the same amount
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        prob = mna.dae_problem()
        y0, yd0 = consistent_initial_state(prob, 0.0)
        traj = simulate(prob, IntegratorConfig(dt=1e-6), 10e-3, x0=y0, xdot0=yd0)
        audit = energy_audit(traj, mna)
        dt = 1e-6
        e_in = np.sum(audit.supplied[1:]) * dt
        e_diss = np.sum(audit.dissipated[1:]) * dt
        dh = audit.stored[-1] - audit.stored[0]
        half_cv2 = 0.5 * 1e-6 * 25.0
        assert dh == pytest.approx(half_cv2, rel=1e-3)
        assert e_diss == pytest.approx(half_cv2, rel=2e-3)
        assert e_in == pytest.approx(2 * half_cv2, rel=1e-3)
        assert audit.max_balance_error <= 10 * dt * np.max(np.abs(audit.supplied))

    def test_passivity_bound_along_runs(self, golden_texts):
        for name in ("rc", "rlc", "rl_loop"):
            mna = to_mna_cf(circuit_blocks(parse(golden_texts[name])))
            prob = mna.dae_problem()
            y0, yd0 = consistent_initial_state(prob, 0.0)
            traj = simulate(prob, IntegratorConfig(dt=1e-6), 1e-3, x0=y0, xdot0=yd0)
            audit = energy_audit(traj, mna)
            assert np.min(audit.dissipated) >= -1e-12
            dh = np.diff(audit.stored)
            p_in = audit.supplied[1:] * 1e-6
            assert np.all(dh <= p_in + 1e-12)


class TestCsvExport:
    def test_columns_and_rows(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        prob = mna.dae_problem()
        traj = simulate(prob, IntegratorConfig(dt=1e-5), 1e-4)
        energy_audit(traj, mna)
        text = trajectory_to_csv(traj)
        lines = text.strip().split("\n")
        assert lines[0] == ("t,i(V1),i(R1),i(C1),u(V1),u(R1),u(C1),"
                            "H,P_S,D,balance_err")
        assert len(lines) == 1 + 11

    def test_requires_audit(self, golden_texts):
        mna = to_mna_cf(circuit_blocks(parse(golden_texts["rc"])))
        traj = simulate(mna.dae_problem(), IntegratorConfig(dt=1e-5), 1e-4)
        with pytest.raises(ValueError):
            trajectory_to_csv(traj)


class TestKirchhoffAlongTrajectories:
    def test_golden_runs_satisfy_laws(self, golden_texts):
        for name in ("rc", "rlc", "rl_loop", "npn_bias"):
            mna = to_mna_cf(circuit_blocks(parse(golden_texts[name])))
            prob = mna.dae_problem()
            y0, yd0 = consistent_initial_state(prob, 0.0)
            traj = simulate(prob, IntegratorConfig(dt=1e-6), 5e-4, x0=y0, xdot0=yd0)
            checks = trajectory_checks(traj, mna)
            assert checks["kcl"] <= 1e-9, name
            assert checks["kvl"] <= 1e-9, name
            assert checks["tellegen"] <= 1e-9, name
