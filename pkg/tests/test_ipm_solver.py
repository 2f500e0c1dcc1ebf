"""
Unit tests for the primal-dual interior-point solver.
"""

import unittest
from pathlib import Path
import sys

import numpy as np
import scipy.sparse as sp

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from audit import kkt_residuals
from case_io import parse_case
from formulations import Bus, GasCase, Generator, Junction, Line, Pipe, PowerCase, build_problem
from ipm_solver import (
    DegenerateConstraintError,
    InteriorPointSolver,
    SolveStatus,
    SolverOptions,
    WarmStart,
    next_barrier,
    solve,
    to_slack_form,
)
from model_core import (
    FamilyKind,
    NlpProblem,
    QuadraticObjective,
    VariableLayout,
    evaluate,
    linear_family,
)

CASES = Path(__file__).parent.parent / "cases"


def bundled(name: str) -> NlpProblem:
    return build_problem(parse_case(CASES / name))


def gas_grid_scan(problem: NlpProblem, flows: np.ndarray):
    """
    Cheapest feasible point of the 3-junction line for each through-flow f:
    j3 sits at its lower pressure, pressures rise by the Weymouth drops and
    the compressor takes the smallest ratio the j1 box allows.
    """
    best = (np.inf, None)
    for f in flows:
        drop = 0.2 * f**2
        pi3 = 1.0
        pi2 = pi3 + drop
        inlet = pi2 + drop
        pi1 = min(4.0, inlet)
        values = {
            "q[j1]": f, "q[j3]": 5.0 - f,
            "x[j1]": f, "x[j2]": 0.0, "x[j3]": -f,
            "pi[j1]": pi1, "pi[j2]": pi2, "pi[j3]": pi3,
            "pi_in[p12]": inlet, "pi_in[p23]": pi2,
            "pi_out[p12]": pi2, "pi_out[p23]": pi3,
            "phi[p12]": f, "phi[p23]": f,
            "alpha[c1]": inlet / pi1,
        }
        primal = np.array([values[label] for label in problem.labels])
        if not evaluate(problem, primal, tol_feas=1e-9).feasible:
            continue
        objective = problem.objective.value(primal)
        if objective < best[0]:
            best = (objective, f)
    return best


class TestDcSolve(unittest.TestCase):
    """Test cases for DC OPF solves."""

    def setUp(self):
        """Solve the congested 3-bus case."""
        self.problem = bundled("dc_3bus.json")
        self.outcome = solve(self.problem)

    def test_status_optimal(self):
        """The congested case converges."""
        self.assertIs(self.outcome.status, SolveStatus.OPTIMAL)
        self.assertTrue(self.outcome.optimal)

    def test_dispatch_and_flows(self):
        """Dispatch 90/60 MW, flows 10/80/70 MW."""
        primal = self.outcome.point.primal
        q = primal[self.problem.layout.q] * 100.0
        flows = primal[self.problem.blocks["flow"]] * 100.0
        np.testing.assert_allclose(q, [90.0, 60.0], atol=1e-4)
        np.testing.assert_allclose(flows, [10.0, 80.0, 70.0], atol=1e-4)

    def test_prices(self):
        """Nodal prices 10, 30 and 50 $/MWh."""
        np.testing.assert_allclose(self.outcome.point.lam, [10.0, 30.0, 50.0], atol=1e-5)

    def test_objective(self):
        """2700 $/h in physical units."""
        self.assertAlmostEqual(self.outcome.objective * 100.0, 2700.0, places=4)

    def test_history_rows(self):
        """History rows carry four entries and end below tolerance."""
        history = self.outcome.kkt_residual_history
        self.assertTrue(all(len(row) == 4 for row in history))
        self.assertEqual(history[-1][0], self.outcome.iterations)
        self.assertLessEqual(max(history[-1][1:]), 1e-8)

    def test_optimal_passes_audit_kkt(self):
        """Declaring optimal implies the independent KKT check passes at 1e-6."""
        report = kkt_residuals(self.problem, self.outcome.point, 1e-6)
        self.assertTrue(report.passed, msg=str(report))

    def test_dual_signs(self):
        """Bound and inequality duals are non-negative."""
        self.assertTrue(self.outcome.point.is_dual_feasible())

    def test_warm_start(self):
        """Restarting from the optimum converges again."""
        options = SolverOptions(initialization=WarmStart(self.outcome.point))
        again = solve(self.problem, options)
        self.assertTrue(again.optimal)
        np.testing.assert_allclose(again.point.lam, self.outcome.point.lam, atol=1e-5)


class TestSmallCases(unittest.TestCase):
    """Uncongested, infeasible and degenerate inputs."""

    def test_two_bus_uniform_price(self):
        """Without congestion both buses price at the marginal cost."""
        problem = bundled("dc_2bus.json")
        outcome = solve(problem)
        self.assertTrue(outcome.optimal)
        np.testing.assert_allclose(outcome.point.lam, [1.0, 1.0], atol=1e-6)

    def test_load_above_capacity(self):
        """Demand beyond generation capacity never reports optimal."""
        case = PowerCase(
            kind="power_dc",
            buses=(Bus("b1"), Bus("b2", p_load=50.0)),
            generators=(Generator("g1", "b1", p_max=10.0, cost=1.0),),
            lines=(Line("l12", "b1", "b2", x=0.1, limit=100.0),),
            base_mva=10.0,
        )
        outcome = solve(build_problem(case), SolverOptions(max_iter=60))
        self.assertFalse(outcome.optimal)
        self.assertIn(
            outcome.status,
            (SolveStatus.INFEASIBLE, SolveStatus.MAX_ITER, SolveStatus.NUMERIC_FAILURE),
        )

    def test_fixed_nomination(self):
        """A generator with p_min == p_max is handled by the relaxed barrier."""
        case = PowerCase(
            kind="power_dc",
            buses=(Bus("b1"), Bus("b2", p_load=80.0)),
            generators=(
                Generator("g1", "b1", p_min=30.0, p_max=30.0, cost=5.0),
                Generator("g2", "b2", p_max=100.0, cost=20.0),
            ),
            lines=(Line("l12", "b1", "b2", x=0.1, limit=100.0),),
        )
        problem = build_problem(case)
        outcome = solve(problem)
        self.assertTrue(outcome.optimal)
        q = outcome.point.primal[problem.layout.q] * 100.0
        np.testing.assert_allclose(q, [30.0, 50.0], atol=1e-4)

    def test_constant_inequality_rejected(self):
        """A G row with no variable dependence is a structural error."""
        family = linear_family(
            "constant", FamilyKind.SYSTEM_INEQUALITY, sp.csr_matrix((1, 2)), np.array([-1.0])
        )
        problem = NlpProblem(
            layout=VariableLayout(1, 1, 0),
            system_families=(family,),
            objective=QuadraticObjective(np.array([1.0, 0.0]), np.zeros(2)),
            fixed_outflow=np.zeros(1),
            lower=np.zeros(1),
            upper=np.ones(1),
        )
        with self.assertRaises(DegenerateConstraintError):
            to_slack_form(problem)

    def test_slack_value(self):
        """x - 1 <= 0 at x = 0 has slack 1 and a zero slacked residual."""
        family = linear_family(
            "cap", FamilyKind.SYSTEM_INEQUALITY, sp.csr_matrix([[0.0, 1.0]]), np.array([-1.0])
        )
        problem = NlpProblem(
            layout=VariableLayout(1, 1, 0),
            system_families=(family,),
            objective=QuadraticObjective(np.array([1.0, 0.0]), np.zeros(2)),
            fixed_outflow=np.zeros(1),
            lower=np.zeros(1),
            upper=np.ones(1),
        )
        slacked = to_slack_form(problem)
        z = np.zeros(2)
        np.testing.assert_allclose(slacked.slacks(z), [1.0])
        residual = slacked.residual(z, slacked.slacks(z))
        self.assertAlmostEqual(residual[-1], 0.0)

    def test_slack_round_trip(self):
        """Slack-form duals map back to the original point unchanged."""
        problem = bundled("dc_3bus.json")
        point = solve(problem).point
        slacked = to_slack_form(problem)
        back = slacked.to_original(slacked.from_original(point))
        np.testing.assert_allclose(back.primal, point.primal)
        np.testing.assert_allclose(back.lam, point.lam)
        np.testing.assert_allclose(back.nu_e, point.nu_e)
        np.testing.assert_allclose(back.nu_i, point.nu_i)
        np.testing.assert_allclose(back.mu_lower, point.mu_lower)
        np.testing.assert_allclose(back.mu_upper, point.mu_upper)

    def test_invalid_options(self):
        """Non-positive tolerances and iteration limits are rejected."""
        with self.assertRaises(ValueError):
            SolverOptions(tol_kkt=0.0)
        with self.assertRaises(ValueError):
            SolverOptions(max_iter=0)
        with self.assertRaises(ValueError):
            SolverOptions(initialization="cold")


class TestBarrierSchedule(unittest.TestCase):
    """Barrier updates and recovery from stalled progress."""

    def test_linear_then_superlinear(self):
        """Far from zero mu shrinks by the reduction factor, near it by the 1.5 power."""
        options = SolverOptions()
        self.assertAlmostEqual(next_barrier(0.1, options), 0.02)
        self.assertAlmostEqual(next_barrier(1e-4, options), 1e-6, delta=1e-18)
        self.assertAlmostEqual(next_barrier(1e-8, options), 1e-9, delta=1e-20)

    def test_stall_detection(self):
        """A flat error history near the optimum counts as stalled, a falling one does not."""
        solver = InteriorPointSolver(to_slack_form(bundled("dc_3bus.json")), SolverOptions())
        solver.mu = 1e-8
        solver.history = [(k, 1e-6, 1e-9, 1e-6) for k in range(10)]
        self.assertTrue(solver.stalled(9))
        solver.last_recovery = 5
        self.assertFalse(solver.stalled(9))
        solver.last_recovery = 0
        solver.history = [(k, 10.0**-k, 1e-9, 10.0**-k) for k in range(10)]
        self.assertFalse(solver.stalled(9))

    def test_recovery_never_raises_error(self):
        slacked = to_slack_form(bundled("dc_3bus.json"))
        solver = InteriorPointSolver(slacked, SolverOptions())
        it = solver.initial_iterate()
        before = solver.kkt_error(it)
        recovered = solver.recover(it, slacked.jacobian(it.z))
        self.assertLessEqual(solver.kkt_error(recovered), before)
        self.assertTrue(np.all(recovered.s > 0.0))


class TestNonlinearSolves(unittest.TestCase):
    """Gas and AC solves."""

    def test_gas_three_junction(self):
        """Optimum of the compressed 3-junction case."""
        problem = bundled("gas_3junction.json")
        outcome = solve(problem)
        self.assertTrue(outcome.optimal, msg=outcome.message)
        primal = outcome.point.primal
        np.testing.assert_allclose(primal[problem.blocks["flow"]], [np.sqrt(12.5)] * 2, atol=1e-5)
        np.testing.assert_allclose(primal[problem.blocks["pressure"]], [4.0, 3.5, 1.0], atol=1e-5)
        np.testing.assert_allclose(primal[problem.blocks["ratio"]], [1.5], atol=1e-5)
        self.assertAlmostEqual(outcome.objective, 15.05 - 2.0 * np.sqrt(12.5), places=5)
        report = kkt_residuals(problem, outcome.point, 1e-6)
        self.assertTrue(report.passed, msg=str(report))

    def test_gas_matches_grid_scan(self):
        """The interior-point optimum is no worse than a fine scan over the through-flow."""
        problem = bundled("gas_3junction.json")
        outcome = solve(problem)
        scan_objective, scan_flow = gas_grid_scan(problem, np.linspace(0.0, 5.0, 2001))
        self.assertLessEqual(outcome.objective, scan_objective + 1e-6)
        self.assertGreaterEqual(outcome.objective, scan_objective - 0.01)
        self.assertAlmostEqual(scan_flow, np.sqrt(12.5), delta=0.005)

    def test_gas_withdrawal_bid(self):
        """A negative nomination range is a bid: it clears fully when valued above supply."""
        case = GasCase(
            junctions=(
                Junction("j1", 1.0, 4.0, supply_min=0.0, supply_max=10.0, price=1.0),
                Junction("j2", 1.0, 4.0, supply_min=-4.0, supply_max=0.0, price=5.0),
            ),
            pipes=(Pipe("p12", "j1", "j2", resistance=0.1),),
        )
        problem = build_problem(case)
        outcome = solve(problem)
        self.assertTrue(outcome.optimal, msg=outcome.message)
        np.testing.assert_allclose(outcome.point.primal[problem.layout.q], [4.0, -4.0], atol=1e-4)
        self.assertAlmostEqual(outcome.objective, -16.0, places=4)
        np.testing.assert_allclose(outcome.point.lam, [1.0, 1.0], atol=1e-4)

    def test_ac_two_bus(self):
        """Lossless balance: the generator covers the load at marginal cost."""
        problem = bundled("ac_2bus.json")
        outcome = solve(problem)
        self.assertTrue(outcome.optimal, msg=outcome.message)
        p_g = outcome.point.primal[problem.layout.q][0]
        self.assertAlmostEqual(p_g, 0.5, places=6)
        np.testing.assert_allclose(outcome.point.lam[:2], [10.0, 10.0], atol=1e-5)
        report = kkt_residuals(problem, outcome.point, 1e-6)
        self.assertTrue(report.passed, msg=str(report))


if __name__ == "__main__":
    unittest.main()
