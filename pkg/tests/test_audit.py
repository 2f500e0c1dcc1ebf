"""
Unit tests for the revenue adequacy audit.
"""

import unittest
from dataclasses import replace
from pathlib import Path
from unittest import mock
import sys

import numpy as np
import scipy.sparse as sp

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from audit import (
    AuditOptions,
    Verdict,
    adequacy_audit,
    kkt_residuals,
    mfcq_certificate,
    proof_chain,
    revenue,
)
from case_generator import random_ac_case, random_dc_case, random_gas_case
from case_io import parse_case
from formulations import build_problem
from ipm_solver import solve
from model_core import (
    FamilyKind,
    NlpProblem,
    PrimalDualPoint,
    QuadraticObjective,
    VariableLayout,
    linear_family,
    stacked_jacobian,
)
from simplex_oracle import LinearProgram, solve_lp
from star_verify import common_pressure_scaled

CASES = Path(__file__).parent.parent / "cases"


def bundled(name: str) -> NlpProblem:
    return build_problem(parse_case(CASES / name))


def box_problem(matrix, offset) -> NlpProblem:
    """One traded, one exposed variable and inequality rows over x."""
    family = linear_family(
        "g", FamilyKind.SYSTEM_INEQUALITY, sp.csr_matrix(matrix), np.asarray(offset, dtype=float)
    )
    return NlpProblem(
        layout=VariableLayout(1, 1, 0),
        system_families=(family,),
        objective=QuadraticObjective(np.zeros(2), np.zeros(2)),
        fixed_outflow=np.zeros(1),
        lower=np.zeros(1),
        upper=np.ones(1),
    )


def dense_mfcq_margin(problem: NlpProblem, point: PrimalDualPoint, active_tol: float = 1e-6):
    """Rank and t* through numpy and the dense simplex oracle."""
    system = problem.layout.system
    primal = point.primal
    j_h = stacked_jacobian(problem, primal, problem.equality_families).toarray()[:, system]
    rows = []
    for family in problem.inequality_families:
        active = family.evaluator(primal) >= -active_tol
        rows.append(family.jacobian(primal).toarray()[active][:, system])
    n = j_h.shape[1]
    j_a = np.vstack(rows) if rows else np.zeros((0, n))
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    lp = LinearProgram(
        cost=cost,
        a_eq=np.hstack([j_h, np.zeros((j_h.shape[0], 1))]),
        b_eq=np.zeros(j_h.shape[0]),
        a_ub=np.hstack([j_a, np.ones((j_a.shape[0], 1))]),
        b_ub=np.zeros(j_a.shape[0]),
        lower=np.concatenate([-np.ones(n), [-np.inf]]),
        upper=np.ones(n + 1),
    )
    rank = np.linalg.matrix_rank(j_h) if j_h.size else 0
    return rank, -solve_lp(lp).objective


class TestDcAudit(unittest.TestCase):
    """Audit of the congested 3-bus case."""

    @classmethod
    def setUpClass(cls):
        """Solve once for the whole class."""
        cls.problem = bundled("dc_3bus.json")
        cls.outcome = solve(cls.problem)
        cls.report = adequacy_audit(cls.problem, cls.outcome.point)

    def test_verdict(self):
        """The solved point is consistent with adequacy."""
        self.assertIs(self.report.verdict, Verdict.CONSISTENT, msg=str(self.report.reasons))
        self.assertTrue(self.report.consistent)

    def test_revenue_value(self):
        """R = 48 p.u., 4800 $/h."""
        self.assertAlmostEqual(self.report.revenue.revenue, 48.0, places=4)
        self.assertAlmostEqual(self.report.revenue.revenue_physical, 4800.0, places=2)
        self.assertTrue(self.report.revenue.adequate)

    def test_congestion_rent_identity(self):
        """R equals the sum of (lambda_to - lambda_from) * flow."""
        rev = self.report.revenue
        self.assertAlmostEqual(float(rev.edge_rent.sum()), rev.revenue, delta=1e-8)

    def test_formulas_agree(self):
        """-lambda'x and lambda'(d - M q) agree when conservation holds."""
        self.assertIsNot(self.report.revenue.formulas_agree, False)
        self.assertAlmostEqual(
            self.report.revenue.revenue, self.report.revenue.revenue_from_nominations, delta=1e-5
        )

    def test_family_terms_sum_to_revenue(self):
        """Per-family contributions reconstruct R at a stationary point."""
        terms = self.report.revenue.family_terms
        self.assertAlmostEqual(sum(terms.values()), self.report.revenue.revenue, places=5)

    def test_mfcq_holds(self):
        """The congested line is active and a strictly feasible direction exists."""
        mfcq = self.report.mfcq
        self.assertTrue(mfcq.holds)
        self.assertGreater(mfcq.margin, 1e-8)
        self.assertIn("p_l[l13]<=max", mfcq.active_rows)

    def test_proof_chain(self):
        """Step quantity non-negative and the chain reproduces R."""
        proof = self.report.proof
        self.assertIsNotNone(proof)
        self.assertLess(proof.tangency_residual, 1e-6)
        self.assertGreaterEqual(proof.step_quantity, -1e-6)
        self.assertLess(proof.identity_gap, 1e-5)

    def test_star_attached(self):
        """The DC audit runs the global scaling sweep."""
        self.assertIsNotNone(self.report.star)
        self.assertTrue(self.report.star.hypothesis_met)
        self.assertEqual(len(self.report.star.samples), 101)

    def test_mfcq_matches_dense_oracle(self):
        """Rank and t* agree with the dense implementation."""
        rank, margin = dense_mfcq_margin(self.problem, self.outcome.point)
        self.assertEqual(rank, self.report.mfcq.equality_rank)
        self.assertAlmostEqual(margin, self.report.mfcq.margin, delta=1e-8)

    def test_stopped_solver_is_inconclusive(self):
        """A point from a solve that hit its iteration limit is never certified."""
        report = adequacy_audit(self.problem, self.outcome.point, solver_status="max_iter")
        self.assertTrue(report.kkt.passed)
        self.assertIs(report.verdict, Verdict.INCONCLUSIVE)
        self.assertIn("solver stopped with status max_iter", report.reasons)

    def test_optimal_status_keeps_verdict(self):
        report = adequacy_audit(self.problem, self.outcome.point, solver_status="optimal")
        self.assertIs(report.verdict, Verdict.CONSISTENT)

    def test_negative_step_is_inconclusive(self):
        """A negative step quantity along the scaling direction demotes the verdict."""
        def negative_chain(*args, **kwargs):
            chain = proof_chain(*args, **kwargs)
            return replace(chain, step_quantity=-0.5, holds=False)

        with mock.patch("audit.proof_chain", side_effect=negative_chain):
            report = adequacy_audit(self.problem, self.outcome.point)
        self.assertTrue(report.revenue.adequate)
        self.assertIs(report.verdict, Verdict.INCONCLUSIVE)
        self.assertEqual(report.reasons, ["step quantity -0.5 negative"])


class TestMfcqAgainstDense(unittest.TestCase):
    """The sparse certificate against the dense oracle over bundled and generated cases."""

    def check(self, problem: NlpProblem):
        outcome = solve(problem)
        self.assertTrue(outcome.optimal, msg=outcome.message)
        report = adequacy_audit(problem, outcome.point, solver_status=outcome.status.value)
        rank, margin = dense_mfcq_margin(problem, outcome.point)
        self.assertEqual(rank, report.mfcq.equality_rank)
        self.assertAlmostEqual(margin, report.mfcq.margin, delta=1e-8)

    def test_bundled_cases(self):
        for path in sorted(CASES.glob("*.json")):
            with self.subTest(case=path.name):
                self.check(build_problem(parse_case(path)))

    def test_generated_cases(self):
        for seed in range(3):
            for generate in (random_dc_case, random_gas_case, random_ac_case):
                with self.subTest(seed=seed, kind=generate.__name__):
                    self.check(build_problem(generate(np.random.default_rng(seed))))


class TestKktResiduals(unittest.TestCase):
    """Failure reasons of the KKT check."""

    def setUp(self):
        """Solve the 3-bus case."""
        self.problem = bundled("dc_3bus.json")
        self.point = solve(self.problem).point

    def test_perturbed_price_fails_stationarity(self):
        """Moving one price breaks stationarity and fails the audit."""
        lam = self.point.lam.copy()
        lam[0] += 0.1
        point = PrimalDualPoint(
            self.point.primal, self.point.mu_lower, self.point.mu_upper, lam,
            self.point.nu_e, self.point.nu_i,
        )
        kkt = kkt_residuals(self.problem, point)
        self.assertFalse(kkt.passed)
        self.assertIn("stationarity", kkt.failures())
        report = adequacy_audit(self.problem, point)
        self.assertIs(report.verdict, Verdict.FAILED)
        self.assertIn("stationarity", report.reasons)

    def test_negative_dual_fails_sign(self):
        """A negative inequality dual is a dual sign failure."""
        nu_i = self.point.nu_i.copy()
        nu_i[0] = -1.0
        point = PrimalDualPoint(
            self.point.primal, self.point.mu_lower, self.point.mu_upper, self.point.lam,
            self.point.nu_e, nu_i,
        )
        self.assertIn("dual sign", kkt_residuals(self.problem, point).failures())

    def test_single_bound_example(self):
        """min q s.t. q >= 1 at q=1, mu_lower=1 passes."""
        problem = NlpProblem(
            layout=VariableLayout(1, 1, 0),
            system_families=(),
            objective=QuadraticObjective(np.array([1.0, 0.0]), np.zeros(2)),
            fixed_outflow=np.array([1.0]),
            lower=np.array([1.0]),
            upper=np.array([10.0]),
        )
        point = PrimalDualPoint(
            np.array([1.0, 0.0]), np.array([1.0]), np.zeros(1), np.zeros(1), np.zeros(0), np.zeros(0)
        )
        self.assertTrue(kkt_residuals(problem, point).passed)


class TestMfcq(unittest.TestCase):
    """Hand-built constraint qualification examples."""

    def test_box_interior_holds(self):
        """-1 <= x <= 1 at x = 0: nothing active, MFCQ holds."""
        problem = box_problem([[0.0, 1.0], [0.0, -1.0]], [-1.0, -1.0])
        point = PrimalDualPoint.zeros(problem, np.zeros(2))
        cert = mfcq_certificate(problem, point)
        self.assertTrue(cert.holds)
        self.assertEqual(cert.active_rows, [])
        self.assertAlmostEqual(cert.margin, 1.0)

    def test_opposite_active_rows_fail(self):
        """x <= 0 and -x <= 0 at x = 0 leave no strictly feasible direction."""
        problem = box_problem([[0.0, 1.0], [0.0, -1.0]], [0.0, 0.0])
        point = PrimalDualPoint.zeros(problem, np.zeros(2))
        cert = mfcq_certificate(problem, point)
        self.assertFalse(cert.holds)
        self.assertLessEqual(cert.margin, 1e-8)
        self.assertEqual(len(cert.active_rows), 2)

    def test_dependent_equalities_fail(self):
        """Duplicated equality rows fail the rank test."""
        rows = sp.csr_matrix([[0.0, 1.0], [0.0, 1.0]])
        family = linear_family("h", FamilyKind.SYSTEM_EQUALITY, rows, np.zeros(2))
        problem = NlpProblem(
            layout=VariableLayout(1, 1, 0),
            system_families=(family,),
            objective=QuadraticObjective(np.zeros(2), np.zeros(2)),
            fixed_outflow=np.zeros(1),
            lower=np.zeros(1),
            upper=np.ones(1),
        )
        cert = mfcq_certificate(problem, PrimalDualPoint.zeros(problem, np.zeros(2)))
        self.assertFalse(cert.rank_ok)
        self.assertFalse(cert.holds)

    def test_unmet_hypothesis_verdict(self):
        """A KKT point where MFCQ fails is not certified."""
        problem = box_problem([[0.0, 1.0], [0.0, -1.0]], [0.0, 0.0])
        point = PrimalDualPoint.zeros(problem, np.zeros(2))
        report = adequacy_audit(problem, point, AuditOptions(check_star=False))
        self.assertTrue(report.kkt.passed)
        self.assertIs(report.verdict, Verdict.HYPOTHESIS_UNMET)


class TestRevenue(unittest.TestCase):
    """Revenue formula and adequacy tolerance."""

    def test_negative_revenue_is_inadequate(self):
        """A hand-made dual with R < 0 is flagged."""
        problem = bundled("dc_2bus.json")
        point = PrimalDualPoint.zeros(problem)
        primal = problem.default_primal()
        primal[problem.layout.x] = [5.0, -5.0]
        point = PrimalDualPoint(primal, point.mu_lower, point.mu_upper, np.array([2.0, 1.0]),
                                point.nu_e, point.nu_i)
        rev = revenue(problem, point)
        self.assertAlmostEqual(rev.revenue, -5.0)
        self.assertFalse(rev.adequate)


class TestNonlinearAudits(unittest.TestCase):
    """Gas and AC audits."""

    def test_gas_audit(self):
        """The 3-junction gas case is consistent and its proof chain closes."""
        problem = bundled("gas_3junction.json")
        outcome = solve(problem)
        report = adequacy_audit(problem, outcome.point)
        self.assertIs(report.verdict, Verdict.CONSISTENT, msg=str(report.reasons))
        self.assertGreaterEqual(report.revenue.revenue, -1e-6)
        self.assertAlmostEqual(report.star.pi_c, common_pressure_scaled(problem))
        chain = proof_chain(problem, outcome.point, report.star.pi_c)
        self.assertLess(chain.tangency_residual, 1e-6)
        self.assertLess(chain.identity_gap, 1e-5)
        rank, margin = dense_mfcq_margin(problem, outcome.point)
        self.assertEqual(rank, report.mfcq.equality_rank)
        self.assertAlmostEqual(margin, report.mfcq.margin, delta=1e-8)

    def test_ac_audit(self):
        """The 2-bus AC case passes with an interior voltage lower bound."""
        problem = bundled("ac_2bus.json")
        outcome = solve(problem)
        report = adequacy_audit(problem, outcome.point)
        self.assertIs(report.verdict, Verdict.CONSISTENT, msg=str(report.reasons))
        self.assertGreater(report.star.epsilon_star, 0.0)

    def test_binding_voltage_not_certified(self):
        """A binding voltage lower bound leaves adequacy uncertified."""
        problem = bundled("ac_2bus_binding.json")
        outcome = solve(problem)
        self.assertTrue(outcome.optimal, msg=outcome.message)
        report = adequacy_audit(problem, outcome.point)
        self.assertIs(report.verdict, Verdict.HYPOTHESIS_UNMET, msg=str(report.reasons))
        self.assertFalse(report.star.hypothesis_met)
        self.assertIn("voltage lower bound binding", report.star.reason)


if __name__ == "__main__":
    unittest.main()
