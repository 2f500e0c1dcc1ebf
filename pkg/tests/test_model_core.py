"""
Unit tests for the block problem model: evaluation, Lagrangian gradients and
analytic Jacobians checked against central finite differences.
"""

import unittest
from pathlib import Path
import sys

import numpy as np
import scipy.sparse as sp

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from case_io import parse_case
from formulations import build_problem
from model_core import (
    FamilyKind,
    NlpProblem,
    NumericDomainError,
    PrimalDualPoint,
    QuadraticObjective,
    StructuralError,
    VariableLayout,
    evaluate,
    lagrangian_gradient,
    linear_family,
    stacked_jacobian,
)

CASES = Path(__file__).parent.parent / "cases"


def single_participant(d: float = 0.0, lower: float = 0.0, upper: float = 10.0, cost: float = 1.0):
    layout = VariableLayout(1, 1, 0)
    return NlpProblem(
        layout=layout,
        system_families=(),
        objective=QuadraticObjective(np.array([cost, 0.0]), np.zeros(2)),
        fixed_outflow=np.array([d]),
        lower=np.array([lower]),
        upper=np.array([upper]),
    )


def random_interior(problem: NlpProblem, rng: np.random.Generator) -> np.ndarray:
    """Points away from the non-smooth and singular spots of every family."""
    primal = rng.uniform(0.5, 1.5, problem.layout.total)
    if "angle" in problem.blocks:
        primal[problem.blocks["angle"]] = rng.uniform(-0.3, 0.3, len(problem.blocks["angle"]))
    if "ratio" in problem.blocks:
        primal[problem.blocks["ratio"]] = rng.uniform(1.0, 2.0, len(problem.blocks["ratio"]))
    return primal


def finite_difference_jacobian(evaluator, primal: np.ndarray, h: float = 1e-6) -> np.ndarray:
    columns = []
    for k in range(primal.size):
        step = np.zeros_like(primal)
        step[k] = h
        columns.append((evaluator(primal + step) - evaluator(primal - step)) / (2.0 * h))
    return np.column_stack(columns)


def lagrangian_value(problem: NlpProblem, point: PrimalDualPoint, primal: np.ndarray) -> float:
    value = problem.objective.value(primal)
    for family, weights in zip(problem.families, point.family_weights(problem)):
        value += float(weights @ family.evaluator(primal))
    return value


def bundled(name: str) -> NlpProblem:
    return build_problem(parse_case(CASES / name))


class TestEvaluate(unittest.TestCase):
    """Test cases for constraint evaluation."""

    def test_zero_point_is_feasible(self):
        """Homogeneous single-participant problem at the origin."""
        problem = single_participant(d=0.0)
        values = evaluate(problem, np.zeros(2))
        np.testing.assert_array_equal(values.residuals["conservation"], [0.0])
        self.assertTrue(values.feasible)
        self.assertEqual(len(values.residuals), 3)

    def test_conservation_balanced(self):
        """d=5, q=5, x=0 balances."""
        problem = single_participant(d=5.0)
        values = evaluate(problem, np.array([5.0, 0.0]))
        np.testing.assert_array_equal(values.by_kind[FamilyKind.CONSERVATION], [0.0])
        self.assertTrue(values.feasible)

    def test_conservation_unbalanced(self):
        """d=5, q=3, x=0 leaves residual 2."""
        problem = single_participant(d=5.0)
        values = evaluate(problem, np.array([3.0, 0.0]))
        np.testing.assert_allclose(values.by_kind[FamilyKind.CONSERVATION], [2.0])
        self.assertFalse(values.feasible)
        self.assertAlmostEqual(values.max_violation, 2.0)

    def test_dimension_mismatch(self):
        """Wrong primal length is a structural error."""
        problem = single_participant()
        with self.assertRaises(StructuralError):
            evaluate(problem, np.zeros(3))

    def test_non_finite_residual(self):
        """A NaN residual is a numeric-domain error."""
        problem = single_participant()
        with self.assertRaises(NumericDomainError):
            evaluate(problem, np.array([np.nan, 0.0]))

    def test_bound_order_checked(self):
        """lower > upper is rejected at construction."""
        with self.assertRaises(StructuralError):
            single_participant(lower=2.0, upper=1.0)

    def test_outflow_length_checked(self):
        """d must have one entry per exposed variable."""
        with self.assertRaises(StructuralError):
            NlpProblem(
                layout=VariableLayout(1, 1, 0),
                system_families=(),
                objective=QuadraticObjective(np.zeros(2), np.zeros(2)),
                fixed_outflow=np.zeros(2),
                lower=np.zeros(1),
                upper=np.ones(1),
            )

    def test_inequality_family_violation(self):
        """An inequality residual above zero is the violation."""
        family = linear_family(
            "cap", FamilyKind.SYSTEM_INEQUALITY, sp.csr_matrix([[0.0, 1.0]]), np.array([-1.0])
        )
        problem = NlpProblem(
            layout=VariableLayout(1, 1, 0),
            system_families=(family,),
            objective=QuadraticObjective(np.zeros(2), np.zeros(2)),
            fixed_outflow=np.zeros(1),
            lower=np.zeros(1),
            upper=np.full(1, 5.0),
        )
        values = evaluate(problem, np.array([3.0, 3.0]))
        self.assertAlmostEqual(values.max_violation, 2.0)
        values = evaluate(problem, np.array([0.5, 0.5]))
        self.assertTrue(values.feasible)


class TestLagrangianGradient(unittest.TestCase):
    """Test cases for the Lagrangian block gradients."""

    def test_zero_duals_leave_cost(self):
        """With all duals zero only the objective gradient survives."""
        problem = single_participant(cost=7.0)
        point = PrimalDualPoint.zeros(problem, np.array([2.0, 1.0]))
        grad_q, grad_x, grad_y = lagrangian_gradient(problem, point)
        np.testing.assert_array_equal(grad_q, [7.0])
        np.testing.assert_array_equal(grad_x, [0.0])
        self.assertEqual(grad_y.size, 0)

    def test_bound_constrained_stationarity(self):
        """min q s.t. q >= 1 at q=1 with mu_lower=1."""
        problem = single_participant(lower=1.0, cost=1.0)
        point = PrimalDualPoint(
            primal=np.array([1.0, 1.0]),
            mu_lower=np.array([1.0]),
            mu_upper=np.zeros(1),
            lam=np.zeros(1),
            nu_e=np.zeros(0),
            nu_i=np.zeros(0),
        )
        grad_q, grad_x, _ = lagrangian_gradient(problem, point)
        np.testing.assert_allclose(grad_q, [0.0], atol=1e-15)
        np.testing.assert_allclose(grad_x, [0.0], atol=1e-15)

    def test_price_enters_both_blocks(self):
        """lambda appears with opposite signs in the q and x blocks."""
        problem = single_participant(cost=0.0)
        point = PrimalDualPoint(
            primal=np.zeros(2),
            mu_lower=np.zeros(1),
            mu_upper=np.zeros(1),
            lam=np.array([0.1]),
            nu_e=np.zeros(0),
            nu_i=np.zeros(0),
        )
        grad_q, grad_x, _ = lagrangian_gradient(problem, point)
        np.testing.assert_allclose(grad_q, [-0.1])
        np.testing.assert_allclose(grad_x, [0.1])

    def test_gas_gradient_matches_finite_differences(self):
        """Analytic Lagrangian gradient of the gas case against central differences."""
        problem = bundled("gas_3junction.json")
        rng = np.random.default_rng(7)
        for _ in range(10):
            primal = random_interior(problem, rng)
            point = PrimalDualPoint(
                primal=primal,
                mu_lower=rng.uniform(0, 1, problem.layout.n_traded),
                mu_upper=rng.uniform(0, 1, problem.layout.n_traded),
                lam=rng.normal(size=problem.layout.n_exposed),
                nu_e=rng.normal(size=problem.n_equality),
                nu_i=rng.uniform(0, 1, problem.n_inequality),
            )
            analytic = np.concatenate(lagrangian_gradient(problem, point))
            h = 1e-6
            numeric = np.array([
                (lagrangian_value(problem, point, primal + h * e)
                 - lagrangian_value(problem, point, primal - h * e)) / (2 * h)
                for e in np.eye(primal.size)
            ])
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6)


class TestJacobians(unittest.TestCase):
    """Gradient-check suite over every family of every formulation."""

    def check_formulation(self, name: str, points: int = 100):
        problem = bundled(name)
        rng = np.random.default_rng(11)
        for _ in range(points):
            primal = random_interior(problem, rng)
            for family in problem.families:
                if family.count == 0:
                    continue
                analytic = family.jacobian(primal).toarray()
                numeric = finite_difference_jacobian(family.evaluator, primal)
                scale = np.maximum(1.0, np.abs(analytic))
                self.assertLessEqual(
                    float(np.max(np.abs(analytic - numeric) / scale)), 1e-6,
                    msg=f"{name}: family {family.name}",
                )

    def test_dc_jacobians(self):
        """DC families."""
        self.check_formulation("dc_3bus.json")

    def test_gas_jacobians(self):
        """Gas families including Weymouth and the inlet coupling."""
        self.check_formulation("gas_3junction.json")

    def test_ac_jacobians(self):
        """AC flow and apparent-power families."""
        self.check_formulation("ac_2bus.json")

    def test_ac_line_charging_jacobians(self):
        """AC families with non-zero line charging on every line."""
        self.check_formulation("ac_3bus_shunt.json")

    def test_conservation_is_linear(self):
        """Residual differences equal the Jacobian times the step."""
        problem = bundled("dc_3bus.json")
        rng = np.random.default_rng(3)
        conservation = problem.families[2]
        jac = conservation.jacobian(np.zeros(problem.layout.total))
        for _ in range(10):
            p = rng.normal(size=problem.layout.total)
            delta = rng.normal(size=problem.layout.total)
            diff = conservation.evaluator(p + delta) - conservation.evaluator(p)
            np.testing.assert_allclose(diff, jac @ delta, atol=1e-12)

    def test_sparsity_pattern_fixed(self):
        """Jacobian structure does not depend on the evaluation point."""
        for name in ("dc_3bus.json", "gas_3junction.json", "ac_2bus.json"):
            problem = bundled(name)
            rng = np.random.default_rng(5)
            reference = None
            for _ in range(10):
                jac = stacked_jacobian(problem, random_interior(problem, rng), problem.families)
                jac = sp.csr_matrix(jac)
                jac.sort_indices()
                pattern = (jac.indptr.tolist(), jac.indices.tolist())
                if reference is None:
                    reference = pattern
                self.assertEqual(pattern, reference, msg=name)


if __name__ == "__main__":
    unittest.main()
