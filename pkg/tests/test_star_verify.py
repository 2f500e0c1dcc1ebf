"""
Unit tests for the scaling paths and star-shape verification.
"""

import unittest
from dataclasses import replace
from pathlib import Path
import sys

import numpy as np
from hypothesis import given, settings, strategies as st

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from case_io import parse_case
from formulations import build_problem
from ipm_solver import solve
from model_core import NlpProblem, QuadraticObjective, VariableLayout
from star_verify import (
    ScalingInputError,
    StarMode,
    StarOptions,
    UnsupportedFormulationError,
    common_pressure_scaled,
    dc_scale_point,
    find_common_pressure,
    interpolate_pressure,
    scale_point,
    scaled_ratio,
    scaling_direction,
    verify_star,
)

CASES = Path(__file__).parent.parent / "cases"


def solved(name: str):
    problem = build_problem(parse_case(CASES / name))
    outcome = solve(problem)
    return problem, outcome.point.primal


class TestDcPath(unittest.TestCase):
    """Global sweep of the DC scaling map."""

    @classmethod
    def setUpClass(cls):
        """Solve the 3-bus case once."""
        cls.problem, cls.primal = solved("dc_3bus.json")

    def test_global_sweep(self):
        """Every sample on [0, 1] stays feasible."""
        path = verify_star(self.problem, self.primal)
        self.assertIs(path.mode, StarMode.GSS)
        self.assertTrue(path.hypothesis_met)
        self.assertEqual(len(path.samples), 101)
        self.assertTrue(path.all_feasible)
        self.assertLessEqual(path.max_violation, path.base_violation + 1e-8)
        self.assertLessEqual(path.samples[0].violation, 1e-12)

    def test_zero_scale_is_origin(self):
        """s = 0 maps the system block to zero and leaves q alone."""
        point = dc_scale_point(self.problem, self.primal, 0.0)
        layout = self.problem.layout
        np.testing.assert_array_equal(point[layout.system], 0.0)
        np.testing.assert_array_equal(point[layout.q], self.primal[layout.q])

    def test_custom_grid(self):
        """A caller-supplied grid is used as given."""
        path = verify_star(self.problem, self.primal, s_grid=[1.0, 0.0, 0.5])
        self.assertEqual([sample.s for sample in path.samples], [0.0, 0.5, 1.0])

    def test_scale_outside_unit_interval(self):
        """s outside [0, 1] is rejected."""
        with self.assertRaises(ScalingInputError):
            verify_star(self.problem, self.primal, s_grid=[0.0, 1.5])
        with self.assertRaises(ScalingInputError):
            scale_point(self.problem, self.primal, -0.1)

    def test_direction_is_path_tangent(self):
        """The direction is the backward difference of the path at s = 1."""
        delta = scaling_direction(self.problem, self.primal)
        h = 1e-6
        numeric = (scale_point(self.problem, self.primal, 1.0)
                   - scale_point(self.problem, self.primal, 1.0 - h)) / h
        np.testing.assert_allclose(delta, -numeric, atol=1e-6)
        np.testing.assert_array_equal(delta[self.problem.layout.q], 0.0)

    def test_unsupported_formulation(self):
        """A problem without a formulation tag has no scaling map."""
        problem = NlpProblem(
            layout=VariableLayout(1, 1, 0),
            system_families=(),
            objective=QuadraticObjective(np.zeros(2), np.zeros(2)),
            fixed_outflow=np.zeros(1),
            lower=np.zeros(1),
            upper=np.ones(1),
        )
        with self.assertRaises(UnsupportedFormulationError):
            verify_star(problem, np.zeros(2))


class TestGasPath(unittest.TestCase):
    """Pressure interpolation and compressor ratios."""

    @classmethod
    def setUpClass(cls):
        """Solve the 3-junction case once."""
        cls.case = parse_case(CASES / "gas_3junction.json")
        cls.problem, cls.primal = solved("gas_3junction.json")

    def test_common_pressure(self):
        """Intersection of [1, 4] nodal and [1, 6] pipe boxes has midpoint 2.5."""
        self.assertAlmostEqual(find_common_pressure(self.case), 2.5)
        self.assertAlmostEqual(common_pressure_scaled(self.problem), 2.5)

    def test_disjoint_boxes(self):
        """Boxes [1, 2] and [3, 4] leave no common pressure."""
        junctions = (
            replace(self.case.junctions[0], pressure_min=1.0, pressure_max=2.0),
            replace(self.case.junctions[1], pressure_min=3.0, pressure_max=4.0),
            self.case.junctions[2],
        )
        case = replace(self.case, junctions=junctions)
        self.assertIsNone(find_common_pressure(case))
        problem = build_problem(case)
        path = verify_star(problem, problem.default_primal())
        self.assertFalse(path.hypothesis_met)
        self.assertIn("no common squared pressure", path.reason)
        self.assertEqual(path.samples, [])

    def test_global_sweep(self):
        """The solved gas point scales feasibly to the common pressure."""
        path = verify_star(self.problem, self.primal, options=StarOptions(samples=11))
        self.assertTrue(path.hypothesis_met, msg=path.reason)
        self.assertEqual(len(path.samples), 11)
        self.assertAlmostEqual(path.pi_c, 2.5)
        origin = path.samples[0].point
        np.testing.assert_allclose(origin[self.problem.blocks["pressure"]], 2.5)
        np.testing.assert_allclose(origin[self.problem.blocks["flow"]], 0.0)
        np.testing.assert_allclose(origin[self.problem.blocks["ratio"]], 1.0)

    def test_direction_needs_pressure(self):
        """The gas tangent requires pi_c."""
        with self.assertRaises(ScalingInputError):
            scaling_direction(self.problem, self.primal)

    def test_direction_is_path_tangent(self):
        """Backward difference of the gas path matches the analytic tangent."""
        delta = scaling_direction(self.problem, self.primal, 2.5)
        h = 1e-6
        numeric = (scale_point(self.problem, self.primal, 1.0, 2.5)
                   - scale_point(self.problem, self.primal, 1.0 - h, 2.5)) / h
        np.testing.assert_allclose(delta, -numeric, atol=1e-4)

    def test_interpolation_endpoints(self):
        """s = 1 keeps the pressure, s = 0 reaches pi_c."""
        pi = np.array([4.0, 1.0])
        np.testing.assert_allclose(interpolate_pressure(pi, 2.5, 1.0), pi)
        np.testing.assert_allclose(interpolate_pressure(pi, 2.5, 0.0), [2.5, 2.5])

    @settings(max_examples=10000, deadline=None)
    @given(
        pi_node=st.floats(0.1, 100.0),
        alpha=st.floats(1.0, 2.0),
        pi_c=st.floats(0.1, 100.0),
        s=st.floats(0.0, 1.0),
    )
    def test_ratio_identity(self, pi_node, alpha, pi_c, s):
        """The scaled ratio keeps the inlet coupling and stays in [1, alpha]."""
        pi_inlet = alpha * pi_node
        ratio = scaled_ratio(np.array([pi_node]), np.array([pi_inlet]), pi_c, s)[0]
        node_s = interpolate_pressure(pi_node, pi_c, s)
        inlet_s = interpolate_pressure(pi_inlet, pi_c, s)
        self.assertAlmostEqual(node_s * ratio, inlet_s, delta=1e-9 * (1.0 + abs(inlet_s)))
        self.assertGreaterEqual(ratio, 1.0 - 1e-9)
        self.assertLessEqual(ratio, alpha + 1e-9)

    @settings(max_examples=2000, deadline=None)
    @given(
        pi_node=st.floats(0.1, 100.0),
        alpha=st.floats(1.1, 3.0),
        pi_c=st.floats(0.1, 100.0),
        s=st.floats(0.01, 0.95),
    )
    def test_ratio_closed_form(self, pi_node, alpha, pi_c, s):
        """(alpha_s - 1) / (alpha - 1) equals the node pressure's weight in the interpolation."""
        ratio = scaled_ratio(np.array([pi_node]), np.array([alpha * pi_node]), pi_c, s)[0]
        fraction = (ratio - 1.0) / (alpha - 1.0)
        weight = s**2 * pi_node / ((1.0 - s**2) * pi_c + s**2 * pi_node)
        self.assertAlmostEqual(fraction, weight, delta=1e-12)
        self.assertGreater(weight, 0.0)
        self.assertLess(weight, 1.0)
        self.assertGreater(fraction, 0.0)
        self.assertLess(fraction, 1.0)


class TestAcPath(unittest.TestCase):
    """Local sweep of the AC scaling map."""

    def test_local_sweep(self):
        """A positive feasible window near s = 1 exists."""
        problem, primal = solved("ac_2bus.json")
        path = verify_star(problem, primal)
        self.assertIs(path.mode, StarMode.LSS)
        self.assertTrue(path.hypothesis_met, msg=path.reason)
        self.assertGreater(path.epsilon_star, 0.0)
        self.assertEqual(len(path.samples), 21)

    def test_binding_voltage(self):
        """A voltage at its lower bound leaves no window."""
        problem, primal = solved("ac_2bus_binding.json")
        path = verify_star(problem, primal)
        self.assertFalse(path.hypothesis_met)
        self.assertEqual(path.epsilon_star, 0.0)
        self.assertEqual(path.reason, "voltage lower bound binding at bus b2")

    def test_voltage_follows_square_root(self):
        """Voltages scale by sqrt(s), angles are kept."""
        problem, primal = solved("ac_2bus.json")
        point = scale_point(problem, primal, 0.25)
        blocks = problem.blocks
        np.testing.assert_allclose(point[blocks["voltage"]], 0.5 * primal[blocks["voltage"]])
        np.testing.assert_array_equal(point[blocks["angle"]], primal[blocks["angle"]])


class TestOptions(unittest.TestCase):
    """StarOptions validation."""

    def test_invalid_options(self):
        """Too few samples or a bad epsilon tolerance are rejected."""
        with self.assertRaises(ValueError):
            StarOptions(samples=1)
        with self.assertRaises(ValueError):
            StarOptions(epsilon_tol=1.0)


if __name__ == "__main__":
    unittest.main()
