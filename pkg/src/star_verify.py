"""
Scaling paths toward the zero-flow system point.

Each formulation has an explicit map that takes a feasible system point and a
factor s in [0, 1] to another point. DC scales linearly, gas interpolates the
squared pressures toward a common value pi_c and scales flows by s, AC scales
injections and flows by s and voltages by sqrt(s). Sweeping s and evaluating
the system constraints certifies, along that path, that the feasible set is
globally (GSS) or locally (LSS) star shaped.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from model_core import DEFAULT_TOL_FEAS, NlpProblem, system_violation
from formulations import GasCase

logger = logging.getLogger(__name__)


class UnsupportedFormulationError(ValueError):
    """Raised when no scaling map is registered for a problem's formulation."""


class ScalingInputError(ValueError):
    """Raised for scale factors outside [0, 1] or corrupted scaling inputs."""


class StarMode(Enum):
    GSS = "gss"
    LSS = "lss"


@dataclass(frozen=True)
class StarOptions:
    samples: int = 101
    lss_samples: int = 21
    epsilon_tol: float = 1e-4
    tol_feas: float = DEFAULT_TOL_FEAS
    active_tol: float = 1e-6

    def __post_init__(self):
        if self.samples < 2 or self.lss_samples < 2:
            raise ValueError("at least two samples are needed")
        if not 0.0 < self.epsilon_tol < 1.0:
            raise ValueError("epsilon_tol must lie in (0, 1)")
        if self.tol_feas < 0.0 or self.active_tol < 0.0:
            raise ValueError("tolerances must be non-negative")


@dataclass(frozen=True)
class ScalingSample:
    s: float
    point: np.ndarray = field(repr=False)
    violation: float
    feasible: bool


@dataclass(frozen=True)
class ScalingPath:
    """
    Sweep of the scaling map from a base point.

    ``hypothesis_met`` is True when every sample is feasible (GSS) or a positive
    epsilon_star was found (LSS). ``reason`` explains a False.
    """

    formulation: str
    mode: StarMode
    base_point: np.ndarray = field(repr=False)
    samples: List[ScalingSample]
    base_violation: float
    hypothesis_met: bool
    pi_c: Optional[float] = None
    epsilon_star: Optional[float] = None
    reason: str = ""

    @property
    def max_violation(self) -> float:
        return max((sample.violation for sample in self.samples), default=0.0)

    @property
    def all_feasible(self) -> bool:
        return all(sample.feasible for sample in self.samples)


def _check_scale(s: float) -> float:
    s = float(s)
    if not 0.0 <= s <= 1.0:
        raise ScalingInputError(f"scale factor {s} outside [0, 1]")
    return s


def dc_scale_point(problem: NlpProblem, primal: np.ndarray, s: float) -> np.ndarray:
    """(s p, s theta, s p^l). q is left unchanged; the path lives in the system set."""
    s = _check_scale(s)
    out = problem.layout.check(primal).copy()
    out[problem.layout.system] *= s
    return out


def interpolate_pressure(pi: np.ndarray, pi_c: float, s: float) -> np.ndarray:
    """pi_c + s^2 (pi - pi_c), the convex combination (1 - s^2) pi_c + s^2 pi."""
    return pi_c + s**2 * (np.asarray(pi, dtype=float) - pi_c)


def scaled_ratio(pi_node: np.ndarray, pi_inlet: np.ndarray, pi_c: float, s: float) -> np.ndarray:
    """Compression ratio keeping ``pi_node^s * alpha^s = pi_inlet^s``."""
    denominator = interpolate_pressure(pi_node, pi_c, s)
    if np.any(denominator <= 0.0):
        raise ScalingInputError("non-positive interpolated inlet node pressure")
    return interpolate_pressure(pi_inlet, pi_c, s) / denominator


def ogf_scale_point(problem: NlpProblem, primal: np.ndarray, s: float, pi_c: float) -> np.ndarray:
    """
    Squared pressures move toward pi_c with weight s^2, flows and injections
    scale by s, compressor ratios follow from the inlet coupling.

    Args:
        problem: OGF problem
        primal: Base point
        s: Scale factor in [0, 1]
        pi_c: Common squared pressure in the problem's scaled units
    """
    s = _check_scale(s)
    if not pi_c > 0.0:
        raise ScalingInputError(f"common pressure {pi_c} must be positive")
    base = problem.layout.check(primal)
    blocks = problem.blocks
    out = base.copy()
    for name in ("pressure", "pressure_in", "pressure_out"):
        out[blocks[name]] = interpolate_pressure(base[blocks[name]], pi_c, s)
    out[blocks["flow"]] = s * base[blocks["flow"]]
    out[problem.layout.x] = s * base[problem.layout.x]
    comp = problem.topology["compressor_pipes"]
    if len(comp):
        inlet_node = problem.topology["from_node"][comp]
        out[blocks["ratio"]] = scaled_ratio(
            base[blocks["pressure"]][inlet_node], base[blocks["pressure_in"]][comp], pi_c, s
        )
    return out


def ac_scale_point(problem: NlpProblem, primal: np.ndarray, s: float) -> np.ndarray:
    """(s p, s q, sqrt(s) v, theta, s p^l, s q^l)."""
    s = _check_scale(s)
    out = problem.layout.check(primal).copy()
    blocks = problem.blocks
    out[problem.layout.x] *= s
    out[blocks["flow_p"]] *= s
    out[blocks["flow_q"]] *= s
    out[blocks["voltage"]] *= np.sqrt(s)
    return out


def find_common_pressure(case: GasCase) -> Optional[float]:
    """
    Midpoint of the intersection of every nodal and pipe squared-pressure box,
    in the case's physical units, or None when the intersection is empty.
    """
    lows = [j.pressure_min for j in case.junctions]
    highs = [j.pressure_max for j in case.junctions]
    for pipe in case.pipes:
        if pipe.pressure_min is not None:
            lows.append(pipe.pressure_min)
            highs.append(pipe.pressure_max)
    if not lows:
        return None
    lo, hi = max(lows), min(highs)
    if lo > hi:
        return None
    return 0.5 * (lo + hi)


def common_pressure_scaled(problem: NlpProblem) -> Optional[float]:
    """find_common_pressure in the problem's scaled units."""
    if not isinstance(problem.case, GasCase):
        raise ScalingInputError("gas problem carries no case to read pressure bounds from")
    pi_c = find_common_pressure(problem.case)
    return None if pi_c is None else pi_c / problem.topology["pressure_scale"]


def dc_direction(problem: NlpProblem, primal: np.ndarray) -> np.ndarray:
    delta = np.zeros(problem.layout.total)
    delta[problem.layout.system] = -primal[problem.layout.system]
    return delta


def ogf_direction(problem: NlpProblem, primal: np.ndarray, pi_c: float) -> np.ndarray:
    blocks = problem.blocks
    delta = np.zeros(problem.layout.total)
    for name in ("pressure", "pressure_in", "pressure_out"):
        delta[blocks[name]] = -2.0 * (primal[blocks[name]] - pi_c)
    delta[blocks["flow"]] = -primal[blocks["flow"]]
    delta[problem.layout.x] = -primal[problem.layout.x]
    comp = problem.topology["compressor_pipes"]
    if len(comp):
        pi_node = primal[blocks["pressure"]][problem.topology["from_node"][comp]]
        pi_inlet = primal[blocks["pressure_in"]][comp]
        delta[blocks["ratio"]] = -2.0 * pi_c * (pi_inlet - pi_node) / pi_node**2
    return delta


def ac_direction(problem: NlpProblem, primal: np.ndarray) -> np.ndarray:
    blocks = problem.blocks
    delta = np.zeros(problem.layout.total)
    delta[problem.layout.x] = -primal[problem.layout.x]
    delta[blocks["voltage"]] = -0.5 * primal[blocks["voltage"]]
    delta[blocks["flow_p"]] = -primal[blocks["flow_p"]]
    delta[blocks["flow_q"]] = -primal[blocks["flow_q"]]
    return delta


@dataclass(frozen=True)
class StarConstruction:
    scale: Callable[..., np.ndarray]
    direction: Callable[..., np.ndarray]
    default_mode: StarMode
    needs_pressure: bool = False


STAR_CONSTRUCTIONS: Dict[str, StarConstruction] = {
    "dc": StarConstruction(dc_scale_point, dc_direction, StarMode.GSS),
    "ogf": StarConstruction(ogf_scale_point, ogf_direction, StarMode.GSS, needs_pressure=True),
    "ac": StarConstruction(ac_scale_point, ac_direction, StarMode.LSS),
}


def construction_for(problem: NlpProblem) -> StarConstruction:
    try:
        return STAR_CONSTRUCTIONS[problem.formulation]
    except KeyError:
        raise UnsupportedFormulationError(
            f"no scaling map registered for formulation {problem.formulation!r}"
        ) from None


def scale_point(
    problem: NlpProblem, primal: np.ndarray, s: float, pi_c: Optional[float] = None
) -> np.ndarray:
    construction = construction_for(problem)
    if construction.needs_pressure:
        return construction.scale(problem, primal, s, pi_c)
    return construction.scale(problem, primal, s)


def scaling_direction(
    problem: NlpProblem, primal: np.ndarray, pi_c: Optional[float] = None
) -> np.ndarray:
    """
    Tangent of the scaling path at s = 1, pointing toward smaller s
    (the negative s-derivative of the scaled point). q entries are zero.
    """
    construction = construction_for(problem)
    primal = problem.layout.check(primal)
    if construction.needs_pressure:
        if pi_c is None:
            raise ScalingInputError("gas scaling direction needs a common pressure")
        return construction.direction(problem, primal, pi_c)
    return construction.direction(problem, primal)


def _sample(problem, primal, s, pi_c, limit) -> ScalingSample:
    point = scale_point(problem, primal, s, pi_c)
    violation = system_violation(problem, point)
    return ScalingSample(float(s), point, violation, violation <= limit)


def _binding_voltage(problem: NlpProblem, primal: np.ndarray, tol: float) -> Optional[str]:
    """Label of the first bus whose voltage sits within ``tol`` of its lower bound."""
    family = next((f for f in problem.system_families if f.name == "voltage_box"), None)
    if family is None:
        return None
    n_bus = len(problem.blocks["voltage"])
    margins = -family.evaluator(primal)[:n_bus]
    binding = np.flatnonzero(margins <= tol)
    if binding.size == 0:
        return None
    return problem.topology["node_ids"][int(binding[0])]


def verify_star(
    problem: NlpProblem,
    primal: np.ndarray,
    s_grid: Optional[Sequence[float]] = None,
    mode: Optional[StarMode] = None,
    options: Optional[StarOptions] = None,
) -> ScalingPath:
    """
    Sweep the formulation's scaling map from ``primal``.

    GSS mode evaluates the system violation on ``s_grid`` (default ``options.samples``
    uniform points on [0, 1]). LSS mode bisects the largest epsilon such that
    ``options.lss_samples`` uniform points on [1 - epsilon, 1] are feasible. A
    sample is feasible when its violation is at most tol_feas plus the base
    point's own violation.

    Raises:
        UnsupportedFormulationError: No scaling map for the formulation
        ScalingInputError: Grid values outside [0, 1]
    """
    options = options or StarOptions()
    construction = construction_for(problem)
    mode = mode or construction.default_mode
    primal = problem.layout.check(primal)
    base_violation = system_violation(problem, primal)
    limit = options.tol_feas + base_violation
    base_system = primal[problem.layout.system].copy()

    pi_c = None
    if construction.needs_pressure:
        pi_c = common_pressure_scaled(problem)
        if pi_c is None:
            return ScalingPath(
                formulation=problem.formulation,
                mode=mode,
                base_point=base_system,
                samples=[],
                base_violation=base_violation,
                hypothesis_met=False,
                reason="nodal and pipe pressure boxes have no common squared pressure",
            )

    if mode is StarMode.GSS:
        grid = np.linspace(0.0, 1.0, options.samples) if s_grid is None else np.sort(
            np.asarray(s_grid, dtype=float)
        )
        for s in grid:
            _check_scale(s)
        samples = [_sample(problem, primal, s, pi_c, limit) for s in grid]
        met = all(sample.feasible for sample in samples)
        reason = "" if met else "scaled point infeasible at s=%g" % next(
            sample.s for sample in samples if not sample.feasible
        )
        logger.info(
            "GSS sweep over %d samples: max violation %.3e", len(samples),
            max((sample.violation for sample in samples), default=0.0),
        )
        return ScalingPath(
            formulation=problem.formulation,
            mode=mode,
            base_point=base_system,
            samples=samples,
            base_violation=base_violation,
            hypothesis_met=met,
            pi_c=pi_c,
            reason=reason,
        )

    bus = _binding_voltage(problem, primal, options.active_tol)
    if bus is not None:
        return ScalingPath(
            formulation=problem.formulation,
            mode=mode,
            base_point=base_system,
            samples=[_sample(problem, primal, 1.0, pi_c, limit)],
            base_violation=base_violation,
            hypothesis_met=False,
            pi_c=pi_c,
            epsilon_star=0.0,
            reason=f"voltage lower bound binding at bus {bus}",
        )

    def window(epsilon: float) -> List[ScalingSample]:
        grid = np.linspace(1.0 - epsilon, 1.0, options.lss_samples)
        return [_sample(problem, primal, s, pi_c, limit) for s in grid]

    def feasible(epsilon: float) -> bool:
        return all(sample.feasible for sample in window(epsilon))

    lo, hi = 0.0, 1.0
    if feasible(hi):
        lo = hi
    while hi - lo > options.epsilon_tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    samples = window(lo)
    met = lo > 0.0
    logger.info("LSS bisection: epsilon* = %.6f", lo)
    return ScalingPath(
        formulation=problem.formulation,
        mode=mode,
        base_point=base_system,
        samples=samples,
        base_violation=base_violation,
        hypothesis_met=met,
        pi_c=pi_c,
        epsilon_star=lo,
        reason="" if met else "no feasible neighbourhood of s=1 along the scaling path",
    )
