"""
Case descriptions and problem builders for the three network systems:
DC optimal power flow, steady-state optimal gas flow and AC optimal power flow.

Cases hold physical units. Builders rescale before assembling the problem:
power quantities by the base MVA, gas flows by the flow base and squared
pressures by the squared nominal pressure. Objectives are divided by the same
quantity scale so that conservation duals stay in price units.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import scipy.sparse as sp

from model_core import (
    ConstraintFamily,
    FamilyKind,
    NlpProblem,
    QuadraticObjective,
    VariableLayout,
    linear_family,
)

logger = logging.getLogger(__name__)


class CaseBuildError(ValueError):
    """Raised when a case violates the invariants a builder relies on."""


# ---------------------------------------------------------------------------
# Case data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bus:
    id: str
    p_load: float = 0.0
    q_load: float = 0.0
    v_min: Optional[float] = None
    v_max: Optional[float] = None


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_max: float
    p_min: float = 0.0
    cost: float = 0.0
    cost_quadratic: float = 0.0
    q_max: float = 0.0
    q_min: float = 0.0
    q_cost: float = 0.0


@dataclass(frozen=True)
class Line:
    """Branch (i, j). ``x`` is the series reactance in per-unit, ``limit`` in MW (DC) or MVA (AC)."""

    id: str
    from_bus: str
    to_bus: str
    x: float
    limit: float
    r: float = 0.0
    b_shunt: float = 0.0


@dataclass(frozen=True)
class PowerCase:
    kind: str
    buses: Tuple[Bus, ...]
    generators: Tuple[Generator, ...]
    lines: Tuple[Line, ...]
    base_mva: float = 100.0
    reference: Optional[str] = None
    name: str = ""
    known_solution: Optional[Mapping[str, float]] = field(default=None, compare=False)


@dataclass(frozen=True)
class Junction:
    """Gas node. A junction trades gas only when both supply bounds are given."""

    id: str
    pressure_min: float
    pressure_max: float
    withdrawal: float = 0.0
    supply_min: Optional[float] = None
    supply_max: Optional[float] = None
    price: float = 0.0

    @property
    def has_nomination(self) -> bool:
        return self.supply_min is not None and self.supply_max is not None


@dataclass(frozen=True)
class Pipe:
    """
    Pipeline (i, j). Either ``resistance`` is given or it is computed from the
    physical parameters and the case wave speed.
    """

    id: str
    from_junction: str
    to_junction: str
    resistance: Optional[float] = None
    length: Optional[float] = None
    diameter: Optional[float] = None
    area: Optional[float] = None
    friction: Optional[float] = None
    pressure_min: Optional[float] = None
    pressure_max: Optional[float] = None


@dataclass(frozen=True)
class Compressor:
    id: str
    pipe: str
    max_ratio: float
    cost: float = 0.0


@dataclass(frozen=True)
class GasCase:
    """Squared pressures are in (nominal pressure units)^2, flows in flow units."""

    junctions: Tuple[Junction, ...]
    pipes: Tuple[Pipe, ...]
    compressors: Tuple[Compressor, ...] = ()
    nominal_pressure: float = 1.0
    flow_base: float = 1.0
    wave_speed: Optional[float] = None
    name: str = ""
    known_solution: Optional[Mapping[str, float]] = field(default=None, compare=False)

    kind: str = "gas"


def pipe_resistance(pipe: Pipe, wave_speed: Optional[float]) -> float:
    """beta = a^2 lambda L / (A^2 D), with A = pi D^2 / 4 when no area is given."""
    if pipe.resistance is not None:
        return float(pipe.resistance)
    missing = [
        name for name, value in (
            ("length", pipe.length),
            ("diameter", pipe.diameter),
            ("friction", pipe.friction),
            ("wave_speed", wave_speed),
        ) if value is None
    ]
    if missing:
        raise CaseBuildError(
            f"pipe {pipe.id}: resistance not given and {', '.join(missing)} missing"
        )
    area = pipe.area if pipe.area is not None else math.pi * pipe.diameter**2 / 4.0
    return wave_speed**2 * pipe.friction * pipe.length / (area**2 * pipe.diameter)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


class _Allocator:
    """Hands out contiguous index ranges in the dependent block."""

    def __init__(self, start: int):
        self.next = start
        self.blocks: Dict[str, np.ndarray] = {}

    def take(self, name: str, count: int) -> np.ndarray:
        idx = np.arange(self.next, self.next + count)
        self.next += count
        self.blocks[name] = idx
        return idx


def _check_connected(kind: str, nodes: Sequence[str], edges: Sequence[Tuple[str, str, str]]) -> None:
    ids = set()
    for node in nodes:
        if node in ids:
            raise CaseBuildError(f"duplicate node id {node}")
        ids.add(node)
    graph = nx.MultiGraph()
    graph.add_nodes_from(nodes)
    for edge_id, a, b in edges:
        for end in (a, b):
            if end not in ids:
                raise CaseBuildError(f"{kind} {edge_id}: unknown node id {end}")
        if a == b:
            raise CaseBuildError(f"{kind} {edge_id}: both ends at node {a}")
        graph.add_edge(a, b, key=edge_id)
    if len(nodes) == 0:
        raise CaseBuildError("case has no nodes")
    if not nx.is_connected(graph):
        parts = nx.number_connected_components(graph)
        raise CaseBuildError(f"network is disconnected ({parts} components)")


def _incidence(node_index: Mapping[str, int], ends: Sequence[Tuple[str, str]]) -> sp.csr_matrix:
    """Signed node-edge incidence: +1 at the from node, -1 at the to node."""
    m = len(ends)
    rows = [node_index[a] for a, _ in ends] + [node_index[b] for _, b in ends]
    cols = list(range(m)) * 2
    data = [1.0] * m + [-1.0] * m
    return sp.csr_matrix((data, (rows, cols)), shape=(len(node_index), m))


def _selector(indices: np.ndarray, n: int) -> sp.csr_matrix:
    k = len(indices)
    return sp.csr_matrix((np.ones(k), (np.arange(k), indices)), shape=(k, n))


def _box_family(
    name: str,
    n: int,
    indices: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    labels: Sequence[str],
) -> ConstraintFamily:
    """Rows ``lower - z <= 0`` for every index, then ``z - upper <= 0``."""
    select = _selector(np.asarray(indices, dtype=int), n)
    matrix = sp.vstack([-select, select], format="csr")
    offset = np.concatenate([np.asarray(lower, dtype=float), -np.asarray(upper, dtype=float)])
    row_labels = [f"{label}>=min" for label in labels] + [f"{label}<=max" for label in labels]
    return linear_family(name, FamilyKind.SYSTEM_INEQUALITY, matrix, offset, row_labels)


def _balance_family(
    name: str,
    n: int,
    incidence: sp.csr_matrix,
    flow_idx: np.ndarray,
    injection_idx: np.ndarray,
    labels: Sequence[str],
) -> ConstraintFamily:
    """Rows ``incidence @ flow - injection = 0``."""
    n_nodes = incidence.shape[0]
    inc = incidence.tocoo()
    rows = np.concatenate([inc.row, np.arange(n_nodes)])
    cols = np.concatenate([np.asarray(flow_idx)[inc.col], injection_idx])
    data = np.concatenate([inc.data, -np.ones(n_nodes)])
    matrix = sp.csr_matrix((data, (rows, cols)), shape=(n_nodes, n))
    return linear_family(name, FamilyKind.SYSTEM_EQUALITY, matrix, np.zeros(n_nodes), labels)


def _reference_family(n: int, theta_idx: np.ndarray, ref: int, ref_id: str) -> ConstraintFamily:
    matrix = _selector(np.array([theta_idx[ref]]), n)
    return linear_family(
        "reference_angle", FamilyKind.SYSTEM_EQUALITY, matrix, np.zeros(1), [f"theta[{ref_id}]=0"]
    )


def _supply_map(n_nodes: int, owners: Sequence[int]) -> sp.csr_matrix:
    k = len(owners)
    return sp.csr_matrix((np.ones(k), (list(owners), np.arange(k))), shape=(n_nodes, k))


def _reference_index(case: PowerCase, ids: List[str]) -> int:
    if case.reference is None:
        return 0
    if case.reference not in ids:
        raise CaseBuildError(f"unknown reference node id {case.reference}")
    return ids.index(case.reference)


def _generator_owners(case: PowerCase, node_index: Mapping[str, int]) -> List[int]:
    owners: List[int] = []
    for gen in case.generators:
        if gen.bus not in node_index:
            raise CaseBuildError(f"generator {gen.id}: unknown node id {gen.bus}")
        owner = node_index[gen.bus]
        if owner in owners:
            raise CaseBuildError(f"generator {gen.id}: bus {gen.bus} already has a generator")
        if gen.p_min > gen.p_max:
            raise CaseBuildError(f"generator {gen.id}: p_min exceeds p_max")
        owners.append(owner)
    return owners


def _validate_lines(case: PowerCase) -> None:
    for line in case.lines:
        if line.limit <= 0.0:
            raise CaseBuildError(f"line {line.id}: limit must be positive")


# ---------------------------------------------------------------------------
# DC optimal power flow
# ---------------------------------------------------------------------------


def build_dc_opf(case: PowerCase) -> NlpProblem:
    """
    Build the DC OPF problem.

    Variables: q = p^g (one per generator), x = p (one per bus),
    y = (theta per bus, p^l per line). Totals are n_gen, n_bus and n_bus + n_line.
    Equalities: nodal balance (n_bus), Ohm's law (n_line), reference angle (1).
    Inequalities: two one-sided flow limits per line.

    Args:
        case: Power case in MW and per-unit reactances

    Returns:
        NlpProblem tagged "dc"

    Raises:
        CaseBuildError: Disconnected network, unknown ids, non-positive limits or reactances
    """
    ids = [bus.id for bus in case.buses]
    _check_connected("line", ids, [(l.id, l.from_bus, l.to_bus) for l in case.lines])
    _validate_lines(case)
    node_index = {bus_id: i for i, bus_id in enumerate(ids)}
    owners = _generator_owners(case, node_index)
    for line in case.lines:
        if line.x <= 0.0:
            raise CaseBuildError(f"line {line.id}: reactance must be positive")

    base = float(case.base_mva)
    n_bus, n_line, n_gen = len(ids), len(case.lines), len(case.generators)
    layout = VariableLayout(n_gen, n_bus, n_bus + n_line)
    n = layout.total
    alloc = _Allocator(layout.y.start)
    theta = alloc.take("theta", n_bus)
    flow = alloc.take("flow", n_line)
    x_idx = np.arange(layout.x.start, layout.x.stop)
    incidence = _incidence(node_index, [(l.from_bus, l.to_bus) for l in case.lines])
    ref = _reference_index(case, ids)

    ohm = sp.lil_matrix((n_line, n))
    for k, line in enumerate(case.lines):
        ohm[k, theta[node_index[line.from_bus]]] = 1.0
        ohm[k, theta[node_index[line.to_bus]]] = -1.0
        ohm[k, flow[k]] = -line.x
    limits = np.array([l.limit for l in case.lines]) / base

    families = (
        _balance_family("balance", n, incidence, flow, x_idx, [f"balance[{i}]" for i in ids]),
        linear_family(
            "ohm", FamilyKind.SYSTEM_EQUALITY, ohm, np.zeros(n_line),
            [f"ohm[{l.id}]" for l in case.lines],
        ),
        _reference_family(n, theta, ref, ids[ref]),
        _box_family("flow_limit", n, flow, -limits, limits, [f"p_l[{l.id}]" for l in case.lines]),
    )

    linear = np.zeros(n)
    quadratic = np.zeros(n)
    linear[layout.q] = [g.cost for g in case.generators]
    quadratic[layout.q] = [2.0 * g.cost_quadratic * base for g in case.generators]
    lower = np.array([g.p_min for g in case.generators]) / base
    upper = np.array([g.p_max for g in case.generators]) / base
    d = np.array([bus.p_load for bus in case.buses]) / base

    supply = _supply_map(n_bus, owners)
    q0 = 0.5 * (lower + upper)
    primal = np.zeros(n)
    primal[layout.q] = q0
    primal[layout.x] = supply @ q0 - d

    labels = (
        [f"p_g[{g.id}]" for g in case.generators]
        + [f"p[{i}]" for i in ids]
        + [f"theta[{i}]" for i in ids]
        + [f"p_l[{l.id}]" for l in case.lines]
    )
    logger.info("built DC OPF: %d buses, %d lines, %d generators", n_bus, n_line, n_gen)
    return NlpProblem(
        layout=layout,
        system_families=families,
        objective=QuadraticObjective(linear, quadratic),
        fixed_outflow=d,
        lower=lower,
        upper=upper,
        supply_map=supply,
        formulation="dc",
        blocks=alloc.blocks,
        topology={
            "node_ids": ids,
            "edge_ids": [l.id for l in case.lines],
            "incidence": incidence,
            "edge_flows": [flow],
            "reference": ref,
            "quantity_scale": base,
        },
        initial_primal=primal,
        labels=tuple(labels),
        case=case,
    )


# ---------------------------------------------------------------------------
# Optimal gas flow
# ---------------------------------------------------------------------------


def _weymouth_family(
    n: int,
    p_in: np.ndarray,
    p_out: np.ndarray,
    phi: np.ndarray,
    beta: np.ndarray,
    labels: Sequence[str],
    epsilon: float = 0.0,
) -> ConstraintFamily:
    """
    Rows ``pi_in - pi_out - beta * phi |phi|``. With ``epsilon > 0`` the term
    ``phi |phi|`` becomes ``phi sqrt(phi^2 + epsilon)``, which is C2.
    """
    m = len(phi)
    rows = np.concatenate([np.arange(m)] * 3)
    cols = np.concatenate([p_in, p_out, phi])

    def psi(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if epsilon > 0.0:
            r = np.sqrt(f**2 + epsilon)
            return f * r, r + f**2 / r, 3.0 * f / r - f**3 / r**3
        return f * np.abs(f), 2.0 * np.abs(f), 2.0 * np.sign(f)

    def evaluator(primal: np.ndarray) -> np.ndarray:
        value, _, _ = psi(primal[phi])
        return primal[p_in] - primal[p_out] - beta * value

    def jacobian(primal: np.ndarray) -> sp.csr_matrix:
        _, slope, _ = psi(primal[phi])
        data = np.concatenate([np.ones(m), -np.ones(m), -beta * slope])
        return sp.csr_matrix((data, (rows, cols)), shape=(m, n))

    def hessian(primal: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
        _, _, curvature = psi(primal[phi])
        return sp.csr_matrix((-weights * beta * curvature, (phi, phi)), shape=(n, n))

    smoothing = None
    if epsilon == 0.0:
        def smoothing(eps: float) -> ConstraintFamily:
            return _weymouth_family(n, p_in, p_out, phi, beta, labels, eps)

    return ConstraintFamily(
        name="weymouth",
        kind=FamilyKind.SYSTEM_EQUALITY,
        count=m,
        evaluator=evaluator,
        jacobian=jacobian,
        hessian=hessian,
        labels=tuple(labels),
        smoothing=smoothing,
    )


def _inlet_coupling_family(
    n: int,
    node_pressure: np.ndarray,
    p_in: np.ndarray,
    ratio_col: np.ndarray,
    labels: Sequence[str],
) -> ConstraintFamily:
    """
    Rows ``pi_i * alpha - pi_in`` on compressor pipes and ``pi_i - pi_in`` on
    plain pipes. ``ratio_col`` holds the alpha index per pipe, or -1.
    """
    m = len(p_in)
    comp = np.flatnonzero(ratio_col >= 0)
    alpha = ratio_col[comp]
    rows = np.concatenate([np.arange(m), np.arange(m), comp])
    cols = np.concatenate([node_pressure, p_in, alpha])

    def ratios(primal: np.ndarray) -> np.ndarray:
        out = np.ones(m)
        out[comp] = primal[alpha]
        return out

    def evaluator(primal: np.ndarray) -> np.ndarray:
        return primal[node_pressure] * ratios(primal) - primal[p_in]

    def jacobian(primal: np.ndarray) -> sp.csr_matrix:
        data = np.concatenate([ratios(primal), -np.ones(m), primal[node_pressure[comp]]])
        return sp.csr_matrix((data, (rows, cols)), shape=(m, n))

    def hessian(primal: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
        w = weights[comp]
        i = np.concatenate([node_pressure[comp], alpha])
        j = np.concatenate([alpha, node_pressure[comp]])
        return sp.csr_matrix((np.concatenate([w, w]), (i, j)), shape=(n, n))

    return ConstraintFamily(
        name="inlet_coupling",
        kind=FamilyKind.SYSTEM_EQUALITY,
        count=m,
        evaluator=evaluator,
        jacobian=jacobian,
        hessian=hessian,
        labels=tuple(labels),
        linear=comp.size == 0,
    )


def build_ogf(case: GasCase) -> NlpProblem:
    """
    Build the steady-state optimal gas flow problem.

    Variables: q = one supply per trading junction, x = one net injection per
    junction, y = (pi per junction, pi_in per pipe, pi_out per pipe, phi per pipe,
    alpha per compressor). Totals are n_nominated, n_junction and
    n_junction + 3 n_pipe + n_compressor.
    Equalities: flow balance, Weymouth, inlet coupling, outlet coupling.
    Inequalities: nodal pressure boxes, pipe-end pressure boxes (pipes with bounds),
    ratio boxes 1 <= alpha <= alpha_max.
    Objective: sum of c_i q_i plus kappa (alpha - 1) per compressor.

    A compressor whose max ratio is exactly 1 is a plain pipe.
    """
    ids = [j.id for j in case.junctions]
    _check_connected("pipe", ids, [(p.id, p.from_junction, p.to_junction) for p in case.pipes])
    node_index = {j: i for i, j in enumerate(ids)}
    pipe_index = {p.id: k for k, p in enumerate(case.pipes)}
    if len(pipe_index) != len(case.pipes):
        raise CaseBuildError("duplicate pipe id")
    if case.nominal_pressure <= 0.0 or case.flow_base <= 0.0:
        raise CaseBuildError("nominal pressure and flow base must be positive")

    for j in case.junctions:
        if not 0.0 < j.pressure_min <= j.pressure_max:
            raise CaseBuildError(f"junction {j.id}: pressure bounds must be positive and ordered")
        if (j.supply_min is None) != (j.supply_max is None):
            raise CaseBuildError(f"junction {j.id}: supply bounds must be given together")
        if j.has_nomination and j.supply_min > j.supply_max:
            raise CaseBuildError(f"junction {j.id}: supply_min exceeds supply_max")
    for p in case.pipes:
        if (p.pressure_min is None) != (p.pressure_max is None):
            raise CaseBuildError(f"pipe {p.id}: pressure bounds must be given together")
        if p.pressure_min is not None and not 0.0 < p.pressure_min <= p.pressure_max:
            raise CaseBuildError(f"pipe {p.id}: pressure bounds must be positive and ordered")

    compressor_of: Dict[int, Compressor] = {}
    for c in case.compressors:
        if c.pipe not in pipe_index:
            raise CaseBuildError(f"compressor {c.id}: unknown pipe id {c.pipe}")
        if c.max_ratio < 1.0:
            raise CaseBuildError(f"compressor {c.id}: max ratio {c.max_ratio} below 1")
        if c.cost < 0.0:
            raise CaseBuildError(f"compressor {c.id}: cost must be non-negative")
        if pipe_index[c.pipe] in compressor_of:
            raise CaseBuildError(f"pipe {c.pipe} has more than one compressor")
        if c.max_ratio > 1.0:
            compressor_of[pipe_index[c.pipe]] = c
        else:
            logger.info("compressor %s has max ratio 1 and acts as a plain pipe", c.id)

    beta = np.array([pipe_resistance(p, case.wave_speed) for p in case.pipes])
    for p, b in zip(case.pipes, beta):
        if not b > 0.0:
            raise CaseBuildError(f"pipe {p.id}: resistance must be positive")

    p_scale = case.nominal_pressure**2
    f_scale = case.flow_base
    beta_s = beta * f_scale**2 / p_scale

    traders = [j for j in case.junctions if j.has_nomination]
    comp_pipes = sorted(compressor_of)
    n_j, n_p, n_c = len(ids), len(case.pipes), len(comp_pipes)
    layout = VariableLayout(len(traders), n_j, n_j + 3 * n_p + n_c)
    n = layout.total
    alloc = _Allocator(layout.y.start)
    pressure = alloc.take("pressure", n_j)
    p_in = alloc.take("pressure_in", n_p)
    p_out = alloc.take("pressure_out", n_p)
    phi = alloc.take("flow", n_p)
    alpha = alloc.take("ratio", n_c)
    x_idx = np.arange(layout.x.start, layout.x.stop)

    ends = [(node_index[p.from_junction], node_index[p.to_junction]) for p in case.pipes]
    from_node = np.array([a for a, _ in ends], dtype=int)
    to_node = np.array([b for _, b in ends], dtype=int)
    incidence = _incidence(node_index, [(p.from_junction, p.to_junction) for p in case.pipes])
    ratio_col = np.full(n_p, -1, dtype=int)
    ratio_col[comp_pipes] = alpha

    outlet = sp.csr_matrix(
        (
            np.concatenate([np.ones(n_p), -np.ones(n_p)]),
            (np.concatenate([np.arange(n_p)] * 2), np.concatenate([pressure[to_node], p_out])),
        ),
        shape=(n_p, n),
    )

    pipe_ids = [p.id for p in case.pipes]
    bounded = [k for k, p in enumerate(case.pipes) if p.pressure_min is not None]
    families: List[ConstraintFamily] = [
        _balance_family("balance", n, incidence, phi, x_idx, [f"balance[{i}]" for i in ids]),
        _weymouth_family(n, p_in, p_out, phi, beta_s, [f"weymouth[{k}]" for k in pipe_ids]),
        _inlet_coupling_family(
            n, pressure[from_node], p_in, ratio_col, [f"inlet[{k}]" for k in pipe_ids]
        ),
        linear_family(
            "outlet_coupling", FamilyKind.SYSTEM_EQUALITY, outlet, np.zeros(n_p),
            [f"outlet[{k}]" for k in pipe_ids],
        ),
        _box_family(
            "pressure_box", n, pressure,
            np.array([j.pressure_min for j in case.junctions]) / p_scale,
            np.array([j.pressure_max for j in case.junctions]) / p_scale,
            [f"pi[{i}]" for i in ids],
        ),
    ]
    if bounded:
        lo = np.array([case.pipes[k].pressure_min for k in bounded]) / p_scale
        up = np.array([case.pipes[k].pressure_max for k in bounded]) / p_scale
        families.append(_box_family(
            "pipe_pressure_box", n,
            np.concatenate([p_in[bounded], p_out[bounded]]),
            np.concatenate([lo, lo]), np.concatenate([up, up]),
            [f"pi_in[{pipe_ids[k]}]" for k in bounded] + [f"pi_out[{pipe_ids[k]}]" for k in bounded],
        ))
    if n_c:
        families.append(_box_family(
            "ratio_box", n, alpha, np.ones(n_c),
            np.array([compressor_of[k].max_ratio for k in comp_pipes]),
            [f"alpha[{compressor_of[k].id}]" for k in comp_pipes],
        ))

    linear = np.zeros(n)
    linear[layout.q] = [j.price for j in traders]
    kappa = np.array([compressor_of[k].cost for k in comp_pipes]) / f_scale
    linear[alpha] = kappa
    objective = QuadraticObjective(linear, np.zeros(n), constant=-float(kappa.sum()))

    lower = np.array([j.supply_min for j in traders], dtype=float) / f_scale
    upper = np.array([j.supply_max for j in traders], dtype=float) / f_scale
    d = np.array([j.withdrawal for j in case.junctions]) / f_scale
    supply = _supply_map(n_j, [node_index[j.id] for j in traders])

    primal = np.zeros(n)
    q0 = 0.5 * (lower + upper)
    primal[layout.q] = q0
    primal[layout.x] = supply @ q0 - d
    nodal_mid = np.array([0.5 * (j.pressure_min + j.pressure_max) for j in case.junctions]) / p_scale
    primal[pressure] = nodal_mid
    primal[p_in] = nodal_mid[from_node]
    primal[p_out] = nodal_mid[to_node]
    for k in bounded:
        mid = 0.5 * (case.pipes[k].pressure_min + case.pipes[k].pressure_max) / p_scale
        primal[p_in[k]] = mid
        primal[p_out[k]] = mid
    primal[alpha] = 1.0

    labels = (
        [f"q[{j.id}]" for j in traders]
        + [f"x[{i}]" for i in ids]
        + [f"pi[{i}]" for i in ids]
        + [f"pi_in[{k}]" for k in pipe_ids]
        + [f"pi_out[{k}]" for k in pipe_ids]
        + [f"phi[{k}]" for k in pipe_ids]
        + [f"alpha[{compressor_of[k].id}]" for k in comp_pipes]
    )
    logger.info(
        "built OGF: %d junctions, %d pipes, %d compressors, %d nominations",
        n_j, n_p, n_c, len(traders),
    )
    return NlpProblem(
        layout=layout,
        system_families=tuple(families),
        objective=objective,
        fixed_outflow=d,
        lower=lower,
        upper=upper,
        supply_map=supply,
        formulation="ogf",
        blocks=alloc.blocks,
        topology={
            "node_ids": ids,
            "edge_ids": pipe_ids,
            "incidence": incidence,
            "edge_flows": [phi],
            "from_node": from_node,
            "to_node": to_node,
            "compressor_pipes": np.array(comp_pipes, dtype=int),
            "resistance": beta_s,
            "pressure_scale": p_scale,
            "quantity_scale": f_scale,
        },
        initial_primal=primal,
        labels=tuple(labels),
        case=case,
    )


# ---------------------------------------------------------------------------
# AC optimal power flow
# ---------------------------------------------------------------------------


def line_admittance(line: Line) -> Tuple[float, float]:
    """Series conductance and susceptance from r + jx."""
    denom = line.r**2 + line.x**2
    if denom <= 0.0:
        raise CaseBuildError(f"line {line.id}: zero series impedance")
    return line.r / denom, -line.x / denom


def ac_flow_terms(
    v_i: np.ndarray,
    v_j: np.ndarray,
    delta: np.ndarray,
    g: np.ndarray,
    b: np.ndarray,
    b_sh: np.ndarray,
) -> Dict[str, np.ndarray]:
    """
    Active and reactive flow leaving the from bus, with first and second
    derivatives over the local variables (v_i, v_j, theta_i, theta_j).

    Returns:
        Dict with "p", "q" of shape (m,), "dp", "dq" of shape (m, 4) and
        "d2p", "d2q" of shape (m, 4, 4)
    """
    cos, sin = np.cos(delta), np.sin(delta)
    vv = v_i * v_j
    m = len(v_i)
    p = g * v_i**2 - g * vv * cos - b * vv * sin
    q = -(b + b_sh / 2.0) * v_i**2 + b * vv * cos - g * vv * sin

    dp = np.empty((m, 4))
    dp[:, 0] = 2.0 * g * v_i - g * v_j * cos - b * v_j * sin
    dp[:, 1] = -g * v_i * cos - b * v_i * sin
    dp[:, 2] = g * vv * sin - b * vv * cos
    dp[:, 3] = -dp[:, 2]
    dq = np.empty((m, 4))
    dq[:, 0] = -2.0 * (b + b_sh / 2.0) * v_i + b * v_j * cos - g * v_j * sin
    dq[:, 1] = b * v_i * cos - g * v_i * sin
    dq[:, 2] = -b * vv * sin - g * vv * cos
    dq[:, 3] = -dq[:, 2]

    def second(vivi, vivj, vith, vjth, thth):
        h = np.zeros((m, 4, 4))
        h[:, 0, 0] = vivi
        h[:, 0, 1] = h[:, 1, 0] = vivj
        h[:, 0, 2] = h[:, 2, 0] = vith
        h[:, 0, 3] = h[:, 3, 0] = -vith
        h[:, 1, 2] = h[:, 2, 1] = vjth
        h[:, 1, 3] = h[:, 3, 1] = -vjth
        h[:, 2, 2] = h[:, 3, 3] = thth
        h[:, 2, 3] = h[:, 3, 2] = -thth
        return h

    d2p = second(
        2.0 * g,
        -g * cos - b * sin,
        g * v_j * sin - b * v_j * cos,
        g * v_i * sin - b * v_i * cos,
        g * vv * cos + b * vv * sin,
    )
    d2q = second(
        -2.0 * (b + b_sh / 2.0) * np.ones(m),
        b * cos - g * sin,
        -b * v_j * sin - g * v_j * cos,
        -b * v_i * sin - g * v_i * cos,
        -b * vv * cos + g * vv * sin,
    )
    return {"p": p, "q": q, "dp": dp, "dq": dq, "d2p": d2p, "d2q": d2q}


def _ac_flow_family(
    name: str,
    which: str,
    n: int,
    local: np.ndarray,
    flow: np.ndarray,
    g: np.ndarray,
    b: np.ndarray,
    b_sh: np.ndarray,
    labels: Sequence[str],
) -> ConstraintFamily:
    """Rows ``flow - f(v_i, v_j, theta_i - theta_j)``; ``local`` is (m, 4) variable indices."""
    m = len(flow)
    rows = np.concatenate([np.repeat(np.arange(m), 4), np.arange(m)])
    cols = np.concatenate([local.ravel(), flow])
    h_rows = np.repeat(local, 4, axis=1).ravel()
    h_cols = np.tile(local, (1, 4)).ravel()

    def terms(primal: np.ndarray) -> Dict[str, np.ndarray]:
        v_i, v_j = primal[local[:, 0]], primal[local[:, 1]]
        delta = primal[local[:, 2]] - primal[local[:, 3]]
        return ac_flow_terms(v_i, v_j, delta, g, b, b_sh)

    def evaluator(primal: np.ndarray) -> np.ndarray:
        return primal[flow] - terms(primal)[which]

    def jacobian(primal: np.ndarray) -> sp.csr_matrix:
        data = np.concatenate([-terms(primal)["d" + which].ravel(), np.ones(m)])
        return sp.csr_matrix((data, (rows, cols)), shape=(m, n))

    def hessian(primal: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
        d2 = terms(primal)["d2" + which]
        data = (-weights[:, None, None] * d2).ravel()
        return sp.csr_matrix((data, (h_rows, h_cols)), shape=(n, n))

    return ConstraintFamily(
        name=name,
        kind=FamilyKind.SYSTEM_EQUALITY,
        count=m,
        evaluator=evaluator,
        jacobian=jacobian,
        hessian=hessian,
        labels=tuple(labels),
    )


def _apparent_power_family(
    n: int, p_l: np.ndarray, q_l: np.ndarray, limits: np.ndarray, labels: Sequence[str]
) -> ConstraintFamily:
    """Rows ``p^2 + q^2 - s_max^2 <= 0``."""
    m = len(p_l)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([p_l, q_l])

    def evaluator(primal: np.ndarray) -> np.ndarray:
        return primal[p_l] ** 2 + primal[q_l] ** 2 - limits**2

    def jacobian(primal: np.ndarray) -> sp.csr_matrix:
        data = np.concatenate([2.0 * primal[p_l], 2.0 * primal[q_l]])
        return sp.csr_matrix((data, (rows, cols)), shape=(m, n))

    def hessian(primal: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((np.concatenate([2.0 * weights] * 2), (cols, cols)), shape=(n, n))

    return ConstraintFamily(
        name="apparent_power",
        kind=FamilyKind.SYSTEM_INEQUALITY,
        count=m,
        evaluator=evaluator,
        jacobian=jacobian,
        hessian=hessian,
        labels=tuple(labels),
    )


def build_ac_opf(case: PowerCase) -> NlpProblem:
    """
    Build the AC OPF problem in polar voltage coordinates.

    Variables: q = (p^g, q^g) per generator, x = (p, q) per bus,
    y = (v per bus, theta per bus, p^l per line, q^l per line). Totals are
    2 n_gen, 2 n_bus and 2 n_bus + 2 n_line.
    Equalities: active and reactive balance, active and reactive line flow
    definitions, reference angle. Inequalities: apparent power limits and
    voltage boxes.
    """
    ids = [bus.id for bus in case.buses]
    _check_connected("line", ids, [(l.id, l.from_bus, l.to_bus) for l in case.lines])
    _validate_lines(case)
    node_index = {bus_id: i for i, bus_id in enumerate(ids)}
    owners = _generator_owners(case, node_index)
    for bus in case.buses:
        if bus.v_min is None or bus.v_max is None:
            raise CaseBuildError(f"bus {bus.id}: voltage bounds are required for AC")
        if not 0.0 < bus.v_min < bus.v_max:
            raise CaseBuildError(f"bus {bus.id}: voltage bounds must satisfy 0 < v_min < v_max")
    for gen in case.generators:
        if gen.q_min > gen.q_max:
            raise CaseBuildError(f"generator {gen.id}: q_min exceeds q_max")
        if gen.q_min < 0.0:
            logger.info("generator %s absorbs reactive power down to %g", gen.id, gen.q_min)

    base = float(case.base_mva)
    n_bus, n_line, n_gen = len(ids), len(case.lines), len(case.generators)
    layout = VariableLayout(2 * n_gen, 2 * n_bus, 2 * n_bus + 2 * n_line)
    n = layout.total
    alloc = _Allocator(layout.y.start)
    volt = alloc.take("voltage", n_bus)
    theta = alloc.take("angle", n_bus)
    p_l = alloc.take("flow_p", n_line)
    q_l = alloc.take("flow_q", n_line)
    p_idx = np.arange(layout.x.start, layout.x.start + n_bus)
    q_idx = np.arange(layout.x.start + n_bus, layout.x.stop)

    frm = np.array([node_index[l.from_bus] for l in case.lines], dtype=int)
    to = np.array([node_index[l.to_bus] for l in case.lines], dtype=int)
    admittance = np.array([line_admittance(l) for l in case.lines]).reshape(n_line, 2)
    g, b = admittance[:, 0], admittance[:, 1]
    b_sh = np.array([l.b_shunt for l in case.lines])
    local = np.column_stack([volt[frm], volt[to], theta[frm], theta[to]]) if n_line else np.zeros((0, 4), dtype=int)
    incidence = _incidence(node_index, [(l.from_bus, l.to_bus) for l in case.lines])
    ref = _reference_index(case, ids)
    line_ids = [l.id for l in case.lines]
    limits = np.array([l.limit for l in case.lines]) / base

    families = (
        _balance_family("balance_p", n, incidence, p_l, p_idx, [f"balance_p[{i}]" for i in ids]),
        _balance_family("balance_q", n, incidence, q_l, q_idx, [f"balance_q[{i}]" for i in ids]),
        _ac_flow_family("flow_p", "p", n, local, p_l, g, b, b_sh, [f"flow_p[{k}]" for k in line_ids]),
        _ac_flow_family("flow_q", "q", n, local, q_l, g, b, b_sh, [f"flow_q[{k}]" for k in line_ids]),
        _reference_family(n, theta, ref, ids[ref]),
        _apparent_power_family(n, p_l, q_l, limits, [f"s[{k}]" for k in line_ids]),
        _box_family(
            "voltage_box", n, volt,
            np.array([bus.v_min for bus in case.buses]),
            np.array([bus.v_max for bus in case.buses]),
            [f"v[{i}]" for i in ids],
        ),
    )

    linear = np.zeros(n)
    quadratic = np.zeros(n)
    linear[:n_gen] = [gen.cost for gen in case.generators]
    linear[n_gen:2 * n_gen] = [gen.q_cost for gen in case.generators]
    quadratic[:n_gen] = [2.0 * gen.cost_quadratic * base for gen in case.generators]
    lower = np.concatenate([
        [gen.p_min for gen in case.generators], [gen.q_min for gen in case.generators]
    ]) / base
    upper = np.concatenate([
        [gen.p_max for gen in case.generators], [gen.q_max for gen in case.generators]
    ]) / base
    d = np.concatenate([
        [bus.p_load for bus in case.buses], [bus.q_load for bus in case.buses]
    ]) / base
    supply = sp.block_diag([_supply_map(n_bus, owners)] * 2, format="csr")

    primal = np.zeros(n)
    q0 = 0.5 * (lower + upper)
    primal[layout.q] = q0
    primal[layout.x] = supply @ q0 - d
    for i, bus in enumerate(case.buses):
        primal[volt[i]] = 1.0 if bus.v_min <= 1.0 <= bus.v_max else 0.5 * (bus.v_min + bus.v_max)

    gen_ids = [gen.id for gen in case.generators]
    labels = (
        [f"p_g[{k}]" for k in gen_ids]
        + [f"q_g[{k}]" for k in gen_ids]
        + [f"p[{i}]" for i in ids]
        + [f"q[{i}]" for i in ids]
        + [f"v[{i}]" for i in ids]
        + [f"theta[{i}]" for i in ids]
        + [f"p_l[{k}]" for k in line_ids]
        + [f"q_l[{k}]" for k in line_ids]
    )
    logger.info("built AC OPF: %d buses, %d lines, %d generators", n_bus, n_line, n_gen)
    return NlpProblem(
        layout=layout,
        system_families=families,
        objective=QuadraticObjective(linear, quadratic),
        fixed_outflow=d,
        lower=lower,
        upper=upper,
        supply_map=supply,
        formulation="ac",
        blocks=alloc.blocks,
        topology={
            "node_ids": ids,
            "edge_ids": line_ids,
            "incidence": sp.block_diag([incidence] * 2, format="csr"),
            "edge_flows": [p_l, q_l],
            "reference": ref,
            "admittance": (g, b, b_sh),
            "local": local,
            "quantity_scale": base,
        },
        initial_primal=primal,
        labels=tuple(labels),
        case=case,
    )


BUILDERS = {
    "dc": build_dc_opf,
    "ac": build_ac_opf,
    "ogf": build_ogf,
}

COMPATIBLE_KINDS = {
    "dc": ("power_dc",),
    "ac": ("power_ac",),
    "ogf": ("gas",),
}

DEFAULT_MODEL = {"power_dc": "dc", "power_ac": "ac", "gas": "ogf"}


def build_problem(case: Any, model: Optional[str] = None) -> NlpProblem:
    """
    Build the problem for ``case`` under ``model`` (default by case kind).

    Raises:
        CaseBuildError: Unknown model or incompatible case kind
    """
    model = model or DEFAULT_MODEL.get(case.kind)
    if model not in BUILDERS:
        raise CaseBuildError(f"unknown model {model}")
    if case.kind not in COMPATIBLE_KINDS[model]:
        raise CaseBuildError(f"case kind {case.kind} incompatible with model {model}")
    return BUILDERS[model](case)
