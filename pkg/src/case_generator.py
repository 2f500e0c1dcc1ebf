"""
Randomized desk-scale cases for the property suites and the demo.

DC cases are screened for feasibility with the simplex oracle. Gas cases are
trees fed from a root supplier so every pipe carries positive flow, with one
shared nodal pressure box (a common squared pressure always exists), zero
compression cost and dearer local supply at every load. AC cases are radial
with local generation at every load bus. Both carry a knob that makes the
network bind.
"""

import logging
from typing import List, Optional, Tuple

import networkx as nx
import numpy as np

from formulations import (
    Bus,
    Compressor,
    GasCase,
    Generator,
    Junction,
    Line,
    Pipe,
    PowerCase,
    build_dc_opf,
)
from simplex_oracle import maybe_solve

logger = logging.getLogger(__name__)

PRESSURE_MIN = 1.0
PRESSURE_MAX = 16.0


def _random_tree(rng: np.random.Generator, n: int) -> List[Tuple[int, int]]:
    """Edges (parent, child) of a random tree rooted at 0."""
    return [(int(rng.integers(0, child)), child) for child in range(1, n)]


def random_dc_case(
    rng: np.random.Generator, n_bus: Optional[int] = None, attempts: int = 50
) -> PowerCase:
    """
    Meshed DC case with 3-6 buses that the simplex oracle can solve.

    Raises:
        RuntimeError: No feasible draw within ``attempts``
    """
    for _ in range(attempts):
        n = int(n_bus or rng.integers(3, 7))
        graph = nx.Graph(_random_tree(rng, n))
        for _extra in range(int(rng.integers(1, n))):
            a, b = (int(v) for v in rng.choice(n, size=2, replace=False))
            graph.add_edge(min(a, b), max(a, b))
        ids = [f"b{i + 1}" for i in range(n)]
        buses = tuple(
            Bus(id=ids[i], p_load=float(np.round(rng.uniform(0.0, 100.0), 3))) for i in range(n)
        )
        lines = tuple(
            Line(
                id=f"l{a + 1}{b + 1}",
                from_bus=ids[a],
                to_bus=ids[b],
                x=float(np.round(rng.uniform(0.05, 0.3), 4)),
                limit=float(np.round(rng.uniform(30.0, 150.0), 3)),
            )
            for a, b in sorted(graph.edges())
        )
        owners = sorted(rng.choice(n, size=int(rng.integers(1, min(3, n) + 1)), replace=False))
        generators = tuple(
            Generator(
                id=f"g{i + 1}",
                bus=ids[i],
                p_max=float(np.round(rng.uniform(100.0, 400.0), 3)),
                cost=float(np.round(rng.uniform(10.0, 50.0), 3)),
            )
            for i in owners
        )
        case = PowerCase(
            kind="power_dc", buses=buses, generators=generators, lines=lines, name="random_dc"
        )
        if maybe_solve(build_dc_opf(case)) is not None:
            return case
        logger.debug("discarded infeasible DC draw")
    raise RuntimeError(f"no feasible DC case in {attempts} draws")


def _subtree_loads(edges: List[Tuple[int, int]], loads: np.ndarray) -> np.ndarray:
    """Total load below each edge's child when the root serves everything."""
    tree = nx.DiGraph(edges)
    below = [[child, *nx.descendants(tree, child)] for _, child in edges]
    return np.array([loads[nodes].sum() for nodes in below])


def random_gas_case(
    rng: np.random.Generator,
    n_junction: Optional[int] = None,
    n_compressor: Optional[int] = None,
    stress: Optional[float] = None,
) -> GasCase:
    """
    Tree gas network with 3-6 junctions and 1-2 compressors, supplied at the root.

    Every load junction also offers a dearer local supply covering half its
    withdrawal. ``stress`` is the largest root-to-leaf pressure drop with the
    root serving every load, in units of the box width 15. Compression can
    absorb at most 47 of drop, so above 3.2 the pressure box always binds;
    importing half of each load drops a quarter as much, so up to 4 stays
    feasible. Drawn from [0.3, 3.6] when not given.

    Raises:
        ValueError: ``stress`` outside (0, 4]
    """
    if stress is None:
        stress = float(rng.uniform(0.3, 3.6))
    if not 0.0 < stress <= 4.0:
        raise ValueError(f"stress {stress} outside (0, 4]")
    n = int(n_junction or rng.integers(3, 7))
    edges = _random_tree(rng, n)
    ids = [f"j{i + 1}" for i in range(n)]
    loads = np.round(rng.uniform(0.5, 2.0, size=n), 3)
    loads[0] = 0.0
    total = float(loads.sum())

    weights = rng.uniform(0.2, 1.0, size=len(edges))
    drops = weights * _subtree_loads(edges, loads) ** 2
    tree = nx.DiGraph()
    tree.add_weighted_edges_from((a, b, w) for (a, b), w in zip(edges, drops))
    worst = max(nx.single_source_dijkstra_path_length(tree, 0).values())
    scale = stress * (PRESSURE_MAX - PRESSURE_MIN) / worst

    junctions = [
        Junction(
            id=ids[0], pressure_min=PRESSURE_MIN, pressure_max=PRESSURE_MAX,
            supply_min=0.0, supply_max=float(np.round(2.0 * total, 3)), price=1.0,
        )
    ]
    for i in range(1, n):
        junctions.append(Junction(
            id=ids[i], pressure_min=PRESSURE_MIN, pressure_max=PRESSURE_MAX,
            withdrawal=float(loads[i]), supply_min=0.0, supply_max=0.5 * float(loads[i]),
            price=float(np.round(rng.uniform(2.0, 5.0), 3)),
        ))
    pipes = tuple(
        Pipe(
            id=f"p{a + 1}{b + 1}",
            from_junction=ids[a],
            to_junction=ids[b],
            resistance=float(w * scale),
        )
        for (a, b), w in zip(edges, weights)
    )
    k = int(n_compressor or rng.integers(1, 3))
    chosen = sorted(rng.choice(len(pipes), size=min(k, len(pipes)), replace=False))
    compressors = tuple(
        Compressor(
            id=f"c{m + 1}",
            pipe=pipes[i].id,
            max_ratio=float(np.round(rng.uniform(1.2, 2.0), 3)),
        )
        for m, i in enumerate(chosen)
    )
    logger.debug("gas draw: %d junctions, stress %.3f", n, stress)
    return GasCase(
        junctions=tuple(junctions), pipes=pipes, compressors=compressors, name="random_gas"
    )


def random_ac_case(
    rng: np.random.Generator, n_bus: Optional[int] = None, limit_factor: Optional[float] = None
) -> PowerCase:
    """
    Radial AC case with 2-4 buses and a cheap generator at the root.

    Every load bus holds a dearer local generator able to cover its own load,
    so the flat self-supplied point is always feasible. Each line limit is
    ``limit_factor`` times the active load beyond it; below 1 the limit binds.
    Drawn from [0.5, 2] when not given.
    """
    if limit_factor is None:
        limit_factor = float(rng.uniform(0.5, 2.0))
    if not limit_factor > 0.0:
        raise ValueError(f"limit factor {limit_factor} must be positive")
    n = int(n_bus or rng.integers(2, 5))
    ids = [f"b{i + 1}" for i in range(n)]
    edges = _random_tree(rng, n)
    p_load = np.round(rng.uniform(10.0, 40.0, size=n), 3)
    q_load = np.round(rng.uniform(0.0, 10.0, size=n), 3)
    p_load[0] = q_load[0] = 0.0
    buses = tuple(
        Bus(id=ids[i], p_load=float(p_load[i]), q_load=float(q_load[i]), v_min=0.9, v_max=1.1)
        for i in range(n)
    )
    lines = tuple(
        Line(
            id=f"l{a + 1}{b + 1}",
            from_bus=ids[a],
            to_bus=ids[b],
            r=float(np.round(rng.uniform(0.005, 0.02), 4)),
            x=float(np.round(rng.uniform(0.05, 0.12), 4)),
            limit=float(limit_factor * below),
        )
        for (a, b), below in zip(edges, _subtree_loads(edges, p_load))
    )
    generators = [Generator(id="g1", bus=ids[0], p_max=300.0, cost=10.0, q_max=200.0)]
    for i in range(1, n):
        generators.append(Generator(
            id=f"g{i + 1}", bus=ids[i], p_max=float(p_load[i]),
            cost=float(np.round(rng.uniform(15.0, 40.0), 3)), q_max=float(q_load[i]) + 10.0,
        ))
    return PowerCase(
        kind="power_ac", buses=buses, generators=tuple(generators), lines=lines,
        name="random_ac",
    )
