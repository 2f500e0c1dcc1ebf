"""
Case and point files.

A case file is a JSON object with ``format_version``, ``kind`` (power_dc,
power_ac or gas), a ``units`` block, ``nodes``/``edges`` arrays plus
``generators`` (power) or ``compressors`` (gas), and an optional
``known_solution`` block. Validation errors name the offending path, for
example ``edges[2].to: unknown node id b7``.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

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
)
from model_core import NlpProblem

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CASE_KINDS = ("power_dc", "power_ac", "gas")

Case = Union[PowerCase, GasCase]


class CaseValidationError(ValueError):
    """Raised when a case or point file does not match the expected layout."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


_MISSING = object()


def _field(obj: Mapping[str, Any], key: str, path: str, default: Any = _MISSING) -> Any:
    if not isinstance(obj, Mapping):
        raise CaseValidationError(path, "expected an object")
    if key in obj:
        return obj[key]
    if default is _MISSING:
        raise CaseValidationError(f"{path}.{key}" if path else key, "required field missing")
    return default


def _number(
    obj: Mapping[str, Any],
    key: str,
    path: str,
    default: Any = _MISSING,
    positive: bool = False,
    nonnegative: bool = False,
) -> Optional[float]:
    value = _field(obj, key, path, default)
    where = f"{path}.{key}" if path else key
    if value is None:
        if default is _MISSING:
            raise CaseValidationError(where, "expected a number, got null")
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseValidationError(where, f"expected a number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise CaseValidationError(where, "must be finite")
    if positive and value <= 0.0:
        raise CaseValidationError(where, f"must be positive, got {value}")
    if nonnegative and value < 0.0:
        raise CaseValidationError(where, f"must be non-negative, got {value}")
    return value


def _string(obj: Mapping[str, Any], key: str, path: str, default: Any = _MISSING) -> Optional[str]:
    value = _field(obj, key, path, default)
    if value is None and default is not _MISSING:
        return None
    if not isinstance(value, str) or not value:
        raise CaseValidationError(f"{path}.{key}" if path else key, "expected a non-empty string")
    return value


def _array(obj: Mapping[str, Any], key: str, default: Any = _MISSING) -> List[Any]:
    value = _field(obj, key, "", default)
    if not isinstance(value, list):
        raise CaseValidationError(key, "expected an array")
    return value


def _unique_ids(items: Sequence[Any], section: str) -> None:
    seen = set()
    for k, item in enumerate(items):
        if item.id in seen:
            raise CaseValidationError(f"{section}[{k}].id", f"duplicate id {item.id}")
        seen.add(item.id)


def _check_refs(items: Sequence[Any], section: str, fields: Sequence[str], known, what: str) -> None:
    for k, item in enumerate(items):
        for name, attr in fields:
            ref = getattr(item, attr)
            if ref not in known:
                raise CaseValidationError(f"{section}[{k}].{name}", f"unknown {what} id {ref}")


def _parse_power(data: Mapping[str, Any], kind: str) -> PowerCase:
    units = _field(data, "units", "", {})
    base = _number(units, "base_mva", "units", 100.0, positive=True)

    buses = []
    for k, node in enumerate(_array(data, "nodes")):
        path = f"nodes[{k}]"
        v_min = _number(node, "v_min", path, None, positive=True)
        v_max = _number(node, "v_max", path, None, positive=True)
        if kind == "power_ac" and (v_min is None or v_max is None):
            raise CaseValidationError(path, "AC buses need v_min and v_max")
        if v_min is not None and v_max is not None and v_min > v_max:
            raise CaseValidationError(f"{path}.v_min", "exceeds v_max")
        buses.append(Bus(
            id=_string(node, "id", path),
            p_load=_number(node, "p_load", path, 0.0),
            q_load=_number(node, "q_load", path, 0.0),
            v_min=v_min,
            v_max=v_max,
        ))

    lines = []
    for k, edge in enumerate(_array(data, "edges")):
        path = f"edges[{k}]"
        lines.append(Line(
            id=_string(edge, "id", path),
            from_bus=_string(edge, "from", path),
            to_bus=_string(edge, "to", path),
            x=_number(edge, "x", path, positive=True),
            limit=_number(edge, "limit", path, positive=True),
            r=_number(edge, "r", path, 0.0, nonnegative=True),
            b_shunt=_number(edge, "b_shunt", path, 0.0),
        ))

    generators = []
    for k, gen in enumerate(_array(data, "generators")):
        path = f"generators[{k}]"
        p_min = _number(gen, "p_min", path, 0.0)
        p_max = _number(gen, "p_max", path)
        if p_min > p_max:
            raise CaseValidationError(f"{path}.p_min", "exceeds p_max")
        q_min = _number(gen, "q_min", path, 0.0)
        q_max = _number(gen, "q_max", path, 0.0)
        if q_min > q_max:
            raise CaseValidationError(f"{path}.q_min", "exceeds q_max")
        if q_min < 0.0:
            logger.info("generator %s absorbs reactive power (q_min < 0)", gen.get("id"))
        generators.append(Generator(
            id=_string(gen, "id", path),
            bus=_string(gen, "bus", path),
            p_max=p_max,
            p_min=p_min,
            cost=_number(gen, "cost", path, 0.0),
            cost_quadratic=_number(gen, "cost_quadratic", path, 0.0, nonnegative=True),
            q_max=q_max,
            q_min=q_min,
            q_cost=_number(gen, "q_cost", path, 0.0),
        ))

    if not buses:
        raise CaseValidationError("nodes", "at least one node is required")
    _unique_ids(buses, "nodes")
    _unique_ids(lines, "edges")
    _unique_ids(generators, "generators")
    known = {b.id for b in buses}
    _check_refs(lines, "edges", [("from", "from_bus"), ("to", "to_bus")], known, "node")
    _check_refs(generators, "generators", [("bus", "bus")], known, "node")
    reference = _string(data, "reference", "", None)
    if reference is not None and reference not in known:
        raise CaseValidationError("reference", f"unknown node id {reference}")

    return PowerCase(
        kind=kind,
        buses=tuple(buses),
        generators=tuple(generators),
        lines=tuple(lines),
        base_mva=base,
        reference=reference,
        name=str(data.get("name", "")),
        known_solution=_known_solution(data),
    )


def _parse_gas(data: Mapping[str, Any]) -> GasCase:
    units = _field(data, "units", "", {})
    nominal = _number(units, "nominal_pressure", "units", 1.0, positive=True)
    flow_base = _number(units, "flow_base", "units", 1.0, positive=True)
    wave_speed = _number(units, "wave_speed", "units", None, positive=True)

    junctions = []
    for k, node in enumerate(_array(data, "nodes")):
        path = f"nodes[{k}]"
        lo = _number(node, "pressure_min", path, positive=True)
        hi = _number(node, "pressure_max", path, positive=True)
        if lo > hi:
            raise CaseValidationError(f"{path}.pressure_min", "exceeds pressure_max")
        s_min = _number(node, "supply_min", path, None)
        s_max = _number(node, "supply_max", path, None)
        if (s_min is None) != (s_max is None):
            raise CaseValidationError(path, "supply_min and supply_max must be given together")
        if s_min is not None and s_min > s_max:
            raise CaseValidationError(f"{path}.supply_min", "exceeds supply_max")
        junctions.append(Junction(
            id=_string(node, "id", path),
            pressure_min=lo,
            pressure_max=hi,
            withdrawal=_number(node, "withdrawal", path, 0.0),
            supply_min=s_min,
            supply_max=s_max,
            price=_number(node, "price", path, 0.0),
        ))

    pipes = []
    for k, edge in enumerate(_array(data, "edges")):
        path = f"edges[{k}]"
        lo = _number(edge, "pressure_min", path, None, positive=True)
        hi = _number(edge, "pressure_max", path, None, positive=True)
        if (lo is None) != (hi is None):
            raise CaseValidationError(path, "pressure_min and pressure_max must be given together")
        if lo is not None and lo > hi:
            raise CaseValidationError(f"{path}.pressure_min", "exceeds pressure_max")
        pipe = Pipe(
            id=_string(edge, "id", path),
            from_junction=_string(edge, "from", path),
            to_junction=_string(edge, "to", path),
            resistance=_number(edge, "resistance", path, None, positive=True),
            length=_number(edge, "length", path, None, positive=True),
            diameter=_number(edge, "diameter", path, None, positive=True),
            area=_number(edge, "area", path, None, positive=True),
            friction=_number(edge, "friction", path, None, positive=True),
            pressure_min=lo,
            pressure_max=hi,
        )
        if pipe.resistance is None and None in (pipe.length, pipe.diameter, pipe.friction):
            raise CaseValidationError(
                path, "give resistance, or length, diameter and friction"
            )
        if pipe.resistance is None and wave_speed is None:
            raise CaseValidationError("units.wave_speed", "required when a pipe has no resistance")
        pipes.append(pipe)

    compressors = []
    for k, comp in enumerate(_array(data, "compressors", [])):
        path = f"compressors[{k}]"
        ratio = _number(comp, "max_ratio", path, positive=True)
        if ratio < 1.0:
            raise CaseValidationError(f"{path}.max_ratio", f"must be at least 1, got {ratio}")
        compressors.append(Compressor(
            id=_string(comp, "id", path),
            pipe=_string(comp, "pipe", path),
            max_ratio=ratio,
            cost=_number(comp, "cost", path, 0.0, nonnegative=True),
        ))

    if not junctions:
        raise CaseValidationError("nodes", "at least one node is required")
    _unique_ids(junctions, "nodes")
    _unique_ids(pipes, "edges")
    _unique_ids(compressors, "compressors")
    known = {j.id for j in junctions}
    _check_refs(pipes, "edges", [("from", "from_junction"), ("to", "to_junction")], known, "node")
    _check_refs(compressors, "compressors", [("pipe", "pipe")], {p.id for p in pipes}, "pipe")
    seen_pipes = set()
    for k, comp in enumerate(compressors):
        if comp.pipe in seen_pipes:
            raise CaseValidationError(f"compressors[{k}].pipe", f"pipe {comp.pipe} already compressed")
        seen_pipes.add(comp.pipe)

    return GasCase(
        junctions=tuple(junctions),
        pipes=tuple(pipes),
        compressors=tuple(compressors),
        nominal_pressure=nominal,
        flow_base=flow_base,
        wave_speed=wave_speed,
        name=str(data.get("name", "")),
        known_solution=_known_solution(data),
    )


def _known_solution(data: Mapping[str, Any]) -> Optional[Dict[str, Any]]:
    block = data.get("known_solution")
    if block is None:
        return None
    if not isinstance(block, Mapping):
        raise CaseValidationError("known_solution", "expected an object")
    return dict(block)


def case_from_dict(data: Mapping[str, Any]) -> Case:
    """
    Validate a decoded case document and build the case object.

    Raises:
        CaseValidationError: Schema violation, duplicate or dangling id
    """
    if not isinstance(data, Mapping):
        raise CaseValidationError("", "case document must be a JSON object")
    version = _field(data, "format_version", "", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise CaseValidationError("format_version", f"unsupported version {version}")
    kind = _field(data, "kind", "")
    if kind not in CASE_KINDS:
        raise CaseValidationError("kind", f"expected one of {', '.join(CASE_KINDS)}, got {kind!r}")
    if kind == "gas":
        return _parse_gas(data)
    return _parse_power(data, kind)


def parse_case(path: Union[str, Path]) -> Case:
    """
    Read and validate a case file.

    Args:
        path: JSON case file

    Returns:
        PowerCase or GasCase with defaults applied

    Raises:
        FileNotFoundError: Missing file
        CaseValidationError: Invalid JSON or schema violation
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CaseValidationError("", f"{path.name} is not valid JSON: {e}") from e
    case = case_from_dict(data)
    logger.info("parsed %s case %s from %s", case.kind, case.name or "<unnamed>", path)
    return case


def _drop_none(entry: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in entry.items() if v is not None}


def case_to_dict(case: Case) -> Dict[str, Any]:
    """Canonical document: every field present, fixed key order, unset optionals omitted."""
    doc: Dict[str, Any] = {"format_version": FORMAT_VERSION, "kind": case.kind, "name": case.name}
    if isinstance(case, PowerCase):
        doc["units"] = {"base_mva": case.base_mva}
        if case.reference is not None:
            doc["reference"] = case.reference
        doc["nodes"] = [
            _drop_none({"id": b.id, "p_load": b.p_load, "q_load": b.q_load,
                        "v_min": b.v_min, "v_max": b.v_max})
            for b in case.buses
        ]
        doc["edges"] = [
            {"id": l.id, "from": l.from_bus, "to": l.to_bus, "x": l.x, "r": l.r,
             "b_shunt": l.b_shunt, "limit": l.limit}
            for l in case.lines
        ]
        doc["generators"] = [
            {"id": g.id, "bus": g.bus, "p_min": g.p_min, "p_max": g.p_max, "cost": g.cost,
             "cost_quadratic": g.cost_quadratic, "q_min": g.q_min, "q_max": g.q_max,
             "q_cost": g.q_cost}
            for g in case.generators
        ]
    else:
        doc["units"] = _drop_none({
            "nominal_pressure": case.nominal_pressure,
            "flow_base": case.flow_base,
            "wave_speed": case.wave_speed,
        })
        doc["nodes"] = [
            _drop_none({"id": j.id, "pressure_min": j.pressure_min, "pressure_max": j.pressure_max,
                        "withdrawal": j.withdrawal, "supply_min": j.supply_min,
                        "supply_max": j.supply_max, "price": j.price})
            for j in case.junctions
        ]
        doc["edges"] = [
            _drop_none({"id": p.id, "from": p.from_junction, "to": p.to_junction,
                        "resistance": p.resistance, "length": p.length, "diameter": p.diameter,
                        "area": p.area, "friction": p.friction,
                        "pressure_min": p.pressure_min, "pressure_max": p.pressure_max})
            for p in case.pipes
        ]
        doc["compressors"] = [
            {"id": c.id, "pipe": c.pipe, "max_ratio": c.max_ratio, "cost": c.cost}
            for c in case.compressors
        ]
    if case.known_solution is not None:
        doc["known_solution"] = dict(case.known_solution)
    return doc


def write_case(case: Case, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2) + "\n", encoding="utf-8")


def point_from_labels(problem: NlpProblem, values: Mapping[str, float], scaled: bool = True) -> np.ndarray:
    """
    Assemble a primal vector from a label -> value mapping.

    Values are in the problem's scaled units unless ``scaled`` is False, in
    which case quantity and squared-pressure blocks are divided by the
    builder's scale factors.
    """
    index = {label: i for i, label in enumerate(problem.labels)}
    missing = [label for label in problem.labels if label not in values]
    if missing:
        raise CaseValidationError("primal", f"missing values for {', '.join(missing[:5])}")
    unknown = [label for label in values if label not in index]
    if unknown:
        raise CaseValidationError("primal", f"unknown variable {unknown[0]}")
    primal = np.array([float(values[label]) for label in problem.labels])
    if not np.all(np.isfinite(primal)):
        raise CaseValidationError("primal", "values must be finite")
    if not scaled:
        primal = primal / physical_scales(problem)
    return primal


def physical_scales(problem: NlpProblem) -> np.ndarray:
    """Per-variable factor mapping scaled values to physical units."""
    scales = np.ones(problem.layout.total)
    quantity = float(problem.topology.get("quantity_scale", 1.0))
    layout = problem.layout
    scales[layout.q] = quantity
    scales[layout.x] = quantity
    for name in ("flow", "flow_p", "flow_q"):
        if name in problem.blocks:
            scales[problem.blocks[name]] = quantity
    if "pressure_scale" in problem.topology:
        p_scale = float(problem.topology["pressure_scale"])
        for name in ("pressure", "pressure_in", "pressure_out"):
            scales[problem.blocks[name]] = p_scale
    return scales


def load_point(problem: NlpProblem, path: Union[str, Path]) -> np.ndarray:
    """
    Read a point file: ``{"primal": {label: value}, "units": "scaled" | "physical"}``.
    A solve report (which carries a ``solution.primal`` block) is accepted as well.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CaseValidationError("", f"point file is not valid JSON: {e}") from e
    if isinstance(data, Mapping) and "solution" in data:
        data = data["solution"]
    values = _field(data, "primal", "")
    if not isinstance(values, Mapping):
        raise CaseValidationError("primal", "expected an object of label -> value")
    units = data.get("units", "scaled")
    if units not in ("scaled", "physical"):
        raise CaseValidationError("units", f"expected scaled or physical, got {units!r}")
    return point_from_labels(problem, values, scaled=units == "scaled")
