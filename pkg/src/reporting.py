"""
Report building: JSON documents with fixed key order and 17 significant
digits, pandas views of prices, rents, scaling samples and the iteration log,
and the Excel workbook export.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from audit import AuditReport
from case_io import physical_scales
from ipm_solver import SolveOutcome
from model_core import NlpProblem, PrimalDualPoint
from star_verify import ScalingPath

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


def format_number(value: float) -> str:
    """17 significant digits; non-finite values become null."""
    value = float(value)
    if not math.isfinite(value):
        return "null"
    if value == 0.0:
        return "0.0"
    text = format(value, ".17g")
    if "e" not in text and "." not in text:
        text += ".0"
    return text


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with deterministic number formatting. Dict order is preserved."""
    return _dump(obj, indent, 0) + "\n"


def _dump(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_number(obj)
    if isinstance(obj, str):
        return _quote(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_quote(str(k))}: {_dump(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_dump(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _quote(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def write_json(document: Dict[str, Any], path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(document), encoding="utf-8")
    logger.info("wrote report %s", path)


def _labels(problem: NlpProblem, indices) -> List[str]:
    if problem.labels:
        return [problem.labels[i] for i in indices]
    return [f"z[{i}]" for i in indices]


def solution_block(problem: NlpProblem, point: PrimalDualPoint) -> Dict[str, Any]:
    """Primal values by label (scaled units) plus every dual vector."""
    scales = physical_scales(problem)
    labels = _labels(problem, range(problem.layout.total))
    return {
        "units": "scaled",
        "primal": {label: float(v) for label, v in zip(labels, point.primal)},
        "primal_physical": {label: float(v * s) for label, v, s in zip(labels, point.primal, scales)},
        "duals": {
            "mu_lower": point.mu_lower,
            "mu_upper": point.mu_upper,
            "lambda": point.lam,
            "nu_e": point.nu_e,
            "nu_i": point.nu_i,
        },
    }


def solver_block(problem: NlpProblem, outcome: SolveOutcome) -> Dict[str, Any]:
    scale = float(problem.topology.get("quantity_scale", 1.0))
    return {
        "status": outcome.status.value,
        "iterations": outcome.iterations,
        "objective": outcome.objective,
        "objective_physical": outcome.objective * scale,
        "message": outcome.message,
    }


def solve_document(case_info: Dict[str, Any], problem: NlpProblem, outcome: SolveOutcome) -> Dict[str, Any]:
    return {
        "format_version": REPORT_VERSION,
        "case": case_info,
        "solver": solver_block(problem, outcome),
        "solution": solution_block(problem, outcome.point),
    }


def star_block(path: Optional[ScalingPath]) -> Optional[Dict[str, Any]]:
    if path is None:
        return None
    return {
        "mode": path.mode.value,
        "hypothesis_met": path.hypothesis_met,
        "samples": len(path.samples),
        "max_violation": path.max_violation,
        "base_violation": path.base_violation,
        "epsilon_star": path.epsilon_star,
        "pi_c": path.pi_c,
        "reason": path.reason,
        "path": [
            {"s": sample.s, "violation": sample.violation, "feasible": sample.feasible}
            for sample in path.samples
        ],
    }


def audit_document(
    case_info: Dict[str, Any],
    problem: NlpProblem,
    outcome: Optional[SolveOutcome],
    report: AuditReport,
) -> Dict[str, Any]:
    """The audit report file: solver, KKT norms, MFCQ, revenue, star summary, verdict."""
    rev = report.revenue
    nodes = nodes_frame(problem, report)
    edges = edges_frame(problem, report)
    doc: Dict[str, Any] = {"format_version": REPORT_VERSION, "case": case_info}
    doc["solver"] = solver_block(problem, outcome) if outcome is not None else None
    doc["kkt"] = {
        "stationarity_q": report.kkt.stationarity_q,
        "stationarity_x": report.kkt.stationarity_x,
        "stationarity_y": report.kkt.stationarity_y,
        "primal_feasibility": report.kkt.primal_feasibility,
        "complementarity": report.kkt.complementarity,
        "dual_sign_violation": report.kkt.dual_sign_violation,
        "tolerance": report.kkt.tolerance,
        "passed": report.kkt.passed,
    }
    doc["mfcq"] = {
        "holds": report.mfcq.holds,
        "margin": report.mfcq.margin,
        "equality_rank": report.mfcq.equality_rank,
        "equality_rows": report.mfcq.equality_rows,
        "min_singular_value": report.mfcq.min_singular_value,
        "max_singular_value": report.mfcq.max_singular_value,
        "active_rows": list(report.mfcq.active_rows),
        "message": report.mfcq.message,
    }
    doc["revenue"] = {
        "R": rev.revenue,
        "R_physical": rev.revenue_physical,
        "R_from_nominations": rev.revenue_from_nominations,
        "tolerance": rev.tolerance,
        "adequate": rev.adequate,
        "formulas_agree": rev.formulas_agree,
        "family_terms": rev.family_terms,
        "nodes": nodes.to_dict(orient="records"),
        "edges": edges.to_dict(orient="records"),
    }
    doc["star"] = star_block(report.star)
    doc["proof"] = None if report.proof is None else {
        "tangency_residual": report.proof.tangency_residual,
        "step_quantity": report.proof.step_quantity,
        "objective_term": report.proof.objective_term,
        "chain_revenue": report.proof.chain_revenue,
        "identity_gap": report.proof.identity_gap,
        "family_terms": report.proof.family_terms,
    }
    doc["objective"] = report.objective
    doc["verdict"] = report.verdict.value
    doc["reasons"] = list(report.reasons)
    return doc


def nodes_frame(problem: NlpProblem, report: AuditReport) -> pd.DataFrame:
    """One row per exposed variable: price, net inflow, revenue share."""
    rev = report.revenue
    layout = problem.layout
    labels = _labels(problem, range(layout.x.start, layout.x.stop))
    return pd.DataFrame({
        "variable": labels,
        "lambda": rev.prices,
        "x": rev.net_inflow,
        "x_physical": rev.net_inflow * rev.quantity_scale,
        "payment": -rev.prices * rev.net_inflow * rev.quantity_scale,
    })


def edges_frame(problem: NlpProblem, report: AuditReport) -> pd.DataFrame:
    """One row per flow variable with its rent (lambda_to - lambda_from) * flow."""
    flows = problem.topology.get("edge_flows")
    if not flows:
        return pd.DataFrame(columns=["variable", "flow", "flow_physical", "rent", "rent_physical"])
    idx = np.concatenate(flows)
    rent = report.revenue.edge_rent
    scale = report.revenue.quantity_scale
    return pd.DataFrame({
        "variable": _labels(problem, idx),
        "flow": report.revenue.edge_flow,
        "flow_physical": report.revenue.edge_flow * scale,
        "rent": rent,
        "rent_physical": rent * scale,
    })


def star_frame(path: ScalingPath) -> pd.DataFrame:
    return pd.DataFrame({
        "s": [sample.s for sample in path.samples],
        "violation": [sample.violation for sample in path.samples],
        "feasible": [sample.feasible for sample in path.samples],
    })


def iterations_frame(outcome: SolveOutcome) -> pd.DataFrame:
    return pd.DataFrame(
        outcome.kkt_residual_history,
        columns=["iteration", "stationarity", "feasibility", "complementarity"],
    )


def format_star_table(path: ScalingPath) -> str:
    frame = star_frame(path)
    return frame.to_string(index=False, float_format=lambda v: f"{v:.3e}")


def format_iterations(outcome: SolveOutcome) -> str:
    frame = iterations_frame(outcome)
    if frame.empty:
        return "(no iterations)"
    return frame.to_string(index=False, float_format=lambda v: f"{v:.3e}")


def summary_frame(document: Dict[str, Any]) -> pd.DataFrame:
    rows = []
    for section in ("solver", "kkt", "mfcq"):
        block = document.get(section) or {}
        for key, value in block.items():
            if isinstance(value, (list, dict)):
                continue
            rows.append({"section": section, "field": key, "value": value})
    rev = document["revenue"]
    for key in ("R", "R_physical", "R_from_nominations", "tolerance", "adequate"):
        rows.append({"section": "revenue", "field": key, "value": rev[key]})
    rows.append({"section": "audit", "field": "verdict", "value": document["verdict"]})
    rows.append({"section": "audit", "field": "reasons", "value": "; ".join(document["reasons"])})
    return pd.DataFrame(rows)


def write_excel(
    path: Union[str, Path],
    document: Dict[str, Any],
    problem: NlpProblem,
    report: AuditReport,
    outcome: Optional[SolveOutcome] = None,
) -> None:
    """Workbook with sheets summary, nodes, edges, star_path and iterations."""
    sheets = {
        "summary": summary_frame(document),
        "nodes": nodes_frame(problem, report),
        "edges": edges_frame(problem, report),
    }
    if report.star is not None:
        sheets["star_path"] = star_frame(report.star)
    if outcome is not None:
        sheets["iterations"] = iterations_frame(outcome)
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name, index=False)
    logger.info("wrote workbook %s with sheets %s", path, ", ".join(sheets))
