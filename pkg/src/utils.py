"""
Utility functions for flowmarket: logging setup and case summaries.
"""

import logging
import os
from typing import Any, Dict, Optional, Union

import pandas as pd

from formulations import GasCase, PowerCase
from model_core import TRACE

LOG_ENV = "FLOWMARKET_LOG"
LOG_LEVELS = {"off": logging.CRITICAL + 10, "info": logging.INFO, "trace": TRACE}


def configure_logging(level: Optional[str] = None) -> int:
    """
    Configure the root logger from ``level`` or the FLOWMARKET_LOG variable.

    Args:
        level: off, info or trace; None reads the environment (default off)

    Returns:
        The numeric level that was applied
    """
    logging.addLevelName(TRACE, "TRACE")
    name = (level or os.environ.get(LOG_ENV, "off")).strip().lower()
    unknown = name not in LOG_LEVELS
    numeric = LOG_LEVELS.get(name, LOG_LEVELS["off"])
    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)
    if unknown:
        root.setLevel(logging.WARNING)
        logging.getLogger(__name__).warning("unknown %s value %r, logging off", LOG_ENV, name)
    root.setLevel(numeric)
    return numeric


def case_tables(case: Union[PowerCase, GasCase]) -> Dict[str, pd.DataFrame]:
    """Node and edge tables of a case in physical units."""
    if isinstance(case, PowerCase):
        nodes = pd.DataFrame([vars(b) for b in case.buses])
        edges = pd.DataFrame([vars(line) for line in case.lines])
        generators = pd.DataFrame([vars(g) for g in case.generators])
        return {"nodes": nodes, "edges": edges, "generators": generators}
    nodes = pd.DataFrame([vars(j) for j in case.junctions])
    edges = pd.DataFrame([vars(p) for p in case.pipes])
    compressors = pd.DataFrame([vars(c) for c in case.compressors])
    return {"nodes": nodes, "edges": edges, "compressors": compressors}


def summarize_case(case: Union[PowerCase, GasCase]) -> Dict[str, Any]:
    """
    Counts and totals of a case.

    Args:
        case: Parsed case

    Returns:
        Dictionary with summary statistics
    """
    tables = case_tables(case)
    summary: Dict[str, Any] = {
        "name": case.name or "<unnamed>",
        "kind": case.kind,
        "counts": {name: len(frame) for name, frame in tables.items()},
    }
    if isinstance(case, PowerCase):
        summary["units"] = f"base {case.base_mva:g} MVA"
        summary["total_load"] = float(tables["nodes"]["p_load"].sum())
        summary["total_capacity"] = float(tables["generators"]["p_max"].sum()) if len(case.generators) else 0.0
        summary["numeric_summary"] = tables["edges"][["x", "limit"]].describe().to_dict() if len(case.lines) else {}
    else:
        nominated = [j for j in case.junctions if j.has_nomination]
        summary["units"] = f"nominal pressure {case.nominal_pressure:g}, flow base {case.flow_base:g}"
        summary["total_load"] = float(tables["nodes"]["withdrawal"].sum())
        summary["total_capacity"] = float(sum(j.supply_max for j in nominated))
        summary["numeric_summary"] = (
            tables["nodes"][["pressure_min", "pressure_max"]].describe().to_dict()
        )
    return summary


def format_summary(summary: Dict[str, Any]) -> str:
    """
    Format a case summary as readable text.

    Args:
        summary: Summary dictionary

    Returns:
        Formatted summary string
    """
    lines = [
        "=== CASE SUMMARY ===",
        f"Name: {summary['name']}",
        f"Kind: {summary['kind']}",
        f"Units: {summary['units']}",
        "",
        "Counts:",
    ]
    for name, count in summary["counts"].items():
        lines.append(f"  {name}: {count}")

    lines.append("")
    lines.append(f"Total load: {summary['total_load']:.4f}")
    lines.append(f"Total nominated capacity: {summary['total_capacity']:.4f}")

    if summary.get("numeric_summary"):
        lines.append("")
        lines.append("Column Statistics:")
        for col, stats in summary["numeric_summary"].items():
            lines.append(f"  {col}:")
            for stat, value in stats.items():
                if pd.notna(value):
                    lines.append(f"    {stat}: {value:.4f}")

    return "\n".join(lines)
