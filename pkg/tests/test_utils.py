"""
Tests for case summaries, logging setup and report formatting.
"""

import json
import logging
import unittest
from pathlib import Path
import sys

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from case_io import parse_case
from model_core import TRACE
from reporting import dumps, format_number
from utils import case_tables, configure_logging, format_summary, summarize_case

CASES = Path(__file__).parent.parent / "cases"


class TestUtils(unittest.TestCase):
    """Test cases for utility functions."""

    def setUp(self):
        self.dc = parse_case(CASES / "dc_3bus.json")
        self.gas = parse_case(CASES / "gas_3junction.json")

    def test_case_tables(self):
        """Power cases give node, edge and generator tables."""
        tables = case_tables(self.dc)
        self.assertEqual(list(tables), ["nodes", "edges", "generators"])
        self.assertEqual(len(tables["nodes"]), 3)
        self.assertEqual(len(tables["generators"]), 2)
        self.assertEqual(list(tables["edges"]["id"]), ["l12", "l13", "l23"])

        gas_tables = case_tables(self.gas)
        self.assertEqual(list(gas_tables), ["nodes", "edges", "compressors"])
        self.assertEqual(len(gas_tables["compressors"]), 1)

    def test_summarize_power_case(self):
        summary = summarize_case(self.dc)
        self.assertEqual(summary["name"], "dc_3bus")
        self.assertEqual(summary["kind"], "power_dc")
        self.assertEqual(summary["counts"], {"nodes": 3, "edges": 3, "generators": 2})
        self.assertAlmostEqual(summary["total_load"], 150.0)
        self.assertAlmostEqual(summary["total_capacity"], 400.0)
        self.assertIn("limit", summary["numeric_summary"])

    def test_summarize_gas_case(self):
        summary = summarize_case(self.gas)
        self.assertEqual(summary["counts"], {"nodes": 3, "edges": 2, "compressors": 1})
        self.assertAlmostEqual(summary["total_load"], 5.0)
        self.assertAlmostEqual(summary["total_capacity"], 15.0)

    def test_format_summary(self):
        """Test summary formatting."""
        text = format_summary(summarize_case(self.dc))
        self.assertIn("=== CASE SUMMARY ===", text)
        self.assertIn("Kind: power_dc", text)
        self.assertIn("  generators: 2", text)
        self.assertIn("Total load: 150.0000", text)
        self.assertIn("Column Statistics:", text)


class TestLogging(unittest.TestCase):
    """FLOWMARKET_LOG levels."""

    def setUp(self):
        root = logging.getLogger()
        self.addCleanup(root.setLevel, root.level)

    def test_named_levels(self):
        self.assertEqual(configure_logging("trace"), TRACE)
        self.assertEqual(logging.getLogger().level, TRACE)
        self.assertEqual(configure_logging("info"), logging.INFO)
        self.assertGreater(configure_logging("off"), logging.CRITICAL)

    def test_unknown_level_turns_logging_off(self):
        self.assertEqual(configure_logging("loud"), configure_logging("off"))


class TestReportFormatting(unittest.TestCase):
    """Deterministic number and JSON formatting."""

    def test_format_number(self):
        self.assertEqual(format_number(48), "48.0")
        self.assertEqual(format_number(0.5), "0.5")
        self.assertEqual(format_number(0.1), "0.10000000000000001")
        self.assertEqual(format_number(-0.0), "0.0")
        self.assertEqual(format_number(float("nan")), "null")
        self.assertEqual(format_number(float("inf")), "null")

    def test_dumps_layout(self):
        text = dumps({"b": 1, "a": [1.5, None, True], "c": {}})
        expected = '{\n  "b": 1,\n  "a": [\n    1.5,\n    null,\n    true\n  ],\n  "c": {}\n}\n'
        self.assertEqual(text, expected)
        self.assertEqual(json.loads(text), {"b": 1, "a": [1.5, None, True], "c": {}})

    def test_dumps_rejects_unknown_types(self):
        with self.assertRaises(TypeError):
            dumps({"x": object()})


if __name__ == "__main__":
    unittest.main()
