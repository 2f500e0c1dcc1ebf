#!/usr/bin/env python3
"""
Script to generate random sample cases for trying out flowmarket.
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent / "src"))

from case_generator import random_ac_case, random_dc_case, random_gas_case
from case_io import write_case
from utils import case_tables


def create_cases(seed: int = 42):
    """Draw a few cases of each kind from one seeded generator."""
    rng = np.random.default_rng(seed)
    cases = {}
    for i in range(3):
        cases[f"random_dc_{i + 1}"] = random_dc_case(rng)
    for i in range(2):
        cases[f"random_gas_{i + 1}"] = random_gas_case(rng)
    for i in range(2):
        cases[f"random_ac_{i + 1}"] = random_ac_case(rng)
    return cases


def main():
    """Write the sample cases and an overview workbook."""

    print("📊 Generating sample cases...")

    output_dir = Path("sample_data")
    output_dir.mkdir(exist_ok=True)

    cases = create_cases()
    for name, case in cases.items():
        path = output_dir / f"{name}.json"
        write_case(case, path)
        print(f"  📋 {path}")

    overview = output_dir / "sample_cases.xlsx"
    with pd.ExcelWriter(overview, engine="openpyxl") as writer:
        for name, case in cases.items():
            nodes = case_tables(case)["nodes"]
            nodes.to_excel(writer, sheet_name=name, index=False)

    print(f"✅ {len(cases)} cases written to {output_dir}/")
    print(f"📁 Overview workbook: {overview}")

    print("\n🎯 You can now try:")
    print(f"   flowmarket audit --batch {output_dir}")
    print(f"   flowmarket star {output_dir}/random_gas_1.json --samples 11")


if __name__ == "__main__":
    main()
