#!/usr/bin/env python3
"""
Demo script for flowmarket.
Solves and audits the bundled cases and shows where the revenue comes from.
"""

import sys
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent / "src"))

from audit import adequacy_audit
from case_io import parse_case
from formulations import build_problem
from ipm_solver import solve
from reporting import edges_frame, format_star_table, nodes_frame
from simplex_oracle import solve_problem
from utils import format_summary, summarize_case

CASES = Path(__file__).parent / "cases"


def demo_dc_market():
    """Congested 3-bus market: prices, rents and the verdict."""
    print("🚀 Demo: Congested DC market")
    print("=" * 50)

    case = parse_case(CASES / "dc_3bus.json")
    print(format_summary(summarize_case(case)))

    problem = build_problem(case)
    outcome = solve(problem)
    print(f"\n✅ Solver: {outcome.status.value} after {outcome.iterations} iterations")

    report = adequacy_audit(problem, outcome.point, solver_status=outcome.status.value)
    print("\n📈 Nodal prices and payments:")
    print(nodes_frame(problem, report).to_string(index=False))
    print("\n🔌 Line rents:")
    print(edges_frame(problem, report).to_string(index=False))
    print(f"\n💰 Revenue R = {report.revenue.revenue_physical:.2f} $/h")
    print(f"📋 Verdict: {report.verdict.value}")

    solution, point = solve_problem(problem)
    print(f"\n🔎 Simplex cross-check: objective {solution.objective * 100:.2f} $/h, "
          f"prices {', '.join(f'{v:.2f}' for v in point.lam)}")

    print("\n" + "=" * 50)


def demo_gas_network():
    """Compressed gas line: scaling path toward the common pressure."""
    print("🚀 Demo: Gas network with a compressor")
    print("=" * 50)

    problem = build_problem(parse_case(CASES / "gas_3junction.json"))
    outcome = solve(problem)
    report = adequacy_audit(problem, outcome.point, solver_status=outcome.status.value)
    print(f"✅ Solver: {outcome.status.value}, objective {outcome.objective:.6f}")
    print(f"📏 Common squared pressure: {report.star.pi_c:g}")
    print(format_star_table(report.star))
    print(f"💰 Revenue R = {report.revenue.revenue:.6f}")
    print(f"📋 Verdict: {report.verdict.value}")

    print("\n" + "=" * 50)


def demo_ac_binding():
    """AC case with a pinned voltage: adequacy is not certified."""
    print("🚀 Demo: AC voltage at its lower bound")
    print("=" * 50)

    for name in ("ac_2bus.json", "ac_2bus_binding.json"):
        problem = build_problem(parse_case(CASES / name))
        outcome = solve(problem)
        report = adequacy_audit(problem, outcome.point, solver_status=outcome.status.value)
        print(f"📁 {name}: {report.verdict.value}")
        if report.reasons:
            print(f"   ⚠️ {'; '.join(report.reasons)}")

    print("\n" + "=" * 50)


def main():
    """Run all demos."""
    print("🎯 flowmarket - Demo Suite")
    print("=" * 60)

    try:
        demo_dc_market()
        demo_gas_network()
        demo_ac_binding()

        print("🎉 Demo completed successfully!")
        print("\n💡 Next steps:")
        print("   1. Generate random cases: python sample_data.py")
        print("   2. Audit them: flowmarket audit --batch sample_data")
        print("   3. Export a workbook: flowmarket audit cases/dc_3bus.json --excel audit.xlsx")

    except Exception as e:
        print(f"❌ Demo failed: {e}")
        import traceback
        traceback.print_exc()


if __name__ == "__main__":
    main()
