"""
Command Line Interface for flowmarket.

Exit codes: 0 on success, 2 when a verdict or solve fails, 1 on error.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

from audit import AuditOptions, AuditReport, adequacy_audit
from case_io import load_point, parse_case
from formulations import build_problem
from ipm_solver import SolveOutcome, SolverOptions, solve
from model_core import NlpProblem
from reporting import (
    audit_document,
    format_iterations,
    format_number,
    format_star_table,
    solve_document,
    write_excel,
    write_json,
)
from simplex_oracle import solve_problem
from star_verify import StarMode, StarOptions, verify_star
from utils import configure_logging, format_summary, summarize_case

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERDICT = 2


@dataclass
class AuditRun:
    problem: NlpProblem
    outcome: SolveOutcome
    report: AuditReport
    document: Dict[str, Any]


def _case_info(path: str, case: Any, problem: NlpProblem) -> Dict[str, Any]:
    return {
        "file": Path(path).name,
        "name": case.name,
        "kind": case.kind,
        "model": problem.formulation,
    }


def _solver_options(args: argparse.Namespace) -> SolverOptions:
    return SolverOptions(tol_kkt=args.tol, max_iter=args.max_iter)


def _load(path: str, model: Optional[str]) -> Tuple[Any, NlpProblem]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Input file '{path}' not found.")
    case = parse_case(path)
    return case, build_problem(case, model)


def run_audit(
    path: str,
    model: Optional[str] = None,
    solver_options: Optional[SolverOptions] = None,
    audit_options: Optional[AuditOptions] = None,
) -> AuditRun:
    """Parse, build, solve and audit one case."""
    case, problem = _load(path, model)
    outcome = solve(problem, solver_options)
    report = adequacy_audit(problem, outcome.point, audit_options, outcome.status.value)
    document = audit_document(_case_info(path, case, problem), problem, outcome, report)
    return AuditRun(problem, outcome, report, document)


def verdict_line(report: AuditReport) -> str:
    if report.consistent:
        return f"ADEQUATE R={format_number(report.revenue.revenue)}"
    reasons = "; ".join(report.reasons)
    return f"{report.verdict.value.upper()}: {reasons}" if reasons else report.verdict.value.upper()


def _batch_worker(job: Tuple[str, Optional[str], float, int]) -> Tuple[str, int, str]:
    path, model, tol, max_iter = job
    try:
        run = run_audit(path, model, SolverOptions(tol_kkt=tol, max_iter=max_iter))
    except Exception as e:
        return path, EXIT_ERROR, f"Error: {e}"
    code = EXIT_OK if run.report.consistent else EXIT_VERDICT
    return path, code, verdict_line(run.report)


def cmd_solve(args: argparse.Namespace) -> int:
    case, problem = _load(args.case, args.model)
    if args.verbose:
        print(f"🔄 Solving '{args.case}' as {problem.formulation.upper()} "
              f"({problem.layout.total} variables)...")
    outcome = solve(problem, _solver_options(args))
    if args.verbose:
        print(format_iterations(outcome))
    scale = float(problem.topology.get("quantity_scale", 1.0))
    print(f"status: {outcome.status.value}")
    print(f"iterations: {outcome.iterations}")
    print(f"objective: {format_number(outcome.objective * scale)}")
    if args.out:
        write_json(solve_document(_case_info(args.case, case, problem), problem, outcome), args.out)
        print(f"💾 Solution saved to: {args.out}")
    if not outcome.optimal:
        print(f"solver did not converge: {outcome.message}", file=sys.stderr)
        return EXIT_VERDICT
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    if args.batch:
        return _audit_batch(args)
    if not args.case:
        raise ValueError("audit needs a case file or --batch DIR")
    audit_options = AuditOptions(check_star=not args.no_star)
    run = run_audit(args.case, args.model, _solver_options(args), audit_options)
    if args.verbose:
        print(format_iterations(run.outcome))
        print(f"✅ Solver status: {run.outcome.status.value}")
    if args.report:
        write_json(run.document, args.report)
        print(f"💾 Report saved to: {args.report}")
    if args.excel:
        write_excel(args.excel, run.document, run.problem, run.report, run.outcome)
        print(f"📊 Workbook saved to: {args.excel}")
    print(verdict_line(run.report))
    return EXIT_OK if run.report.consistent else EXIT_VERDICT


def _audit_batch(args: argparse.Namespace) -> int:
    directory = Path(args.batch)
    if not directory.is_dir():
        raise FileNotFoundError(f"Batch directory '{directory}' not found.")
    files = sorted(str(p) for p in directory.glob("*.json"))
    if not files:
        raise ValueError(f"no case files in {directory}")
    jobs = [(path, args.model, args.tol, args.max_iter) for path in files]
    with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
        results = list(pool.map(_batch_worker, jobs))
    worst = EXIT_OK
    for path, code, line in results:
        print(f"{Path(path).name}: {line}")
        worst = max(worst, code)
    return worst


def cmd_star(args: argparse.Namespace) -> int:
    _, problem = _load(args.case, args.model)
    if args.point:
        primal = load_point(problem, args.point)
    else:
        outcome = solve(problem, _solver_options(args))
        if not outcome.optimal:
            print(f"solver did not converge: {outcome.message}", file=sys.stderr)
            return EXIT_VERDICT
        primal = outcome.point.primal
    options = StarOptions(samples=args.samples)
    mode = StarMode(args.mode) if args.mode else None
    path = verify_star(problem, primal, mode=mode, options=options)
    print(format_star_table(path))
    summary = f"{path.mode.value.upper()} max_violation={format_number(path.max_violation)}"
    if path.epsilon_star is not None:
        summary += f" epsilon_star={format_number(path.epsilon_star)}"
    if path.hypothesis_met:
        print(f"{summary} hypothesis met")
        return EXIT_OK
    print(f"{summary} hypothesis unmet: {path.reason}")
    return EXIT_VERDICT


def cmd_oracle(args: argparse.Namespace) -> int:
    _, problem = _load(args.case, args.model)
    if problem.formulation != "dc":
        raise ValueError("the simplex oracle supports DC cases only")
    solution, point = solve_problem(problem)
    scale = float(problem.topology["quantity_scale"])
    print(f"objective: {format_number(solution.objective * scale)}")
    print(f"iterations: {solution.iterations}")
    if solution.degenerate:
        print("note: degenerate basis, duals may not be unique")
    print("primal:")
    for label, value in zip(problem.labels, point.primal):
        print(f"  {label} = {format_number(value)}")
    print("lambda:")
    for node, value in zip(problem.topology["node_ids"], point.lam):
        print(f"  {node} = {format_number(value)}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    case, problem = _load(args.case, args.model)
    print(format_summary(summarize_case(case)))
    print("")
    print(f"✅ '{args.case}' is a valid {case.kind} case "
          f"({problem.layout.total} variables, {problem.n_equality} equalities, "
          f"{problem.n_inequality} inequalities).")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "audit": cmd_audit,
    "star": cmd_star,
    "oracle": cmd_oracle,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmarket",
        description="Build, solve and audit network market clearing problems for revenue adequacy",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s solve cases/dc_3bus.json --out solution.json
  %(prog)s audit cases/dc_3bus.json --report report.json --excel report.xlsx
  %(prog)s audit --batch cases/
  %(prog)s star cases/gas_3junction.json --samples 11
  %(prog)s oracle cases/dc_3bus.json
  %(prog)s validate cases/ac_2bus.json
        """
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Verbose output")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--model", choices=["dc", "ac", "ogf"],
        help="Formulation (default: chosen by case kind)"
    )
    common.add_argument("--tol", type=float, default=1e-8, help="KKT tolerance (default: 1e-8)")
    common.add_argument("--max-iter", type=int, default=200, help="Iteration limit (default: 200)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="Verbose output")

    sub = parser.add_subparsers(dest="command", required=True)

    solve_p = sub.add_parser("solve", parents=[common], help="Build and solve a case")
    solve_p.add_argument("case", help="Case file (.json)")
    solve_p.add_argument("--out", help="Write the solution report to this path")

    audit_p = sub.add_parser("audit", parents=[common], help="Solve and audit revenue adequacy")
    audit_p.add_argument("case", nargs="?", help="Case file (.json)")
    audit_p.add_argument("--report", help="Write the JSON audit report to this path")
    audit_p.add_argument("--excel", help="Write an Excel workbook of the audit to this path")
    audit_p.add_argument("--batch", metavar="DIR", help="Audit every .json case in DIR in parallel")
    audit_p.add_argument("--no-star", action="store_true", help="Skip the scaling-path check")

    star_p = sub.add_parser("star", parents=[common], help="Verify the star-shaped property")
    star_p.add_argument("case", help="Case file (.json)")
    star_p.add_argument("--samples", type=int, default=101, help="Grid size (default: 101)")
    star_p.add_argument("--mode", choices=["gss", "lss"], help="Override the formulation default")
    star_p.add_argument("--point", help="Point file to use instead of solving")

    oracle_p = sub.add_parser("oracle", parents=[common], help="Dense simplex cross-check (DC)")
    oracle_p.add_argument("case", help="Case file (.json)")

    validate_p = sub.add_parser("validate", parents=[common], help="Validate a case and summarize it")
    validate_p.add_argument("case", help="Case file (.json)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI function."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging("info" if args.verbose else None)
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        if args.verbose:
            import traceback
            traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
