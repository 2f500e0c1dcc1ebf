"""
Dense two-phase simplex with Bland's rule.

Independent reference solver for linear instances (DC OPF). Duals are reported
in the same sign convention as the interior-point solver: the Lagrangian is
``c'z + y_eq'(A_eq z - b_eq) + y_ub'(A_ub z - b_ub)`` so ``y_ub >= 0``.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from model_core import FamilyKind, NlpProblem, PrimalDualPoint, StructuralError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-11
DEGENERACY_TOL = 1e-9


class UnboundedError(Exception):
    """Raised when the linear program has no finite optimum."""


class InfeasibleError(Exception):
    """Raised when the linear program has no feasible point."""


@dataclass(frozen=True)
class LinearProgram:
    """min c'z + constant s.t. A_eq z = b_eq, A_ub z <= b_ub, lower <= z <= upper."""

    cost: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constant: float = 0.0

    @property
    def n(self) -> int:
        return self.cost.shape[0]


@dataclass(frozen=True)
class LpSolution:
    """Optimal vertex with duals and degeneracy flags."""

    z: np.ndarray
    objective: float
    y_eq: np.ndarray
    y_ub: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    primal_degenerate: bool
    dual_degenerate: bool

    @property
    def degenerate(self) -> bool:
        return self.primal_degenerate or self.dual_degenerate


@dataclass
class _StandardForm:
    """Columns w >= 0 with z = offset + transform @ w."""

    offset: np.ndarray
    transform: np.ndarray
    pair: np.ndarray
    bound_rows: List[Tuple[int, float]]


def _standardize(lp: LinearProgram) -> _StandardForm:
    columns: List[np.ndarray] = []
    pair: List[int] = []
    offset = np.zeros(lp.n)
    bound_rows: List[Tuple[int, float]] = []
    for j in range(lp.n):
        lo, up = lp.lower[j], lp.upper[j]
        unit = np.zeros(lp.n)
        unit[j] = 1.0
        if np.isfinite(lo):
            offset[j] = lo
            columns.append(unit)
            pair.append(-1)
            if np.isfinite(up):
                bound_rows.append((len(columns) - 1, up - lo))
        elif np.isfinite(up):
            offset[j] = up
            columns.append(-unit)
            pair.append(-1)
        else:
            k = len(columns)
            columns.extend([unit, -unit])
            pair.extend([k + 1, k])
    transform = np.column_stack(columns) if columns else np.zeros((lp.n, 0))
    return _StandardForm(offset, transform, np.array(pair, dtype=int), bound_rows)


def _structural_columns(lp: LinearProgram, form: _StandardForm) -> set:
    """
    Standard-form columns whose value is fixed by the data alone: variables with
    equal bounds or a one-variable equality row, and their bound-row slacks.
    A zero basic value in these columns is not a degenerate vertex.
    """
    fixed = np.isfinite(lp.lower) & (lp.lower == lp.upper)
    for row in lp.a_eq:
        nonzero = np.flatnonzero(row != 0.0)
        if nonzero.size == 1:
            fixed[nonzero[0]] = True
    columns = set(int(k) for k in np.flatnonzero(np.any(form.transform[fixed] != 0.0, axis=0)))
    first_bound_slack = form.transform.shape[1] + lp.a_ub.shape[0]
    for r, (col, _) in enumerate(form.bound_rows):
        if col in columns:
            columns.add(first_bound_slack + r)
    return columns


def _pivot(table: np.ndarray, rhs: np.ndarray, row: int, col: int) -> None:
    scale = table[row, col]
    table[row] /= scale
    rhs[row] /= scale
    for i in range(table.shape[0]):
        if i != row and table[i, col] != 0.0:
            factor = table[i, col]
            table[i] -= factor * table[row]
            rhs[i] -= factor * rhs[row]


def _iterate(
    table: np.ndarray,
    rhs: np.ndarray,
    basis: List[int],
    cost: np.ndarray,
    allowed: np.ndarray,
    max_iter: int,
) -> int:
    """Bland's rule: lowest-index entering column, lowest-index leaving basic variable."""
    for iteration in range(max_iter):
        reduced = cost - cost[basis] @ table
        candidates = allowed[reduced[allowed] < -PIVOT_TOL]
        if candidates.size == 0:
            return iteration
        entering = int(candidates[0])
        column = table[:, entering]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if rows.size == 0:
            raise UnboundedError(f"column {entering} is an unbounded ray")
        ratios = rhs[rows] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + PIVOT_TOL * (1.0 + abs(best))]
        leaving = int(min(ties, key=lambda i: basis[i]))
        _pivot(table, rhs, leaving, entering)
        basis[leaving] = entering
        logger.debug("pivot %d: column %d enters, row %d leaves", iteration, entering, leaving)
    raise RuntimeError(f"simplex did not terminate within {max_iter} pivots")


def solve_lp(lp: LinearProgram, max_iter: int = 10000) -> LpSolution:
    """
    Solve a linear program with the two-phase tableau method.

    Args:
        lp: The linear program
        max_iter: Pivot limit per phase

    Returns:
        LpSolution at an optimal vertex

    Raises:
        InfeasibleError: Phase one ends with positive artificial cost
        UnboundedError: An improving ray exists
    """
    form = _standardize(lp)
    n_std = form.transform.shape[1]
    a_eq = lp.a_eq @ form.transform
    b_eq = lp.b_eq - lp.a_eq @ form.offset
    bound_matrix = np.zeros((len(form.bound_rows), n_std))
    for r, (col, _) in enumerate(form.bound_rows):
        bound_matrix[r, col] = 1.0
    a_ub = np.vstack([lp.a_ub @ form.transform, bound_matrix])
    b_ub = np.concatenate([lp.b_ub - lp.a_ub @ form.offset, [u for _, u in form.bound_rows]])

    m_eq, m_ub = a_eq.shape[0], a_ub.shape[0]
    m = m_eq + m_ub
    slack = np.vstack([np.zeros((m_eq, m_ub)), np.eye(m_ub)])
    a_full = np.hstack([np.vstack([a_eq, a_ub]), slack])
    b_full = np.concatenate([b_eq, b_ub])
    sign = np.where(b_full < 0.0, -1.0, 1.0)
    a_full *= sign[:, None]
    b_full = b_full * sign

    n_real = n_std + m_ub
    table = np.hstack([a_full, np.eye(m)])
    rhs = b_full.copy()
    basis = list(range(n_real, n_real + m))

    phase_one_cost = np.concatenate([np.zeros(n_real), np.ones(m)])
    iterations = _iterate(table, rhs, basis, phase_one_cost, np.arange(n_real + m), max_iter)
    infeasibility = float(phase_one_cost[basis] @ rhs)
    if infeasibility > 1e-9 * (1.0 + np.abs(b_full).max(initial=0.0)):
        raise InfeasibleError(f"phase one ends with artificial cost {infeasibility:.3e}")

    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] < n_real:
            continue
        nonzero = np.flatnonzero(np.abs(table[i, :n_real]) > PIVOT_TOL)
        if nonzero.size:
            _pivot(table, rhs, i, int(nonzero[0]))
            basis[i] = int(nonzero[0])
        else:
            keep[i] = False
    if not keep.all():
        logger.debug("dropping %d redundant rows", int((~keep).sum()))
    table, rhs = table[keep], rhs[keep]
    basis = [b for b, k in zip(basis, keep) if k]

    cost = np.concatenate([form.transform.T @ lp.cost, np.zeros(m_ub), np.zeros(m)])
    iterations += _iterate(table, rhs, basis, cost, np.arange(n_real), max_iter)

    w = np.zeros(n_real + m)
    w[basis] = rhs
    z = form.offset + form.transform @ w[:n_std]

    pi = np.zeros(m)
    if basis:
        basis_matrix = a_full[keep][:, basis]
        pi[keep] = np.linalg.solve(basis_matrix.T, cost[basis])
    y = -sign * pi
    y_eq = y[:m_eq]
    y_ub = y[m_eq:m_eq + lp.a_ub.shape[0]]
    reduced_costs = lp.cost + lp.a_eq.T @ y_eq + lp.a_ub.T @ y_ub

    reduced_std = cost[:n_real] - cost[basis] @ table[:, :n_real]
    basic = set(basis)
    nonbasic = [
        j for j in range(n_real)
        if j not in basic and not (j < n_std and form.pair[j] in basic)
    ]
    dual_degenerate = bool(np.any(np.abs(reduced_std[nonbasic]) < DEGENERACY_TOL))
    structural = _structural_columns(lp, form)
    primal_degenerate = any(
        value < DEGENERACY_TOL for b, value in zip(basis, rhs) if b not in structural
    )
    objective = float(lp.cost @ z + lp.constant)
    logger.info("simplex optimum %.10g after %d pivots", objective, iterations)
    return LpSolution(
        z=z,
        objective=objective,
        y_eq=y_eq,
        y_ub=y_ub,
        reduced_costs=reduced_costs,
        iterations=iterations,
        primal_degenerate=primal_degenerate,
        dual_degenerate=dual_degenerate,
    )


def problem_to_lp(problem: NlpProblem) -> LinearProgram:
    """
    Express a linear NlpProblem as a LinearProgram.

    Equality rows are conservation followed by the system equalities, inequality
    rows are the system inequalities; q carries the nomination bounds.
    """
    if np.any(problem.objective.quadratic != 0.0):
        raise StructuralError("the simplex oracle handles linear objectives only")
    families = problem.families
    if not all(f.linear for f in families):
        raise StructuralError("the simplex oracle handles linear constraint families only")
    n = problem.layout.total
    zero = np.zeros(n)

    def stack(kinds):
        rows = [f for f in families if f.kind in kinds]
        if not rows:
            return np.zeros((0, n)), np.zeros(0)
        matrix = sp.vstack([f.jacobian(zero) for f in rows]).toarray()
        offset = np.concatenate([f.evaluator(zero) for f in rows])
        return matrix, -offset

    a_eq, b_eq = stack({FamilyKind.CONSERVATION, FamilyKind.SYSTEM_EQUALITY})
    a_ub, b_ub = stack({FamilyKind.SYSTEM_INEQUALITY})
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    lower[problem.layout.q] = problem.lower
    upper[problem.layout.q] = problem.upper
    return LinearProgram(
        cost=problem.objective.linear.copy(),
        a_eq=a_eq,
        b_eq=b_eq,
        a_ub=a_ub,
        b_ub=b_ub,
        lower=lower,
        upper=upper,
        constant=problem.objective.constant,
    )


def solution_point(problem: NlpProblem, solution: LpSolution) -> PrimalDualPoint:
    """Map an LP solution onto the problem's primal-dual layout."""
    n_x = problem.layout.n_exposed
    reduced_q = solution.reduced_costs[problem.layout.q]
    return PrimalDualPoint(
        primal=solution.z.copy(),
        mu_lower=np.maximum(reduced_q, 0.0),
        mu_upper=np.maximum(-reduced_q, 0.0),
        lam=solution.y_eq[:n_x].copy(),
        nu_e=solution.y_eq[n_x:].copy(),
        nu_i=solution.y_ub.copy(),
    )


def solve_problem(problem: NlpProblem, max_iter: int = 10000) -> Tuple[LpSolution, PrimalDualPoint]:
    """Solve a linear NlpProblem and return the raw solution with its primal-dual point."""
    solution = solve_lp(problem_to_lp(problem), max_iter=max_iter)
    return solution, solution_point(problem, solution)


def maybe_solve(problem: NlpProblem) -> Optional[LpSolution]:
    """Solve and return None when the LP is infeasible or unbounded."""
    try:
        return solve_lp(problem_to_lp(problem))
    except (InfeasibleError, UnboundedError) as e:
        logger.info("simplex oracle: %s", e)
        return None
