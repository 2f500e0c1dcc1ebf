"""
Primal-dual interior-point solver for NlpProblem instances.

System inequalities are turned into equalities with positive slacks, nomination
bounds keep their own log-barrier terms. Newton steps come from the symmetric
primal-dual KKT matrix, factored with Bunch-Kaufman LDL^T; the inertia of the
block diagonal factor drives primal and dual regularization. Globalization is an
l1-penalty merit line search with one second-order correction.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from model_core import (
    TRACE,
    ConstraintFamily,
    FamilyKind,
    NlpProblem,
    PrimalDualPoint,
    StructuralError,
    lagrangian_hessian,
    stacked_jacobian,
    stacked_residual,
)

logger = logging.getLogger(__name__)

SLACK_FLOOR = 1e-2
BOUND_PUSH = 1e-2
FIXED_RELAXATION = 1e-8
MULTIPLIER_CAP = 1e3
KAPPA_SIGMA = 1e10
ARMIJO_ETA = 1e-4
MIN_STEP = 1e-12
MAX_REGULARIZATION = 1e20
SCALING_THRESHOLD = 100.0
MAX_RESTORATION_FAILURES = 3
BARRIER_EXPONENT = 1.5
ERROR_REDUCTION = 0.5
STALL_WINDOW = 8
STALL_PROGRESS = 0.99


class DegenerateConstraintError(StructuralError):
    """Raised when a system inequality row does not depend on any variable."""


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    NUMERIC_FAILURE = "numeric_failure"


@dataclass(frozen=True)
class WarmStart:
    """Start from a given primal-dual point instead of the flat start."""

    point: PrimalDualPoint


@dataclass(frozen=True)
class SolverOptions:
    tol_kkt: float = 1e-8
    max_iter: int = 200
    initial_barrier: float = 0.1
    barrier_reduction: float = 0.2
    fraction_to_boundary: float = 0.995
    regularization_floor: float = 1e-10
    initialization: Union[str, WarmStart] = "flat"
    barrier_tol_factor: float = 1.0
    smoothing: float = 1e-8

    def __post_init__(self):
        for name in (
            "tol_kkt", "initial_barrier", "barrier_reduction", "fraction_to_boundary",
            "regularization_floor", "barrier_tol_factor",
        ):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.barrier_reduction < 1.0:
            raise ValueError("barrier_reduction must lie in (0, 1)")
        if not self.fraction_to_boundary < 1.0:
            raise ValueError("fraction_to_boundary must be below 1")
        if self.smoothing < 0.0:
            raise ValueError("smoothing must be non-negative")
        if not (self.initialization == "flat" or isinstance(self.initialization, WarmStart)):
            raise ValueError("initialization must be 'flat' or a WarmStart")


@dataclass(frozen=True)
class SolveOutcome:
    """Solver result; history rows are (iteration, stationarity, feasibility, complementarity)."""

    status: SolveStatus
    point: PrimalDualPoint
    iterations: int
    kkt_residual_history: List[Tuple[int, float, float, float]]
    objective: float
    message: str = ""
    barrier: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


@dataclass
class SlackIterate:
    """Iterate of the slacked problem: z primal, s slacks, y equality duals, bound duals."""

    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    z_slack: np.ndarray

    def copy(self) -> "SlackIterate":
        return SlackIterate(*(np.array(v, dtype=float) for v in (
            self.z, self.s, self.y, self.z_lower, self.z_upper, self.z_slack
        )))


@dataclass(frozen=True)
class SlackedProblem:
    """
    ``problem`` with every system inequality written as ``g(z) + s = 0``, s > 0.
    Equality rows are conservation, then H, then the slacked G rows.
    """

    problem: NlpProblem
    equality_families: Tuple[ConstraintFamily, ...]
    inequality_families: Tuple[ConstraintFamily, ...]
    lower: np.ndarray
    upper: np.ndarray
    lower_mask: np.ndarray = field(repr=False)
    upper_mask: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.problem.layout.total

    @property
    def n_traded(self) -> int:
        return self.problem.layout.n_traded

    @property
    def m_eq(self) -> int:
        return sum(f.count for f in self.equality_families)

    @property
    def m_ineq(self) -> int:
        return sum(f.count for f in self.inequality_families)

    @property
    def m(self) -> int:
        return self.m_eq + self.m_ineq

    def inequality(self, z: np.ndarray) -> np.ndarray:
        return stacked_residual(z, self.inequality_families)

    def slacks(self, z: np.ndarray, floor: float = 0.0) -> np.ndarray:
        """Slack values ``-g(z)``, raised to ``floor``."""
        return np.maximum(-self.inequality(z), floor)

    def residual(self, z: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.concatenate([
            stacked_residual(z, self.equality_families), self.inequality(z) + s
        ])

    def jacobian(self, z: np.ndarray) -> sp.csr_matrix:
        """Jacobian of the residual with respect to z (the s block is [0; I])."""
        families = self.equality_families + self.inequality_families
        return stacked_jacobian(self.problem, z, families)

    def full_jacobian(self, z: np.ndarray) -> np.ndarray:
        """Dense Jacobian with respect to (z, s)."""
        full = np.zeros((self.m, self.n + self.m_ineq))
        full[:, :self.n] = self.jacobian(z).toarray()
        k = np.arange(self.m_ineq)
        full[self.m_eq + k, self.n + k] = 1.0
        return full

    def _point(self, z: np.ndarray, y: np.ndarray, nu_i: np.ndarray,
               mu_lower: np.ndarray, mu_upper: np.ndarray) -> PrimalDualPoint:
        n_x = self.problem.layout.n_exposed
        return PrimalDualPoint(
            primal=np.array(z, dtype=float),
            mu_lower=np.array(mu_lower, dtype=float),
            mu_upper=np.array(mu_upper, dtype=float),
            lam=np.array(y[:n_x], dtype=float),
            nu_e=np.array(y[n_x:self.m_eq], dtype=float),
            nu_i=np.array(nu_i, dtype=float),
        )

    def hessian(self, z: np.ndarray, y: np.ndarray) -> sp.csr_matrix:
        point = self._point(
            z, y, y[self.m_eq:], np.zeros(self.n_traded), np.zeros(self.n_traded)
        )
        return lagrangian_hessian(self.problem, z, point.family_weights(self.problem))

    def to_original(self, it: SlackIterate) -> PrimalDualPoint:
        """Report slack-row duals as nu_i; the slack multiplier keeps them non-negative."""
        return self._point(
            it.z, it.y, it.z_slack,
            np.where(self.lower_mask, it.z_lower, 0.0),
            np.where(self.upper_mask, it.z_upper, 0.0),
        )

    def from_original(self, point: PrimalDualPoint) -> SlackIterate:
        point.check(self.problem)
        return SlackIterate(
            z=np.array(point.primal, dtype=float),
            s=-self.inequality(point.primal),
            y=np.concatenate([point.lam, point.nu_e, point.nu_i]).astype(float),
            z_lower=np.array(point.mu_lower, dtype=float),
            z_upper=np.array(point.mu_upper, dtype=float),
            z_slack=np.array(point.nu_i, dtype=float),
        )


def to_slack_form(problem: NlpProblem, relax_fixed: bool = True) -> SlackedProblem:
    """
    Rewrite system inequalities with slacks and prepare the nomination bounds.

    Fixed nominations (lower == upper) are widened by 1e-8 max(1, |bound|) on
    each side so the barrier has an interior.

    Raises:
        DegenerateConstraintError: A G row has no Jacobian entries (constant row)
    """
    primal = problem.default_primal()
    for family in problem.inequality_families:
        jac = sp.csr_matrix(family.jacobian(primal))
        empty = jac.getnnz(axis=1) == 0
        if family.linear:
            empty |= np.asarray(abs(jac).sum(axis=1)).ravel() == 0.0
        if np.any(empty):
            row = int(np.argmax(empty))
            label = family.labels[row] if family.labels else f"{family.name}[{row}]"
            raise DegenerateConstraintError(f"inequality row {label} is constant")

    lower = problem.lower.copy()
    upper = problem.upper.copy()
    if relax_fixed:
        fixed = lower == upper
        widen = FIXED_RELAXATION * np.maximum(1.0, np.abs(lower))
        lower = np.where(fixed, lower - widen, lower)
        upper = np.where(fixed, upper + widen, upper)
    equalities = tuple(
        f for f in problem.families
        if f.kind in (FamilyKind.CONSERVATION, FamilyKind.SYSTEM_EQUALITY)
    )
    return SlackedProblem(
        problem=problem,
        equality_families=equalities,
        inequality_families=tuple(problem.inequality_families),
        lower=lower,
        upper=upper,
        lower_mask=np.isfinite(lower),
        upper_mask=np.isfinite(upper),
    )


def next_barrier(mu: float, options: SolverOptions) -> float:
    """Fiacco-McCormick update, linear far from zero and superlinear near it."""
    mu_min = options.tol_kkt / 10.0
    return max(mu_min, min(options.barrier_reduction * mu, mu**BARRIER_EXPONENT))


def _fraction_to_boundary(values: np.ndarray, steps: np.ndarray, tau: float) -> float:
    shrinking = steps < 0.0
    if not np.any(shrinking):
        return 1.0
    return float(min(1.0, np.min(-tau * values[shrinking] / steps[shrinking])))


@dataclass
class _Factorization:
    matrix: np.ndarray
    lower: np.ndarray
    block_diag: np.ndarray
    perm: np.ndarray

    def _solve_once(self, rhs: np.ndarray) -> np.ndarray:
        u = la.solve_triangular(self.lower, rhs[self.perm], lower=True, unit_diagonal=True)
        w = la.solve(self.block_diag, u, assume_a="sym")
        v = la.solve_triangular(self.lower.T, w, lower=False, unit_diagonal=True)
        out = np.empty_like(rhs)
        out[self.perm] = v
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        sol = self._solve_once(rhs)
        return sol + self._solve_once(rhs - self.matrix @ sol)


def _factor(matrix: np.ndarray) -> Tuple[_Factorization, Tuple[int, int, int]]:
    # Dense Bunch-Kaufman: scipy has no sparse symmetric indefinite LDL^T that
    # reports inertia, and KKT matrices here stay below a few hundred rows.
    lu, d, perm = la.ldl(matrix, lower=True, hermitian=True)
    eig = la.eigvalsh(d)
    zero_tol = 1e-13 * max(1.0, float(np.max(np.abs(eig), initial=0.0)))
    inertia = (
        int(np.sum(eig > zero_tol)),
        int(np.sum(eig < -zero_tol)),
        int(np.sum(np.abs(eig) <= zero_tol)),
    )
    return _Factorization(matrix, lu[perm], d, perm), inertia


class InteriorPointSolver:
    """One solve over a slacked problem. Holds per-call state only."""

    def __init__(self, slacked: SlackedProblem, options: SolverOptions):
        self.sp = slacked
        self.options = options
        self.nq = slacked.n_traded
        self.lo = np.where(slacked.lower_mask, slacked.lower, 0.0)
        self.up = np.where(slacked.upper_mask, slacked.upper, 0.0)
        self.lm = slacked.lower_mask.astype(float)
        self.um = slacked.upper_mask.astype(float)
        self.mu = options.initial_barrier
        self.mu_min = options.tol_kkt / 10.0
        self.nu = 1.0
        self.last_delta_w = 0.0
        self.last_recovery = 0
        self.history: List[Tuple[int, float, float, float]] = []
        self.objective = self.sp.problem.objective

    # -- evaluation -------------------------------------------------------

    def gaps(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        q = z[:self.nq]
        return (
            np.where(self.sp.lower_mask, q - self.lo, 1.0),
            np.where(self.sp.upper_mask, self.up - q, 1.0),
        )

    def merit(self, z: np.ndarray, s: np.ndarray) -> float:
        gl, gu = self.gaps(z)
        barrier = (
            np.sum(self.lm * np.log(gl)) + np.sum(self.um * np.log(gu)) + np.sum(np.log(s))
        )
        return (
            self.objective.value(z) - self.mu * barrier
            + self.nu * np.sum(np.abs(self.sp.residual(z, s)))
        )

    def errors(self, it: SlackIterate, jac: sp.csr_matrix, c: np.ndarray, mu: float):
        """Stationarity, feasibility and complementarity (products minus mu) norms."""
        gl, gu = self.gaps(it.z)
        stat_z = self.objective.gradient(it.z) + jac.T @ it.y
        stat_z[:self.nq] += -self.lm * it.z_lower + self.um * it.z_upper
        stat_s = it.y[self.sp.m_eq:] - it.z_slack
        stationarity = max(_inf(stat_z), _inf(stat_s))
        complementarity = max(
            _inf(self.lm * (it.z_lower * gl - mu)),
            _inf(self.um * (it.z_upper * gu - mu)),
            _inf(it.z_slack * it.s - mu),
        )
        return stationarity, _inf(c), complementarity

    def barrier_error(self, it: SlackIterate, jac, c) -> float:
        stationarity, feasibility, complementarity = self.errors(it, jac, c, self.mu)
        count = self.sp.m + int(self.lm.sum() + self.um.sum()) + self.sp.m_ineq
        dual_mass = (
            np.sum(np.abs(it.y)) + np.sum(np.abs(it.z_lower)) + np.sum(np.abs(it.z_upper))
            + np.sum(np.abs(it.z_slack))
        )
        s_d = max(SCALING_THRESHOLD, dual_mass / max(count, 1)) / SCALING_THRESHOLD
        return max(stationarity / s_d, feasibility, complementarity / s_d)

    # -- initialization ---------------------------------------------------

    def initial_iterate(self) -> SlackIterate:
        init = self.options.initialization
        problem = self.sp.problem
        if isinstance(init, WarmStart):
            init.point.check(problem)
            z = np.array(init.point.primal, dtype=float)
        else:
            z = problem.default_primal()
        q = z[:self.nq]
        width = np.where(self.sp.lower_mask & self.sp.upper_mask, self.up - self.lo, np.inf)
        push_lo = np.minimum(BOUND_PUSH * np.maximum(1.0, np.abs(self.lo)), BOUND_PUSH * width)
        push_up = np.minimum(BOUND_PUSH * np.maximum(1.0, np.abs(self.up)), BOUND_PUSH * width)
        q = np.where(self.sp.lower_mask, np.maximum(q, self.lo + push_lo), q)
        q = np.where(self.sp.upper_mask, np.minimum(q, self.up - push_up), q)
        z[:self.nq] = q
        s = self.sp.slacks(z, SLACK_FLOOR)

        if isinstance(init, WarmStart):
            floor = self.options.initial_barrier
            z_lower = np.maximum(init.point.mu_lower, floor) * self.lm
            z_upper = np.maximum(init.point.mu_upper, floor) * self.um
            z_slack = np.maximum(init.point.nu_i, floor)
            y = np.concatenate([init.point.lam, init.point.nu_e, init.point.nu_i])
            return SlackIterate(z, s, y, z_lower, z_upper, z_slack)

        z_lower = self.lm.copy()
        z_upper = self.um.copy()
        z_slack = np.ones(self.sp.m_ineq)
        y = np.zeros(self.sp.m)
        if self.sp.m:
            grad = np.concatenate([self.objective.gradient(z), -z_slack])
            grad[:self.nq] += -z_lower + z_upper
            full = self.sp.full_jacobian(z)
            y = np.linalg.lstsq(full.T, -grad, rcond=None)[0]
            if _inf(y) > MULTIPLIER_CAP:
                y = np.zeros(self.sp.m)
        return SlackIterate(z, s, y, z_lower, z_upper, z_slack)

    # -- Newton step ------------------------------------------------------

    def kkt_matrix(self, it: SlackIterate, jac: sp.csr_matrix) -> np.ndarray:
        """Dense symmetric matrix over (dz, ds, dy), unregularized."""
        n, mi, m = self.sp.n, self.sp.m_ineq, self.sp.m
        gl, gu = self.gaps(it.z)
        sigma = np.zeros(n)
        sigma[:self.nq] = self.lm * it.z_lower / gl + self.um * it.z_upper / gu
        kkt = np.zeros((n + mi + m, n + mi + m))
        kkt[:n, :n] = self.sp.hessian(it.z, it.y).toarray() + np.diag(sigma)
        k = np.arange(mi)
        kkt[n + k, n + k] = it.z_slack / it.s
        full = self.sp.full_jacobian(it.z)
        kkt[n + mi:, :n + mi] = full
        kkt[:n + mi, n + mi:] = full.T
        return kkt

    def factor(self, base: np.ndarray) -> Optional[_Factorization]:
        """Inertia-corrected factorization; None when regularization runs out."""
        n_primal = self.sp.n + self.sp.m_ineq
        m = self.sp.m
        diag = np.arange(base.shape[0])

        def attempt(delta_w: float, delta_c: float):
            matrix = base.copy()
            matrix[diag[:n_primal], diag[:n_primal]] += delta_w
            matrix[diag[n_primal:], diag[n_primal:]] -= delta_c
            fact, inertia = _factor(matrix)
            return fact, inertia, inertia == (n_primal, m, 0)

        fact, inertia, ok = attempt(0.0, 0.0)
        if ok:
            return fact
        delta_c = 0.0
        if inertia[2] > 0 or inertia[1] < m:
            delta_c = 1e-8 * self.mu**0.25
            fact, inertia, ok = attempt(0.0, delta_c)
            if ok:
                return fact
        floor = self.options.regularization_floor
        delta_w = floor if self.last_delta_w == 0.0 else max(floor, self.last_delta_w / 3.0)
        while delta_w <= MAX_REGULARIZATION:
            fact, inertia, ok = attempt(delta_w, delta_c)
            if ok:
                self.last_delta_w = delta_w
                logger.log(TRACE, "inertia corrected with delta_w=%.1e delta_c=%.1e", delta_w, delta_c)
                return fact
            if delta_c == 0.0 and inertia[1] < m:
                delta_c = 1e-8 * self.mu**0.25
            delta_w *= 10.0
        return None

    def rhs(self, it: SlackIterate, jac: sp.csr_matrix, c: np.ndarray) -> np.ndarray:
        gl, gu = self.gaps(it.z)
        r_z = self.objective.gradient(it.z) + jac.T @ it.y
        r_z[:self.nq] += self.mu * (-self.lm / gl + self.um / gu)
        r_s = -self.mu / it.s + it.y[self.sp.m_eq:]
        return -np.concatenate([r_z, r_s, c])

    def split(self, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n, mi = self.sp.n, self.sp.m_ineq
        return d[:n], d[n:n + mi], d[n + mi:]

    def bound_steps(self, it: SlackIterate, dz: np.ndarray, ds: np.ndarray):
        gl, gu = self.gaps(it.z)
        dq = dz[:self.nq]
        dzl = self.lm * (self.mu - it.z_lower * gl - it.z_lower * dq) / gl
        dzu = self.um * (self.mu - it.z_upper * gu + it.z_upper * dq) / gu
        dzs = (self.mu - it.z_slack * it.s - it.z_slack * ds) / it.s
        return dzl, dzu, dzs

    def primal_step_max(self, it: SlackIterate, dz: np.ndarray, ds: np.ndarray, tau: float) -> float:
        gl, gu = self.gaps(it.z)
        dq = dz[:self.nq]
        mask_l, mask_u = self.sp.lower_mask, self.sp.upper_mask
        return min(
            _fraction_to_boundary(gl[mask_l], dq[mask_l], tau),
            _fraction_to_boundary(gu[mask_u], -dq[mask_u], tau),
            _fraction_to_boundary(it.s, ds, tau),
        )

    # -- main loop --------------------------------------------------------

    def run(self) -> SolveOutcome:
        options = self.options
        it = self.initial_iterate()
        restoration_failures = 0
        status, message = SolveStatus.MAX_ITER, "iteration limit reached"
        iteration = 0
        for iteration in range(options.max_iter + 1):
            jac = self.sp.jacobian(it.z)
            c = self.sp.residual(it.z, it.s)
            stationarity, feasibility, complementarity = self.errors(it, jac, c, 0.0)
            self.history.append((iteration, stationarity, feasibility, complementarity))
            logger.log(
                TRACE, "iter %3d  mu=%.1e  stat=%.3e  feas=%.3e  comp=%.3e",
                iteration, self.mu, stationarity, feasibility, complementarity,
            )
            if max(stationarity, feasibility, complementarity) <= options.tol_kkt:
                status, message = SolveStatus.OPTIMAL, "converged"
                break
            if iteration == options.max_iter:
                break
            if not (np.isfinite(stationarity) and np.isfinite(feasibility)):
                status, message = SolveStatus.NUMERIC_FAILURE, "non-finite iterate"
                break

            while self.mu > self.mu_min and (
                self.barrier_error(it, jac, c) <= options.barrier_tol_factor * self.mu
            ):
                self.mu = next_barrier(self.mu, options)
            if self.stalled(iteration):
                it = self.recover(it, jac)
                self.last_recovery = iteration
                continue
            tau = max(options.fraction_to_boundary, 1.0 - self.mu)

            base = self.kkt_matrix(it, jac)
            fact = self.factor(base)
            if fact is None:
                status, message = SolveStatus.NUMERIC_FAILURE, "KKT matrix singular after regularization"
                break
            rhs = self.rhs(it, jac, c)
            direction = fact.solve(rhs)
            accepted = self.line_search(it, direction, fact, rhs, c, tau)
            if accepted is not None:
                it = accepted
                restoration_failures = 0
                continue

            outcome = self.restoration(it, c, tau)
            if outcome is None:
                status, message = SolveStatus.INFEASIBLE, "restoration cannot reduce infeasibility"
                break
            it, improved = outcome
            restoration_failures = 0 if improved else restoration_failures + 1
            if restoration_failures >= MAX_RESTORATION_FAILURES:
                status, message = SolveStatus.INFEASIBLE, "restoration stalled"
                break

        point = self.sp.to_original(it)
        objective = self.sp.problem.objective.value(it.z)
        logger.info(
            "interior point %s after %d iterations, objective %.10g",
            status.value, iteration, objective,
        )
        return SolveOutcome(
            status=status,
            point=point,
            iterations=iteration,
            kkt_residual_history=self.history,
            objective=objective,
            message=message,
            barrier=self.mu,
        )

    def line_search(
        self,
        it: SlackIterate,
        direction: np.ndarray,
        fact: _Factorization,
        rhs: np.ndarray,
        c: np.ndarray,
        tau: float,
    ) -> Optional[SlackIterate]:
        dz, ds, dy = self.split(direction)
        gl, gu = self.gaps(it.z)
        grad_z = self.objective.gradient(it.z)
        grad_z[:self.nq] += self.mu * (-self.lm / gl + self.um / gu)
        barrier_slope = float(grad_z @ dz - np.sum(self.mu / it.s * ds))
        c_norm = float(np.sum(np.abs(c)))

        self.nu = max(self.nu, _inf(it.y + dy) + 1.0)
        if c_norm > 0.0 and barrier_slope - self.nu * c_norm > -0.1 * self.nu * c_norm:
            self.nu = max(self.nu, barrier_slope / (0.9 * c_norm))
        slope = min(barrier_slope - self.nu * c_norm, 0.0)
        phi0 = self.merit(it.z, it.s)
        slack_room = 1e-12 * max(1.0, abs(phi0))

        alpha = self.primal_step_max(it, dz, ds, tau)
        first = True
        while alpha >= MIN_STEP:
            z_t, s_t = it.z + alpha * dz, it.s + alpha * ds
            phi_t = self.merit(z_t, s_t)
            if phi_t <= phi0 + ARMIJO_ETA * alpha * slope + slack_room:
                return self.advance(it, direction, alpha, tau)
            if first:
                first = False
                c_trial = self.sp.residual(z_t, s_t)
                if np.sum(np.abs(c_trial)) >= c_norm:
                    soc_rhs = rhs.copy()
                    soc_rhs[self.sp.n + self.sp.m_ineq:] = -(alpha * c + c_trial)
                    soc = fact.solve(soc_rhs)
                    dz_c, ds_c, _ = self.split(soc)
                    alpha_soc = self.primal_step_max(it, dz_c, ds_c, tau)
                    phi_soc = self.merit(it.z + alpha_soc * dz_c, it.s + alpha_soc * ds_c)
                    if phi_soc <= phi0 + ARMIJO_ETA * alpha * slope + slack_room:
                        logger.log(TRACE, "second-order correction accepted")
                        return self.advance(it, soc, alpha_soc, tau)
                if _inf(c) <= np.sqrt(self.options.tol_kkt):
                    trial = self.advance(it, direction, alpha, tau)
                    if self.kkt_error(trial) <= ERROR_REDUCTION * self.kkt_error(it):
                        logger.log(TRACE, "step accepted on barrier error reduction")
                        return trial
            alpha *= 0.5
        if _inf(c) <= np.sqrt(self.options.tol_kkt):
            logger.log(TRACE, "line search failed near feasibility; taking the full step")
            return self.advance(it, direction, self.primal_step_max(it, dz, ds, tau), tau)
        return None

    def advance(self, it: SlackIterate, direction: np.ndarray, alpha: float, tau: float) -> SlackIterate:
        dz, ds, dy = self.split(direction)
        dzl, dzu, dzs = self.bound_steps(it, dz, ds)
        mask_l, mask_u = self.sp.lower_mask, self.sp.upper_mask
        alpha_dual = min(
            _fraction_to_boundary(it.z_lower[mask_l], dzl[mask_l], tau),
            _fraction_to_boundary(it.z_upper[mask_u], dzu[mask_u], tau),
            _fraction_to_boundary(it.z_slack, dzs, tau),
        )
        nxt = SlackIterate(
            z=it.z + alpha * dz,
            s=it.s + alpha * ds,
            y=it.y + alpha * dy,
            z_lower=it.z_lower + alpha_dual * dzl,
            z_upper=it.z_upper + alpha_dual * dzu,
            z_slack=it.z_slack + alpha_dual * dzs,
        )
        self.safeguard(nxt)
        return nxt

    def kkt_error(self, it: SlackIterate) -> float:
        jac = self.sp.jacobian(it.z)
        return self.barrier_error(it, jac, self.sp.residual(it.z, it.s))

    def stalled(self, iteration: int) -> bool:
        """
        Near the solution, the total error has not dropped by 1% over the last
        STALL_WINDOW iterations.
        """
        if iteration - self.last_recovery < STALL_WINDOW or len(self.history) <= STALL_WINDOW:
            return False
        _, _, feasibility, _ = self.history[-1]
        if self.mu > 100.0 * self.options.tol_kkt or feasibility > np.sqrt(self.options.tol_kkt):
            return False
        now = max(self.history[-1][1:])
        before = max(self.history[-1 - STALL_WINDOW][1:])
        return now > STALL_PROGRESS * before

    def recover(self, it: SlackIterate, jac: sp.csr_matrix) -> SlackIterate:
        """
        Re-center the bound duals on mu / gap and refit y by least squares at
        the current primal point. Kept only if the barrier error goes down.
        """
        gl, gu = self.gaps(it.z)
        nxt = it.copy()
        nxt.z_lower = self.lm * self.mu / gl
        nxt.z_upper = self.um * self.mu / gu
        nxt.z_slack = self.mu / it.s
        grad = np.concatenate([self.objective.gradient(it.z), -nxt.z_slack])
        grad[:self.nq] += -nxt.z_lower + nxt.z_upper
        if self.sp.m:
            nxt.y = np.linalg.lstsq(self.sp.full_jacobian(it.z).T, -grad, rcond=None)[0]
        c = self.sp.residual(it.z, it.s)
        before = self.barrier_error(it, jac, c)
        after = self.barrier_error(nxt, jac, c)
        logger.log(TRACE, "stall recovery: barrier error %.3e -> %.3e", before, after)
        self.last_delta_w = 0.0
        if after < before:
            self.nu = _inf(nxt.y) + 1.0
            return nxt
        return it

    def safeguard(self, it: SlackIterate) -> None:
        """Keep every bound multiplier within a factor KAPPA_SIGMA of mu / gap."""
        gl, gu = self.gaps(it.z)
        mu = self.mu
        it.z_lower = self.lm * np.clip(it.z_lower, mu / (KAPPA_SIGMA * gl), KAPPA_SIGMA * mu / gl)
        it.z_upper = self.um * np.clip(it.z_upper, mu / (KAPPA_SIGMA * gu), KAPPA_SIGMA * mu / gu)
        it.z_slack = np.clip(it.z_slack, mu / (KAPPA_SIGMA * it.s), KAPPA_SIGMA * mu / it.s)

    def restoration(self, it: SlackIterate, c: np.ndarray, tau: float):
        """
        Gauss-Newton step on the constraint residual alone.

        Returns None when the linearization cannot reduce the residual, else the
        new iterate and whether the residual went down by 10%.
        """
        full = self.sp.full_jacobian(it.z)
        step = np.linalg.lstsq(full, -c, rcond=None)[0]
        c_norm = float(np.linalg.norm(c))
        if c_norm == 0.0 or np.linalg.norm(full @ step + c) >= 0.9 * c_norm:
            return None
        dz, ds = step[:self.sp.n], step[self.sp.n:]
        alpha = self.primal_step_max(it, dz, ds, tau)
        nxt = it.copy()
        nxt.z = it.z + alpha * dz
        nxt.s = it.s + alpha * ds
        self.safeguard(nxt)
        improved = np.linalg.norm(self.sp.residual(nxt.z, nxt.s)) < 0.9 * c_norm
        logger.log(TRACE, "restoration step alpha=%.2e improved=%s", alpha, improved)
        return nxt, bool(improved)


def _inf(values: np.ndarray) -> float:
    values = np.asarray(values)
    return float(np.max(np.abs(values))) if values.size else 0.0


def solve(problem: NlpProblem, options: Optional[SolverOptions] = None) -> SolveOutcome:
    """
    Solve ``problem`` to a local optimum and return primal and dual variables.

    Non-smooth families are replaced by their C2 variants for the solve; the
    returned point is expressed in the original problem's coordinates.

    Args:
        problem: The problem to solve
        options: Solver options (defaults when None)

    Returns:
        SolveOutcome; failures are reported through its status
    """
    options = options or SolverOptions()
    slacked = to_slack_form(problem.smoothed(options.smoothing))
    return InteriorPointSolver(slacked, options).run()
