"""
Revenue adequacy audit of a solved point.

Everything is recomputed from the problem definition: Lagrangian block
gradients, constraint residuals, a constraint-qualification certificate
(equality Jacobian singular values plus a strictly feasible direction LP),
revenue R = -lambda'x with its per-edge decomposition, and the scaling-path
check of star_verify. The verdict follows a fixed precedence.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from scipy.optimize import linprog

from model_core import (
    FamilyKind,
    NlpProblem,
    PrimalDualPoint,
    evaluate,
    lagrangian_gradient,
    stacked_jacobian,
)
from star_verify import (
    ScalingPath,
    StarOptions,
    STAR_CONSTRUCTIONS,
    common_pressure_scaled,
    scaling_direction,
    verify_star,
)

logger = logging.getLogger(__name__)


class Verdict(Enum):
    CONSISTENT = "Theorem-1 consistent"
    FAILED = "failed"
    INCONCLUSIVE = "inconclusive"
    HYPOTHESIS_UNMET = "hypothesis not satisfied; adequacy not certified"
    INADEQUATE = "revenue inadequate"


@dataclass(frozen=True)
class AuditOptions:
    tol_kkt: float = 1e-6
    active_tol: float = 1e-6
    rank_tol: float = 1e-8
    direction_tol: float = 1e-8
    revenue_rel_tol: float = 1e-6
    chain_tol: float = 1e-6
    check_star: bool = True
    star: StarOptions = field(default_factory=StarOptions)


@dataclass(frozen=True)
class KktReport:
    stationarity_q: float
    stationarity_x: float
    stationarity_y: float
    primal_feasibility: float
    complementarity: float
    dual_sign_violation: float
    tolerance: float
    passed: bool

    @property
    def stationarity(self) -> float:
        return max(self.stationarity_q, self.stationarity_x, self.stationarity_y)

    def failures(self) -> List[str]:
        checks = [
            ("stationarity", self.stationarity),
            ("primal feasibility", self.primal_feasibility),
            ("complementarity", self.complementarity),
            ("dual sign", self.dual_sign_violation),
        ]
        return [name for name, value in checks if not value <= self.tolerance]


@dataclass(frozen=True)
class MfcqCertificate:
    """``holds`` is None when the direction LP could not be solved."""

    equality_rank: int
    equality_rows: int
    min_singular_value: float
    max_singular_value: float
    margin: float
    direction: np.ndarray = field(repr=False)
    active_rows: List[str]
    holds: Optional[bool]
    rank_ok: bool = True
    message: str = ""


@dataclass(frozen=True)
class RevenueReport:
    revenue: float
    revenue_from_nominations: float
    prices: np.ndarray = field(repr=False)
    net_inflow: np.ndarray = field(repr=False)
    edge_rent: np.ndarray = field(repr=False)
    edge_flow: np.ndarray = field(repr=False)
    family_terms: Dict[str, float]
    tolerance: float
    adequate: bool
    formulas_agree: Optional[bool]
    quantity_scale: float = 1.0

    @property
    def revenue_physical(self) -> float:
        return self.revenue * self.quantity_scale


@dataclass(frozen=True)
class ProofChain:
    """
    Revenue rebuilt along the scaling direction delta:
    R = -nu_i'(J_G delta) - grad_y c' delta_y at a KKT point where J_H delta = 0.
    """

    tangency_residual: float
    step_quantity: float
    family_terms: Dict[str, float]
    objective_term: float
    chain_revenue: float
    identity_gap: float
    holds: bool


@dataclass(frozen=True)
class AuditReport:
    kkt: KktReport
    mfcq: MfcqCertificate
    revenue: RevenueReport
    star: Optional[ScalingPath]
    proof: Optional[ProofChain]
    verdict: Verdict
    reasons: List[str]
    objective: float

    @property
    def consistent(self) -> bool:
        return self.verdict is Verdict.CONSISTENT


def _inf(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values))) if values.size else 0.0


def kkt_residuals(problem: NlpProblem, point: PrimalDualPoint, tol: float = 1e-6) -> KktReport:
    """
    Stationarity per block, primal feasibility, complementarity and dual signs.

    Fixed nominations (lower == upper) carry one free multiplier, the
    difference of the two bound duals, so their bound duals are not sign checked.
    """
    point.check(problem)
    grad_q, grad_x, grad_y = lagrangian_gradient(problem, point)
    values = evaluate(problem, point.primal)
    q = point.primal[problem.layout.q]
    g = values.by_kind[FamilyKind.SYSTEM_INEQUALITY]
    complementarity = max(
        _inf(point.mu_lower * (problem.lower - q)),
        _inf(point.mu_upper * (q - problem.upper)),
        _inf(point.nu_i * g),
    )
    free = problem.lower == problem.upper
    signed = np.concatenate([point.mu_lower[~free], point.mu_upper[~free], point.nu_i])
    sign_violation = float(max(0.0, -signed.min())) if signed.size else 0.0
    fields = dict(
        stationarity_q=_inf(grad_q),
        stationarity_x=_inf(grad_x),
        stationarity_y=_inf(grad_y),
        primal_feasibility=values.max_violation,
        complementarity=complementarity,
        dual_sign_violation=sign_violation,
        tolerance=tol,
    )
    draft = KktReport(passed=False, **fields)
    return KktReport(passed=not draft.failures(), **fields)


def mfcq_certificate(
    problem: NlpProblem,
    point: PrimalDualPoint,
    active_tol: float = 1e-6,
    rank_tol: float = 1e-8,
    direction_tol: float = 1e-8,
) -> MfcqCertificate:
    """
    Check independence of the equality gradients over (x, y) and look for a
    direction strictly decreasing every active inequality while tangent to the
    equalities: max t s.t. grad g_i' d + t <= 0 (active i), J_H d = 0,
    |d|_inf <= 1, t <= 1.
    """
    primal = problem.layout.check(point.primal)
    system = problem.layout.system
    n_sys = system.stop - system.start
    j_h = stacked_jacobian(problem, primal, problem.equality_families)[:, system].toarray()
    if j_h.shape[0]:
        singular = np.linalg.svd(j_h, compute_uv=False)
        s_max = float(singular.max()) if singular.size else 0.0
        s_min = float(singular.min()) if j_h.shape[0] <= n_sys else 0.0
        rank = int(np.sum(singular > rank_tol * s_max)) if s_max > 0 else 0
    else:
        s_min = s_max = 0.0
        rank = 0

    active_rows: List[str] = []
    active_grads = []
    for family in problem.inequality_families:
        residual = family.evaluator(primal)
        active = np.flatnonzero(residual >= -active_tol)
        if active.size == 0:
            continue
        jac = family.jacobian(primal)[:, system].toarray()
        active_grads.append(jac[active])
        for row in active:
            active_rows.append(family.labels[row] if family.labels else f"{family.name}[{row}]")
    j_a = np.vstack(active_grads) if active_grads else np.zeros((0, n_sys))

    cost = np.zeros(n_sys + 1)
    cost[-1] = -1.0
    a_ub = np.hstack([j_a, np.ones((j_a.shape[0], 1))]) if j_a.shape[0] else None
    b_ub = np.zeros(j_a.shape[0]) if j_a.shape[0] else None
    a_eq = np.hstack([j_h, np.zeros((j_h.shape[0], 1))]) if j_h.shape[0] else None
    b_eq = np.zeros(j_h.shape[0]) if j_h.shape[0] else None
    bounds = [(-1.0, 1.0)] * n_sys + [(None, 1.0)]
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")

    rank_ok = j_h.shape[0] == 0 or (j_h.shape[0] <= n_sys and s_min >= rank_tol * s_max)
    if result.status != 0:
        logger.warning("MFCQ direction LP failed: %s", result.message)
        return MfcqCertificate(
            equality_rank=rank,
            equality_rows=j_h.shape[0],
            min_singular_value=s_min,
            max_singular_value=s_max,
            margin=float("nan"),
            direction=np.zeros(n_sys),
            active_rows=active_rows,
            holds=None,
            rank_ok=rank_ok,
            message=f"direction LP failed: {result.message}",
        )
    margin = float(result.x[-1])
    holds = bool(rank_ok and margin > direction_tol)
    message = "" if holds else (
        "equality gradients dependent" if not rank_ok else "no strictly feasible direction"
    )
    return MfcqCertificate(
        equality_rank=rank,
        equality_rows=j_h.shape[0],
        min_singular_value=s_min,
        max_singular_value=s_max,
        margin=margin,
        direction=np.asarray(result.x[:-1]),
        active_rows=active_rows,
        holds=holds,
        rank_ok=rank_ok,
        message=message,
    )


def edge_flows(problem: NlpProblem, primal: np.ndarray) -> np.ndarray:
    flows = problem.topology.get("edge_flows")
    if not flows:
        return np.zeros(0)
    return primal[np.concatenate(flows)]


def edge_rents(problem: NlpProblem, point: PrimalDualPoint) -> np.ndarray:
    """(lambda_to - lambda_from) * flow per directed flow variable."""
    incidence = problem.topology.get("incidence")
    if incidence is None or not problem.topology.get("edge_flows"):
        return np.zeros(0)
    return (incidence.T @ (-point.lam)) * edge_flows(problem, point.primal)


def revenue(problem: NlpProblem, point: PrimalDualPoint, rel_tol: float = 1e-6) -> RevenueReport:
    """
    R = -lambda'x, cross-checked against lambda'(d - M q).

    The two agree whenever conservation holds; they are compared only when the
    conservation residual is at most 1e-10. ``family_terms`` holds
    nu_k'(grad_x F_k) x per system family; at a stationary point they sum to R.
    """
    point.check(problem)
    layout = problem.layout
    q, x, _ = layout.split(point.primal)
    lam = point.lam
    r = float(-lam @ x)
    r_alt = float(lam @ (problem.fixed_outflow - problem.supply_map @ q))
    conservation = x - problem.supply_map @ q + problem.fixed_outflow
    agree = None
    if _inf(conservation) <= 1e-10:
        agree = abs(r - r_alt) <= 1e-10 * (1.0 + np.sum(np.abs(lam)) + abs(r))

    terms: Dict[str, float] = {}
    weights = point.family_weights(problem)[3:]
    families = problem.equality_families + problem.inequality_families
    for family, w in zip(families, weights):
        jac_x = family.jacobian(point.primal)[:, layout.x]
        terms[family.name] = float(w @ (jac_x @ x))

    tol = rel_tol * (1.0 + np.linalg.norm(lam) * np.linalg.norm(x))
    return RevenueReport(
        revenue=r,
        revenue_from_nominations=r_alt,
        prices=lam.copy(),
        net_inflow=x.copy(),
        edge_rent=edge_rents(problem, point),
        edge_flow=edge_flows(problem, point.primal),
        family_terms=terms,
        tolerance=float(tol),
        adequate=r >= -tol,
        formulas_agree=agree,
        quantity_scale=float(problem.topology.get("quantity_scale", 1.0)),
    )


def proof_chain(
    problem: NlpProblem,
    point: PrimalDualPoint,
    pi_c: Optional[float] = None,
    tol: float = 1e-6,
) -> ProofChain:
    """Evaluate the revenue identity along the formulation's scaling direction."""
    primal = point.primal
    delta = scaling_direction(problem, primal, pi_c)
    j_h = stacked_jacobian(problem, primal, problem.equality_families)
    tangency = _inf(j_h @ delta)

    terms: Dict[str, float] = {}
    start = 0
    for family in problem.inequality_families:
        nu = point.nu_i[start:start + family.count]
        start += family.count
        terms[family.name] = float(-nu @ (family.jacobian(primal) @ delta))
    step = float(sum(terms.values()))
    objective_term = float(problem.objective.gradient(primal) @ delta)
    chain = step - objective_term
    r = float(-point.lam @ primal[problem.layout.x])
    return ProofChain(
        tangency_residual=tangency,
        step_quantity=step,
        family_terms=terms,
        objective_term=objective_term,
        chain_revenue=chain,
        identity_gap=abs(r - chain),
        holds=step >= -tol,
    )


def adequacy_audit(
    problem: NlpProblem,
    point: PrimalDualPoint,
    options: Optional[AuditOptions] = None,
    solver_status: Optional[str] = None,
) -> AuditReport:
    """
    Run every check and settle the verdict.

    Precedence: KKT failure gives "failed"; a solver status other than
    "optimal" or any inconclusive check gives "inconclusive"; MFCQ failure or
    an unmet star hypothesis gives "hypothesis not satisfied"; a negative step
    quantity along the scaling direction gives "inconclusive"; negative revenue
    beyond tolerance gives "revenue inadequate"; otherwise the point is
    consistent. ``solver_status`` is the status value of the solve that
    produced ``point``; None skips that check.
    """
    options = options or AuditOptions()
    kkt = kkt_residuals(problem, point, options.tol_kkt)
    mfcq = mfcq_certificate(
        problem, point, options.active_tol, options.rank_tol, options.direction_tol
    )
    rev = revenue(problem, point, options.revenue_rel_tol)

    star: Optional[ScalingPath] = None
    proof: Optional[ProofChain] = None
    if options.check_star and problem.formulation in STAR_CONSTRUCTIONS:
        star = verify_star(problem, point.primal, options=options.star)
        if star.hypothesis_met:
            pi_c = common_pressure_scaled(problem) if problem.formulation == "ogf" else None
            proof = proof_chain(problem, point, pi_c, options.chain_tol)

    reasons: List[str] = []
    if not kkt.passed:
        verdict = Verdict.FAILED
        reasons = kkt.failures()
    elif solver_status is not None and solver_status != "optimal":
        verdict = Verdict.INCONCLUSIVE
        reasons = [f"solver stopped with status {solver_status}"]
    elif mfcq.holds is None:
        verdict = Verdict.INCONCLUSIVE
        reasons = [mfcq.message]
    elif not mfcq.holds or (star is not None and not star.hypothesis_met):
        verdict = Verdict.HYPOTHESIS_UNMET
        if not mfcq.holds:
            reasons.append(f"MFCQ: {mfcq.message}")
        if star is not None and not star.hypothesis_met:
            reasons.append(f"{star.mode.value.upper()} hypothesis unmet: {star.reason}")
    elif proof is not None and not proof.holds:
        verdict = Verdict.INCONCLUSIVE
        reasons = [f"step quantity {proof.step_quantity:.6g} negative"]
    elif not rev.adequate:
        verdict = Verdict.INADEQUATE
        reasons = [f"R={rev.revenue:.6g} below -{rev.tolerance:.1e}"]
    else:
        verdict = Verdict.CONSISTENT

    logger.info("audit verdict: %s %s", verdict.value, "; ".join(reasons))
    return AuditReport(
        kkt=kkt,
        mfcq=mfcq,
        revenue=rev,
        star=star,
        proof=proof,
        verdict=verdict,
        reasons=reasons,
        objective=problem.objective.value(point.primal),
    )
