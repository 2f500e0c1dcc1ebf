"""
Block-structured representation of the commodity-market optimization problem.

A problem has three blocks of primal variables: traded quantities ``q``,
exposed net inflows ``x`` (one per market participant) and dependent system
variables ``y``. Constraints come in five families: nomination bounds on ``q``
(lower and upper), the conservation law ``x - M q + d = 0``, system equalities
``H(x, y) = 0`` and system inequalities ``G(x, y) <= 0``.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

DEFAULT_TOL_FEAS = 1e-8
TRACE = 5


class StructuralError(ValueError):
    """Raised when dimensions or structure of a problem or point do not match."""


class NumericDomainError(ArithmeticError):
    """Raised when an evaluator produces a non-finite value."""


class FamilyKind(Enum):
    NOMINATION_LOWER = "nomination_lower"
    NOMINATION_UPPER = "nomination_upper"
    CONSERVATION = "conservation"
    SYSTEM_EQUALITY = "system_equality"
    SYSTEM_INEQUALITY = "system_inequality"

    @property
    def is_inequality(self) -> bool:
        return self in (
            FamilyKind.NOMINATION_LOWER,
            FamilyKind.NOMINATION_UPPER,
            FamilyKind.SYSTEM_INEQUALITY,
        )


Evaluator = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray], sp.csr_matrix]
HessianFn = Callable[[np.ndarray, np.ndarray], sp.csr_matrix]


@dataclass(frozen=True)
class VariableLayout:
    """Sizes and offsets of the q, x and y blocks in a flat primal vector."""

    n_traded: int
    n_exposed: int
    n_dependent: int

    def __post_init__(self):
        for name in ("n_traded", "n_exposed", "n_dependent"):
            if getattr(self, name) < 0:
                raise StructuralError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.n_traded + self.n_exposed + self.n_dependent

    @property
    def q(self) -> slice:
        return slice(0, self.n_traded)

    @property
    def x(self) -> slice:
        return slice(self.n_traded, self.n_traded + self.n_exposed)

    @property
    def y(self) -> slice:
        return slice(self.n_traded + self.n_exposed, self.total)

    @property
    def system(self) -> slice:
        """The (x, y) part of the primal vector."""
        return slice(self.n_traded, self.total)

    def split(self, primal: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return primal[self.q], primal[self.x], primal[self.y]

    def check(self, primal: np.ndarray) -> np.ndarray:
        primal = np.asarray(primal, dtype=float)
        if primal.ndim != 1 or primal.shape[0] != self.total:
            raise StructuralError(
                f"primal vector has shape {primal.shape}, expected ({self.total},)"
            )
        return primal


def _zero_hessian(n: int) -> HessianFn:
    def hessian(primal: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((n, n))

    return hessian


@dataclass(frozen=True)
class ConstraintFamily:
    """
    A named group of constraint rows sharing one kind.

    ``jacobian`` returns a sparse matrix over the full primal vector with a
    sparsity pattern that does not depend on the evaluation point. ``hessian``
    returns the weighted sum of row Hessians. Inequality residuals are satisfied
    when ``<= 0``.
    """

    name: str
    kind: FamilyKind
    count: int
    evaluator: Evaluator
    jacobian: JacobianFn
    hessian: HessianFn
    labels: Tuple[str, ...] = ()
    linear: bool = False
    smoothing: Optional[Callable[[float], "ConstraintFamily"]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        if self.labels and len(self.labels) != self.count:
            raise StructuralError(
                f"family {self.name}: {len(self.labels)} labels for {self.count} rows"
            )

    def smoothed(self, epsilon: float) -> "ConstraintFamily":
        """Return the C2 variant used inside the solver, or self if already smooth."""
        if self.smoothing is None or epsilon <= 0.0:
            return self
        return self.smoothing(epsilon)


def linear_family(
    name: str,
    kind: FamilyKind,
    matrix: sp.spmatrix,
    offset: np.ndarray,
    labels: Sequence[str] = (),
) -> ConstraintFamily:
    """Build a family with residual ``matrix @ primal + offset``."""
    matrix = sp.csr_matrix(matrix)
    offset = np.asarray(offset, dtype=float)
    n = matrix.shape[1]
    if offset.shape != (matrix.shape[0],):
        raise StructuralError(f"family {name}: offset does not match row count")

    def evaluator(primal: np.ndarray) -> np.ndarray:
        return matrix @ primal + offset

    def jacobian(primal: np.ndarray) -> sp.csr_matrix:
        return matrix.copy()

    return ConstraintFamily(
        name=name,
        kind=kind,
        count=matrix.shape[0],
        evaluator=evaluator,
        jacobian=jacobian,
        hessian=_zero_hessian(n),
        labels=tuple(labels),
        linear=True,
    )


@dataclass(frozen=True)
class QuadraticObjective:
    """Separable cost ``constant + linear @ p + 0.5 * sum(quadratic * p**2)``."""

    linear: np.ndarray
    quadratic: np.ndarray
    constant: float = 0.0

    def value(self, primal: np.ndarray) -> float:
        return float(
            self.constant + self.linear @ primal + 0.5 * np.sum(self.quadratic * primal**2)
        )

    def gradient(self, primal: np.ndarray) -> np.ndarray:
        return self.linear + self.quadratic * primal

    def hessian(self) -> sp.csr_matrix:
        return sp.diags(self.quadratic, format="csr")


@dataclass(frozen=True)
class NlpProblem:
    """
    The full optimization problem: minimize the objective subject to nomination
    bounds, conservation and the system families.

    Attributes:
        layout: Block sizes
        system_families: SystemEquality and SystemInequality families in order
        objective: Cost over the primal vector (reads q and designated y entries)
        fixed_outflow: d, one entry per exposed variable
        lower, upper: Nomination bounds on q
        supply_map: M, maps q onto exposed variables (identity by default)
        formulation: Tag of the concrete system ("dc", "ogf", "ac") or None
        blocks: Named index arrays into the primal vector
        topology: Named integer arrays / matrices describing the network
        initial_primal: Physically neutral starting point
        labels: Primal variable names
        case: The case the problem was built from
    """

    layout: VariableLayout
    system_families: Tuple[ConstraintFamily, ...]
    objective: QuadraticObjective
    fixed_outflow: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    supply_map: Optional[sp.csr_matrix] = None
    formulation: Optional[str] = None
    blocks: Mapping[str, np.ndarray] = field(default_factory=dict)
    topology: Mapping[str, Any] = field(default_factory=dict, repr=False)
    initial_primal: Optional[np.ndarray] = field(default=None, repr=False)
    labels: Tuple[str, ...] = ()
    case: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        layout = self.layout
        d = np.asarray(self.fixed_outflow, dtype=float)
        if d.shape != (layout.n_exposed,):
            raise StructuralError(
                f"fixed outflow has {d.size} entries, expected {layout.n_exposed}"
            )
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.shape != (layout.n_traded,) or up.shape != (layout.n_traded,):
            raise StructuralError("nomination bounds must have one entry per traded variable")
        if np.any(lo > up):
            bad = int(np.argmax(lo > up))
            raise StructuralError(f"nomination bound {bad}: lower {lo[bad]} > upper {up[bad]}")
        supply = self.supply_map
        if supply is None:
            if layout.n_traded != layout.n_exposed:
                raise StructuralError("a supply map is required when n_traded != n_exposed")
            supply = sp.identity(layout.n_exposed, format="csr")
        supply = sp.csr_matrix(supply)
        if supply.shape != (layout.n_exposed, layout.n_traded):
            raise StructuralError(f"supply map has shape {supply.shape}")
        for family in self.system_families:
            if family.kind not in (FamilyKind.SYSTEM_EQUALITY, FamilyKind.SYSTEM_INEQUALITY):
                raise StructuralError(f"family {family.name} is not a system family")
        if self.objective.linear.shape != (layout.total,):
            raise StructuralError("objective gradient does not match the layout")
        if self.labels and len(self.labels) != layout.total:
            raise StructuralError("one label per primal variable is required")
        object.__setattr__(self, "fixed_outflow", d)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "supply_map", supply)
        object.__setattr__(self, "system_families", tuple(self.system_families))

    @property
    def families(self) -> List[ConstraintFamily]:
        """All five kinds in canonical order: bounds, conservation, H, G."""
        return [
            self._nomination_family(upper=False),
            self._nomination_family(upper=True),
            self._conservation_family(),
            *self.equality_families,
            *self.inequality_families,
        ]

    @property
    def equality_families(self) -> List[ConstraintFamily]:
        return [f for f in self.system_families if f.kind is FamilyKind.SYSTEM_EQUALITY]

    @property
    def inequality_families(self) -> List[ConstraintFamily]:
        return [f for f in self.system_families if f.kind is FamilyKind.SYSTEM_INEQUALITY]

    @property
    def n_equality(self) -> int:
        return sum(f.count for f in self.equality_families)

    @property
    def n_inequality(self) -> int:
        return sum(f.count for f in self.inequality_families)

    def _nomination_family(self, upper: bool) -> ConstraintFamily:
        n, nq = self.layout.total, self.layout.n_traded
        select = sp.csr_matrix(
            (np.ones(nq), (np.arange(nq), np.arange(nq))), shape=(nq, n)
        )
        if upper:
            return linear_family("nomination_upper", FamilyKind.NOMINATION_UPPER, select, -self.upper)
        return linear_family("nomination_lower", FamilyKind.NOMINATION_LOWER, -select, self.lower)

    def _conservation_family(self) -> ConstraintFamily:
        layout = self.layout
        nx = layout.n_exposed
        supply = self.supply_map.tocoo()
        rows = np.concatenate([supply.row, np.arange(nx)])
        cols = np.concatenate([supply.col, layout.x.start + np.arange(nx)])
        data = np.concatenate([-supply.data, np.ones(nx)])
        matrix = sp.csr_matrix((data, (rows, cols)), shape=(nx, layout.total))
        return linear_family("conservation", FamilyKind.CONSERVATION, matrix, self.fixed_outflow)

    def smoothed(self, epsilon: float) -> "NlpProblem":
        """Copy with every non-smooth family replaced by its C2 variant."""
        families = tuple(f.smoothed(epsilon) for f in self.system_families)
        return replace(self, system_families=families)

    def default_primal(self) -> np.ndarray:
        """Initial point: builder supplied, else q at bound midpoints and x = M q - d."""
        if self.initial_primal is not None:
            return np.array(self.initial_primal, dtype=float)
        primal = np.zeros(self.layout.total)
        q = 0.5 * (self.lower + self.upper)
        primal[self.layout.q] = q
        primal[self.layout.x] = self.supply_map @ q - self.fixed_outflow
        return primal


@dataclass(frozen=True)
class PrimalDualPoint:
    """Primal values and the duals of every constraint family."""

    primal: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    lam: np.ndarray
    nu_e: np.ndarray
    nu_i: np.ndarray

    @classmethod
    def zeros(cls, problem: NlpProblem, primal: Optional[np.ndarray] = None) -> "PrimalDualPoint":
        layout = problem.layout
        return cls(
            primal=np.zeros(layout.total) if primal is None else np.asarray(primal, dtype=float),
            mu_lower=np.zeros(layout.n_traded),
            mu_upper=np.zeros(layout.n_traded),
            lam=np.zeros(layout.n_exposed),
            nu_e=np.zeros(problem.n_equality),
            nu_i=np.zeros(problem.n_inequality),
        )

    def check(self, problem: NlpProblem) -> None:
        layout = problem.layout
        expected = {
            "primal": layout.total,
            "mu_lower": layout.n_traded,
            "mu_upper": layout.n_traded,
            "lam": layout.n_exposed,
            "nu_e": problem.n_equality,
            "nu_i": problem.n_inequality,
        }
        for name, size in expected.items():
            value = np.asarray(getattr(self, name))
            if value.shape != (size,):
                raise StructuralError(f"{name} has shape {value.shape}, expected ({size},)")

    def family_weights(self, problem: NlpProblem) -> List[np.ndarray]:
        """Duals split in the order of ``problem.families``."""
        weights = [self.mu_lower, self.mu_upper, self.lam]
        weights += _split(self.nu_e, problem.equality_families)
        weights += _split(self.nu_i, problem.inequality_families)
        return weights

    def is_dual_feasible(self) -> bool:
        return bool(
            np.all(self.mu_lower >= 0) and np.all(self.mu_upper >= 0) and np.all(self.nu_i >= 0)
        )


def _split(values: np.ndarray, families: Sequence[ConstraintFamily]) -> List[np.ndarray]:
    parts, start = [], 0
    for family in families:
        parts.append(values[start:start + family.count])
        start += family.count
    return parts


@dataclass(frozen=True)
class ConstraintValues:
    """Residuals of every family at one primal point."""

    residuals: Dict[str, np.ndarray]
    by_kind: Dict[FamilyKind, np.ndarray]
    objective: float
    max_violation: float
    feasible: bool


def _finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericDomainError(f"{what} produced a non-finite value")
    return values


def violation(kind: FamilyKind, residual: np.ndarray) -> float:
    if residual.size == 0:
        return 0.0
    if kind.is_inequality:
        return float(max(0.0, np.max(residual)))
    return float(np.max(np.abs(residual)))


def evaluate(
    problem: NlpProblem, primal: np.ndarray, tol_feas: float = DEFAULT_TOL_FEAS
) -> ConstraintValues:
    """
    Evaluate all families and the objective at ``primal``.

    Args:
        problem: The problem
        primal: Flat (q, x, y) vector
        tol_feas: Feasibility tolerance on equality inf-norms and inequality maxima

    Returns:
        ConstraintValues with per-family and per-kind residuals
    """
    primal = problem.layout.check(primal)
    residuals: Dict[str, np.ndarray] = {}
    grouped: Dict[FamilyKind, List[np.ndarray]] = {kind: [] for kind in FamilyKind}
    worst = 0.0
    for family in problem.families:
        value = _finite(np.asarray(family.evaluator(primal), dtype=float), f"family {family.name}")
        residuals[family.name] = value
        grouped[family.kind].append(value)
        worst = max(worst, violation(family.kind, value))
    by_kind = {
        kind: np.concatenate(parts) if parts else np.zeros(0) for kind, parts in grouped.items()
    }
    objective = problem.objective.value(primal)
    if not np.isfinite(objective):
        raise NumericDomainError("objective produced a non-finite value")
    return ConstraintValues(
        residuals=residuals,
        by_kind=by_kind,
        objective=objective,
        max_violation=worst,
        feasible=worst <= tol_feas,
    )


def system_violation(problem: NlpProblem, primal: np.ndarray) -> float:
    """Inf-norm violation over the system set S only (H and G rows)."""
    primal = problem.layout.check(primal)
    worst = 0.0
    for family in problem.system_families:
        value = _finite(np.asarray(family.evaluator(primal), dtype=float), f"family {family.name}")
        worst = max(worst, violation(family.kind, value))
    return worst


def stacked_jacobian(
    problem: NlpProblem, primal: np.ndarray, families: Sequence[ConstraintFamily]
) -> sp.csr_matrix:
    n = problem.layout.total
    if not families:
        return sp.csr_matrix((0, n))
    blocks = []
    for family in families:
        if family.count == 0:
            continue
        jac = sp.csr_matrix(family.jacobian(primal))
        if jac.shape != (family.count, n):
            raise StructuralError(f"family {family.name}: Jacobian has shape {jac.shape}")
        _finite(jac.data, f"Jacobian of family {family.name}")
        blocks.append(jac)
    if not blocks:
        return sp.csr_matrix((0, n))
    return sp.vstack(blocks, format="csr")


def stacked_residual(
    primal: np.ndarray, families: Sequence[ConstraintFamily]
) -> np.ndarray:
    if not families:
        return np.zeros(0)
    return np.concatenate(
        [_finite(np.asarray(f.evaluator(primal), dtype=float), f"family {f.name}") for f in families]
    )


def lagrangian_gradient(
    problem: NlpProblem, point: PrimalDualPoint
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Block gradients of the Lagrangian
    ``c + mu_lo'(q_lo - q) + mu_up'(q - q_up) + lam'(x - M q + d) + nu_i'G + nu_e'H``.

    Objective entries in y (compression cost) are carried into the y block.

    Returns:
        (grad_q, grad_x, grad_y)
    """
    point.check(problem)
    primal = point.primal
    grad = problem.objective.gradient(primal).astype(float)
    for family, weights in zip(problem.families, point.family_weights(problem)):
        if family.count == 0:
            continue
        jac = sp.csr_matrix(family.jacobian(primal))
        _finite(jac.data, f"Jacobian of family {family.name}")
        grad = grad + jac.T @ weights
    return problem.layout.split(grad)


def lagrangian_hessian(
    problem: NlpProblem, primal: np.ndarray, weights: Sequence[np.ndarray]
) -> sp.csr_matrix:
    """Objective Hessian plus weighted constraint Hessians, weights in ``families`` order."""
    n = problem.layout.total
    hess = problem.objective.hessian()
    for family, w in zip(problem.families, weights):
        if family.linear or family.count == 0:
            continue
        block = sp.csr_matrix(family.hessian(primal, np.asarray(w, dtype=float)))
        if block.shape != (n, n):
            raise StructuralError(f"family {family.name}: Hessian has shape {block.shape}")
        hess = hess + block
    return sp.csr_matrix(hess)
