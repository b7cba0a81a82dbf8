"""Minimal-deviation safety filters over the admissible twist sets.

Both filters project a reference twist onto the intersection of the
occlusion constraints and the speed ball ``||V|| <= v_max``:

* :func:`solve_filter_qp` for half-space constraints (exact case),
* :func:`solve_filter_qcqp` for quadratic constraints (noisy case).

The ball is handled as one more quadratic constraint, so one barrier
core serves both. When the constraint intersection is empty (or cannot
be entered), the filter returns the hold-in-place twist ``V = 0``: the
platform waits until the obstacle clears.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from . import qcqp
from .barrier import HalfspaceConstraint, QuadraticConstraint
from .errors import CertificationFailed

logger = logging.getLogger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_FALLBACK = "fallback_hold"

# active-set detection and certification tolerances
ACTIVE_SLACK_TOL = 1e-6
CERT_FEAS_TOL = 1e-7
CERT_STAT_TOL = 1e-6
CERT_COMP_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FilterProblem:
    """Reference twist plus the admissible set to project it onto.

    Exactly one of ``halfspaces`` / ``quadratics`` should be non-empty
    per solve; the speed ball applies in both modes.
    """

    v_ref: np.ndarray
    v_max: float
    halfspaces: list[HalfspaceConstraint] = field(default_factory=list)
    quadratics: list[QuadraticConstraint] = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "v_ref", np.asarray(self.v_ref, dtype=float).reshape(6))
        if not self.v_max > 0.0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")


@dataclass(frozen=True, eq=False)
class FilterSolution:
    twist: np.ndarray
    status: str  # STATUS_OPTIMAL or STATUS_FALLBACK
    kkt_residual: float = np.inf
    active_set: tuple[int, ...] = ()  # constraint indices; ball is the last index
    message: str = ""


@dataclass(frozen=True)
class CertificationReport:
    max_violation: float
    stationarity_residual: float
    max_complementarity: float
    duals: np.ndarray


def _core_constraints(problem: FilterProblem) -> list[qcqp.ConstraintData]:
    cons: list[qcqp.ConstraintData] = []
    for hs in problem.halfspaces:
        # row @ V >= rhs  <=>  rhs - row @ V <= 0
        cons.append((None, -np.asarray(hs.row, dtype=float), float(hs.rhs)))
    for qc in problem.quadratics:
        cons.append((np.asarray(qc.a, dtype=float), np.asarray(qc.b, dtype=float), float(qc.c)))
    cons.append((np.eye(6), np.zeros(6), -problem.v_max**2))
    return cons


def _solve(problem: FilterProblem) -> FilterSolution:
    cons = _core_constraints(problem)
    v_ref = problem.v_ref

    # reference already admissible: the projection is the reference itself
    if all(qcqp.constraint_value(con, v_ref) <= 0.0 for con in cons):
        active = tuple(i for i, con in enumerate(cons) if -qcqp.constraint_value(con, v_ref) <= ACTIVE_SLACK_TOL)
        return FilterSolution(twist=v_ref.copy(), status=STATUS_OPTIMAL, kkt_residual=0.0, active_set=active)

    p_mat = 2.0 * np.eye(6)
    q = -2.0 * v_ref
    result = qcqp.solve(p_mat, q, cons, x0=np.zeros(6))
    if result.status == "numerical_breakdown":
        logger.warning("filter solve hit numerical breakdown, holding static: %s", result.message)
        return FilterSolution(twist=np.zeros(6), status=STATUS_FALLBACK, message=result.message)
    if result.status != "optimal":
        return FilterSolution(twist=np.zeros(6), status=STATUS_FALLBACK, message=result.message)

    violation = max(qcqp.constraint_value(con, result.x) for con in cons)
    comp = max(
        float(d) * max(-qcqp.constraint_value(con, result.x), 0.0)
        for d, con in zip(result.duals, cons)
    )
    kkt = max(result.stationarity, max(violation, 0.0), comp)
    active = tuple(i for i, con in enumerate(cons) if -qcqp.constraint_value(con, result.x) <= ACTIVE_SLACK_TOL)
    return FilterSolution(twist=result.x, status=STATUS_OPTIMAL, kkt_residual=kkt, active_set=active)


def solve_filter_qp(problem: FilterProblem) -> FilterSolution:
    """Project the reference twist onto half-spaces plus the speed ball."""
    if problem.quadratics:
        raise ValueError("QP filter expects half-space constraints only")
    return _solve(problem)


def solve_filter_qcqp(problem: FilterProblem) -> FilterSolution:
    """Project the reference twist onto convex quadratics plus the speed ball."""
    if problem.halfspaces:
        raise ValueError("QCQP filter expects quadratic constraints only")
    for i, qc in enumerate(problem.quadratics):
        if np.linalg.eigvalsh(0.5 * (qc.a + qc.a.T))[0] < -1e-10:
            raise ValueError(f"quadratic constraint {i} is not PSD")
    return _solve(problem)


def certify(solution: FilterSolution, problem: FilterProblem) -> CertificationReport:
    """Independently re-check a filter solution against its problem.

    Recomputes constraint slacks, finds best nonnegative multipliers by
    least squares, and checks stationarity and complementary slackness.
    Raises :class:`CertificationFailed` when any tolerance is exceeded;
    hold-static solutions are rejected outright (nothing to certify).
    """
    if solution.status != STATUS_OPTIMAL:
        raise ValueError("only optimal solutions can be certified")
    cons = _core_constraints(problem)
    v = solution.twist

    violation = max(qcqp.constraint_value(con, v) for con in cons)
    if violation > CERT_FEAS_TOL:
        raise CertificationFailed(f"constraint violation {violation:.3e} > {CERT_FEAS_TOL:.0e}")
    speed = float(np.linalg.norm(v))
    if speed > problem.v_max + 1e-9:
        raise CertificationFailed(f"speed {speed} exceeds bound {problem.v_max}")

    grad_obj = 2.0 * (v - problem.v_ref)
    grads = np.column_stack([qcqp.constraint_grad(con, v) for con in cons])
    duals, residual = nnls(grads, -grad_obj)
    scale = 1.0 + float(np.linalg.norm(grad_obj))
    if residual > CERT_STAT_TOL * scale:
        raise CertificationFailed(f"stationarity residual {residual:.3e} > {CERT_STAT_TOL:.0e} * {scale:.3e}")

    comp = max(float(d) * max(-qcqp.constraint_value(con, v), 0.0) for d, con in zip(duals, cons))
    if comp > CERT_COMP_TOL:
        raise CertificationFailed(f"complementarity {comp:.3e} > {CERT_COMP_TOL:.0e}")
    return CertificationReport(
        max_violation=violation,
        stationarity_residual=float(residual),
        max_complementarity=comp,
        duals=duals,
    )
