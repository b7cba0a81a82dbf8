"""Dense primal log-barrier solver for small convex QCQPs.

Solves ``min 0.5 x'Px + q'x`` subject to quadratic inequalities
``x'A_i x + b_i'x + c_i <= 0`` with P PSD and every A_i PSD (A_i may be
None for a purely linear constraint). Problems in this package have at
most a few dozen variables and a handful of constraints, so everything
is dense and direct.

Pipeline: optional phase-I (finds a strictly feasible point or certifies
infeasibility by bounding the minimal constraint violation), outer
barrier loop with Newton inner iterations, then an active-set polish
that re-solves the KKT system of the identified active constraints to
tighten the result to near machine precision. The polish is best-effort;
when it fails the barrier iterate is returned with its honest residual.

Every call site must include at least one constraint with bounded
sublevel sets (a norm ball); phase-I relies on this to stay bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalBreakdown

# constraint: (A or None, b, c) meaning x'Ax + b'x + c <= 0
ConstraintData = tuple[np.ndarray | None, np.ndarray, float]

BARRIER_T0 = 1.0
BARRIER_MU = 20.0
NEWTON_TOL = 1e-10
MAX_OUTER = 50
MAX_NEWTON = 60
TARGET_GAP_PER_CONSTRAINT = 1e-9
PHASE1_INTERIOR_MARGIN = 1e-8
REGULARIZATION = 1e-10


@dataclass
class CoreResult:
    x: np.ndarray
    status: str  # optimal | infeasible | numerical_breakdown
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gap: float = np.inf
    stationarity: float = np.inf
    polished: bool = False
    message: str = ""


class _ConstraintSet:
    """Stacked view of the constraint list for vectorized evaluation."""

    def __init__(self, constraints: list[ConstraintData], n: int):
        self.m = len(constraints)
        self.n = n
        self.lin = np.zeros((self.m, n))
        self.const = np.zeros(self.m)
        quad_idx, quad_mats = [], []
        for i, (a, b, c) in enumerate(constraints):
            self.lin[i] = np.asarray(b, dtype=float)
            self.const[i] = float(c)
            if a is not None:
                quad_idx.append(i)
                quad_mats.append(np.asarray(a, dtype=float))
        self.quad_idx = np.array(quad_idx, dtype=int)
        self.quad = np.stack(quad_mats) if quad_mats else np.zeros((0, n, n))

    def values(self, x: np.ndarray) -> np.ndarray:
        vals = self.lin @ x + self.const
        if self.quad_idx.size:
            vals[self.quad_idx] += (self.quad @ x) @ x
        return vals

    def grads(self, x: np.ndarray) -> np.ndarray:
        g = self.lin.copy()
        if self.quad_idx.size:
            g[self.quad_idx] += 2.0 * (self.quad @ x)
        return g


def constraint_value(con: ConstraintData, x: np.ndarray) -> float:
    a, b, c = con
    val = float(b @ x) + c
    if a is not None:
        val += float(x @ a @ x)
    return val


def constraint_grad(con: ConstraintData, x: np.ndarray) -> np.ndarray:
    a, b, _ = con
    if a is None:
        return np.asarray(b, dtype=float).copy()
    return 2.0 * (a @ x) + np.asarray(b, dtype=float)


def _solve_spd(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with one regularized retry."""
    try:
        return cho_solve(cho_factor(h, check_finite=False), rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    try:
        return cho_solve(
            cho_factor(h + REGULARIZATION * np.eye(h.shape[0]), check_finite=False),
            rhs,
            check_finite=False,
        )
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown(f"factorization failed twice: {exc}") from exc


def _barrier_newton(
    t: float,
    x: np.ndarray,
    p_mat: np.ndarray,
    q: np.ndarray,
    cons: _ConstraintSet,
) -> np.ndarray:
    """Minimize t*(0.5 x'Px + q'x) - sum log(-g_i(x)) from a strictly feasible x."""

    def value(xx):
        vals = cons.values(xx)
        if vals.max() >= 0.0:
            return np.inf
        return t * (0.5 * float(xx @ p_mat @ xx) + float(q @ xx)) - float(np.log(-vals).sum())

    for _ in range(MAX_NEWTON):
        vals = cons.values(x)
        grads = cons.grads(x)
        inv_slack = 1.0 / (-vals)
        grad = t * (p_mat @ x + q) + grads.T @ inv_slack
        hess = t * p_mat + (grads.T * inv_slack**2) @ grads
        if cons.quad_idx.size:
            hess = hess + 2.0 * np.einsum(
                "k,kij->ij", inv_slack[cons.quad_idx], cons.quad, optimize=False
            )
        dx = _solve_spd(hess, -grad)
        decrement = float(-grad @ dx)
        if decrement / 2.0 <= NEWTON_TOL:
            break
        alpha = 1.0
        f0 = value(x)
        gdx = float(grad @ dx)
        while alpha > 1e-16 and value(x + alpha * dx) > f0 + 0.25 * alpha * gdx:
            alpha *= 0.5
        if alpha <= 1e-16:
            break
        x = x + alpha * dx
    return x


def phase_one(constraints: list[ConstraintData], x0: np.ndarray) -> tuple[np.ndarray | None, float]:
    """Find a strictly feasible point, or bound the least attainable violation.

    Returns ``(x_strict, s_star)`` where ``x_strict`` is None when no
    strictly feasible point was found. ``s_star`` is an upper bound on the
    minimum over x of the maximum constraint violation; a positive value
    (beyond the duality gap) certifies the constraint set is empty.
    """
    n = x0.shape[0]
    base = _ConstraintSet(constraints, n)
    s0 = float(base.values(x0).max()) + 1.0
    y = np.concatenate([x0, [s0]])

    # lift constraints into (x, s) space: g_i(x) - s <= 0, plus s >= -1
    lifted: list[ConstraintData] = []
    for a, b, c in constraints:
        a_l = None
        if a is not None:
            a_l = np.zeros((n + 1, n + 1))
            a_l[:n, :n] = a
        b_l = np.concatenate([b, [-1.0]])
        lifted.append((a_l, b_l, c))
    cap = np.zeros(n + 1)
    cap[n] = -1.0
    lifted.append((None, cap, -1.0))
    lifted_set = _ConstraintSet(lifted, n + 1)

    p_mat = np.zeros((n + 1, n + 1))
    q = np.zeros(n + 1)
    q[n] = 1.0

    t = BARRIER_T0
    m = len(lifted)
    for _ in range(MAX_OUTER):
        y = _barrier_newton(t, y, p_mat, q, lifted_set)
        if float(base.values(y[:n]).max()) < -PHASE1_INTERIOR_MARGIN:
            return y[:n].copy(), float(y[n])
        if m / t <= 1e-9:
            break
        t *= BARRIER_MU
    s_star = float(y[n])
    if float(base.values(y[:n]).max()) < 0.0:
        return y[:n].copy(), s_star
    return None, s_star


def _polish(
    x: np.ndarray,
    duals: np.ndarray,
    p_mat: np.ndarray,
    q: np.ndarray,
    constraints: list[ConstraintData],
    cons: _ConstraintSet,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Refine by solving the active-set KKT system with Newton.

    Returns None when no valid refinement is found (wrong active set,
    singular system, or negative multipliers)."""
    slacks = -cons.values(x)
    active = [i for i in range(cons.m) if slacks[i] <= 1e-6 or duals[i] >= 1e-5]
    for _ in range(3):
        if not active:
            x_new = _solve_spd(p_mat, -q)
            if cons.values(x_new).max() <= 1e-9:
                return x_new, np.zeros(cons.m)
            return None
        lam = np.array([max(duals[i], 0.0) for i in active])
        x_new = x.copy()
        n, k = x.shape[0], len(active)
        ok = True
        for _ in range(20):
            grads = np.column_stack([constraint_grad(constraints[i], x_new) for i in active])
            r_stat = p_mat @ x_new + q + grads @ lam
            r_feas = cons.values(x_new)[active]
            if max(np.abs(r_stat).max(), np.abs(r_feas).max()) <= 1e-13:
                break
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = p_mat
            for lam_i, i in zip(lam, active):
                if constraints[i][0] is not None:
                    kkt[:n, :n] += 2.0 * lam_i * constraints[i][0]
            kkt[:n, n:] = grads
            kkt[n:, :n] = grads.T
            try:
                delta = np.linalg.solve(kkt, -np.concatenate([r_stat, r_feas]))
            except np.linalg.LinAlgError:
                ok = False
                break
            x_new = x_new + delta[:n]
            lam = lam + delta[n:]
        if not ok:
            return None
        if lam.min() < -1e-9:
            # wrong working set: drop the most negative multiplier and retry
            drop = active[int(np.argmin(lam))]
            active = [i for i in active if i != drop]
            continue
        inactive_vals = np.delete(cons.values(x_new), active)
        if inactive_vals.size and inactive_vals.max() > 1e-9:
            return None
        duals_full = np.zeros(cons.m)
        for lam_i, i in zip(lam, active):
            duals_full[i] = max(lam_i, 0.0)
        return x_new, duals_full
    return None


def solve(
    p_mat: np.ndarray,
    q: np.ndarray,
    constraints: list[ConstraintData],
    x0: np.ndarray | None = None,
) -> CoreResult:
    """Barrier solve from an optional strictly feasible start.

    When ``x0`` is missing or infeasible, phase-I runs first. Statuses:
    ``optimal``, ``infeasible`` (certified or phase-I failed to find an
    interior point), ``numerical_breakdown``.
    """
    n = q.shape[0]
    constraints = [(a, np.asarray(b, dtype=float), float(c)) for a, b, c in constraints]
    if not constraints:
        x = _solve_spd(p_mat, -q)
        return CoreResult(x=x, status="optimal", gap=0.0, stationarity=0.0, polished=True)
    cons = _ConstraintSet(constraints, n)

    x_start = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if float(cons.values(x0).max()) < -1e-12:
            x_start = x0.copy()
    if x_start is None:
        try:
            x_start, s_star = phase_one(constraints, np.zeros(n) if x0 is None else x0)
        except NumericalBreakdown as exc:
            return CoreResult(x=np.zeros(n), status="numerical_breakdown", message=str(exc))
        if x_start is None:
            return CoreResult(
                x=np.zeros(n),
                status="infeasible",
                message=f"phase-1 violation bound {s_star:.3e}",
            )

    m = len(constraints)
    t = BARRIER_T0
    x = x_start
    try:
        for _ in range(MAX_OUTER):
            x = _barrier_newton(t, x, p_mat, q, cons)
            if 1.0 / t <= TARGET_GAP_PER_CONSTRAINT:
                break
            t *= BARRIER_MU
    except NumericalBreakdown as exc:
        return CoreResult(x=np.zeros(n), status="numerical_breakdown", message=str(exc))

    duals = 1.0 / (t * np.maximum(-cons.values(x), 1e-300))
    polished = False
    try:
        refined = _polish(x, duals, p_mat, q, constraints, cons)
    except NumericalBreakdown:
        refined = None
    if refined is not None:
        x, duals = refined
        polished = True

    slacks = np.maximum(-cons.values(x), 0.0)
    stationarity = float(np.abs(p_mat @ x + q + cons.grads(x).T @ duals).max())
    comp = float((duals * slacks).max())
    return CoreResult(
        x=x,
        status="optimal",
        duals=duals,
        gap=m / t if not polished else comp,
        stationarity=stationarity,
        polished=polished,
    )
