"""Finite-horizon planner for the feature-error regulation task.

The prediction model holds the interaction matrix fixed at its current
value over the horizon, which condenses the problem into a convex QP in
the stacked control vector:

    min sum_k e_k' Q e_k + V_k' R V_k  +  e_N' F e_N
    s.t. e_{k+1} = e_k + dt * L @ V_k,   ||V_k|| <= v_max

Solved with an accelerated projected-gradient method (the feasible set
is a product of balls, so projection is per-block clipping), falling
back to the interior-point core when the condensed Hessian is badly
conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import qcqp
from .errors import DimensionMismatch, SolverFailure

FISTA_MAX_ITER = 20000
FISTA_TOL = 1e-9
CONDITION_FALLBACK = 1e12


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Horizon, weights, speed bound, and step size of the planner."""

    horizon: int
    q: np.ndarray  # (2m, 2m) PSD stage weight
    r: np.ndarray  # (6, 6) PD input weight
    f: np.ndarray  # (2m, 2m) PSD terminal weight
    v_max: float
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not self.v_max > 0.0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        for name, mat, strict in (("q", self.q, False), ("r", self.r, True), ("f", self.f, False)):
            if np.abs(mat - mat.T).max() > 1e-9:
                raise ValueError(f"{name} must be symmetric")
            eig_min = float(np.linalg.eigvalsh(mat)[0])
            if strict and eig_min <= 0.0:
                raise ValueError(f"{name} must be positive definite, min eigenvalue {eig_min:.3e}")
            if not strict and eig_min < -1e-9:
                raise ValueError(f"{name} must be PSD, min eigenvalue {eig_min:.3e}")

    @staticmethod
    def from_weights(
        m: int,
        horizon: int = 5,
        q: float = 1.0,
        r: float = 0.05,
        f: float = 2.0,
        v_max: float = 0.5,
        dt: float = 0.05,
    ) -> "MpcConfig":
        """Scalar weights times identity, for m feature points."""
        return MpcConfig(
            horizon=horizon,
            q=q * np.eye(2 * m),
            r=r * np.eye(6),
            f=f * np.eye(2 * m),
            v_max=v_max,
            dt=dt,
        )


def predict_errors(e0: np.ndarray, L: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    """Roll the frozen-interaction error model; returns N+1 rows incl. e0."""
    e0 = np.asarray(e0, dtype=float).reshape(-1)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if L.shape[0] != e0.shape[0] or L.shape[1] != controls.shape[1]:
        raise DimensionMismatch(f"L {L.shape} vs e0 {e0.shape} and controls {controls.shape}")
    errors = np.empty((controls.shape[0] + 1, e0.shape[0]))
    errors[0] = e0
    for k in range(controls.shape[0]):
        errors[k + 1] = errors[k] + dt * (L @ controls[k])
    return errors


def rollout_cost(e0: np.ndarray, L: np.ndarray, controls: np.ndarray, cfg: MpcConfig) -> float:
    """Exact cost of a control sequence under the prediction model."""
    errors = predict_errors(e0, L, controls, cfg.dt)
    cost = 0.0
    for k in range(controls.shape[0]):
        cost += float(errors[k] @ cfg.q @ errors[k]) + float(controls[k] @ cfg.r @ controls[k])
    cost += float(errors[-1] @ cfg.f @ errors[-1])
    return cost


def condense(e0: np.ndarray, L: np.ndarray, cfg: MpcConfig) -> tuple[np.ndarray, np.ndarray]:
    """Condensed Hessian and gradient over the stacked controls.

    The cost is 0.5 U'HU + g'U plus a constant, U = [V_0; ...; V_{N-1}].
    """
    n = cfg.horizon
    dt = cfg.dt
    s_q = L.T @ cfg.q @ L
    s_f = L.T @ cfg.f @ L
    lq_e = L.T @ (cfg.q @ e0)
    lf_e = L.T @ (cfg.f @ e0)
    h_mat = np.zeros((6 * n, 6 * n))
    g = np.zeros(6 * n)
    for a in range(n):
        for b in range(n):
            count = max(n - 1 - max(a, b), 0)
            block = dt * dt * (count * s_q + s_f)
            h_mat[6 * a : 6 * a + 6, 6 * b : 6 * b + 6] = 2.0 * block
        g[6 * a : 6 * a + 6] = 2.0 * dt * ((n - 1 - a) * lq_e + lf_e)
        h_mat[6 * a : 6 * a + 6, 6 * a : 6 * a + 6] += 2.0 * cfg.r
    return h_mat, g


def _project_blocks(u: np.ndarray, v_max: float) -> np.ndarray:
    blocks = u.reshape(-1, 6)
    norms = np.linalg.norm(blocks, axis=1)
    over = norms > v_max
    if np.any(over):
        blocks = blocks.copy()
        blocks[over] *= (v_max / norms[over])[:, None]
    return blocks.reshape(-1)


def _fista(h_mat: np.ndarray, g: np.ndarray, v_max: float, lipschitz: float) -> np.ndarray:
    """Accelerated projected gradient with adaptive restart.

    The cheap fixed-point residual at the extrapolated point gates the
    exact gradient-mapping check, so most iterations cost one matvec.
    """
    tol = FISTA_TOL * (1.0 + float(np.linalg.norm(g)))
    x = np.zeros_like(g)
    y = x.copy()
    t_k = 1.0
    for _ in range(FISTA_MAX_ITER):
        grad_y = h_mat @ y + g
        x_new = _project_blocks(y - grad_y / lipschitz, v_max)
        if lipschitz * float(np.linalg.norm(y - x_new)) <= tol:
            grad_x = h_mat @ x_new + g
            mapped = x_new - _project_blocks(x_new - grad_x / lipschitz, v_max)
            if lipschitz * float(np.linalg.norm(mapped)) <= tol:
                return x_new
        if float((y - x_new) @ (x_new - x)) > 0.0:
            # momentum points uphill: restart
            t_new = 1.0
            y = x_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
            y = x_new + ((t_k - 1.0) / t_new) * (x_new - x)
        x, t_k = x_new, t_new
    raise SolverFailure(f"projected gradient did not converge in {FISTA_MAX_ITER} iterations")


def plan(e0: np.ndarray, L: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    """Optimal control sequence, shape (N, 6); first row is the nominal twist."""
    e0 = np.asarray(e0, dtype=float).reshape(-1)
    L = np.asarray(L, dtype=float)
    if L.shape != (e0.shape[0], 6) or cfg.q.shape[0] != e0.shape[0]:
        raise DimensionMismatch(f"L {L.shape}, e0 {e0.shape}, q {cfg.q.shape}")
    h_mat, g = condense(e0, L, cfg)
    eigs = np.linalg.eigvalsh(h_mat)
    if eigs[0] <= 0.0:
        raise ValueError(f"condensed Hessian not positive definite (min eigenvalue {eigs[0]:.3e})")
    if eigs[-1] / eigs[0] > CONDITION_FALLBACK:
        return _plan_interior_point(h_mat, g, cfg)
    # speed bounds inactive at the unconstrained optimum: that is the solution
    u_free = cho_solve(cho_factor(h_mat), -g)
    if np.all(np.linalg.norm(u_free.reshape(-1, 6), axis=1) <= cfg.v_max):
        return u_free.reshape(cfg.horizon, 6)
    u = _fista(h_mat, g, cfg.v_max, float(eigs[-1]))
    return u.reshape(cfg.horizon, 6)


def _plan_interior_point(h_mat: np.ndarray, g: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    n = cfg.horizon
    cons = []
    for k in range(n):
        a = np.zeros((6 * n, 6 * n))
        a[6 * k : 6 * k + 6, 6 * k : 6 * k + 6] = np.eye(6)
        cons.append((a, np.zeros(6 * n), -cfg.v_max**2))
    result = qcqp.solve(h_mat, g, cons, x0=np.zeros(6 * n))
    if result.status != "optimal":
        raise SolverFailure(f"interior-point fallback failed: {result.status} {result.message}")
    return result.x.reshape(n, 6)
