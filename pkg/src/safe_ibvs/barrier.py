"""Occlusion-avoidance constraints over the camera twist.

For each feature point the occlusion margin is

    h = ||s_i - s_o||^2 - Rn^2

(positive outside the obstacle's projected disk). Two constraint
families keep h nonnegative along the closed loop:

* exact measurements: a half-space per feature, requiring the margin's
  control-dependent rate to dominate ``-gamma * h``;
* noisy measurements: a convex quadratic per feature which additionally
  absorbs an axis-aligned confidence box of half-width ``e`` on the
  relative measurement noise, so that any twist satisfying it keeps the
  true margin nonnegative whenever the noise falls inside the box, i.e.
  with probability at least the box's confidence level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import erf, erfinv
from scipy.stats import norm as _norm

from .errors import UnsupportedCovariance
from .observation import FeatureObservation

_DIAG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class HalfspaceConstraint:
    """Admissible twists satisfy ``row @ V >= rhs``."""

    row: np.ndarray
    rhs: float


@dataclass(frozen=True, eq=False)
class QuadraticConstraint:
    """Admissible twists satisfy ``V @ a @ V + b @ V + c <= 0``; a is PSD."""

    a: np.ndarray
    b: np.ndarray
    c: float


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Zero-mean Gaussian pixel noise on feature and obstacle positions.

    Covariances are in pixel^2; constraint math lives in the normalized
    image plane, so they are divided by f^2 on conversion.
    """

    feature_cov: np.ndarray  # (2, 2), applied independently to every feature
    obstacle_cov: np.ndarray  # (2, 2)
    sigma: float = 0.8  # confidence level for the noisy-case constraints

    def __post_init__(self):
        fc = np.asarray(self.feature_cov, dtype=float).reshape(2, 2)
        oc = np.asarray(self.obstacle_cov, dtype=float).reshape(2, 2)
        object.__setattr__(self, "feature_cov", fc)
        object.__setattr__(self, "obstacle_cov", oc)
        for name, cov in (("feature_cov", fc), ("obstacle_cov", oc)):
            if np.abs(cov - cov.T).max() > 1e-12:
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(cov)[0] < -1e-12:
                raise ValueError(f"{name} must be PSD")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")

    @staticmethod
    def isotropic(pixel_variance: float, sigma: float = 0.8) -> "NoiseModel":
        cov = pixel_variance * np.eye(2)
        return NoiseModel(cov, cov.copy(), sigma)

    def relative_cov_normalized(self, f: float) -> np.ndarray:
        """Covariance of the feature-minus-obstacle noise, normalized plane."""
        return (self.feature_cov + self.obstacle_cov) / f**2


def barrier_value(s_i: np.ndarray, s_o: np.ndarray, rn: float) -> float:
    """Occlusion margin of one feature against the obstacle disk."""
    d = np.asarray(s_i, dtype=float) - np.asarray(s_o, dtype=float)
    return float(d @ d) - rn * rn


def barrier_rate_row(
    s_i: np.ndarray,
    s_o: np.ndarray,
    l_feature: np.ndarray,
    l_obstacle: np.ndarray,
    l_radius: np.ndarray,
    rn: float,
) -> np.ndarray:
    """Row mapping a twist to the time derivative of the occlusion margin."""
    d = np.asarray(s_i, dtype=float) - np.asarray(s_o, dtype=float)
    return 2.0 * d @ (l_feature - l_obstacle) - 2.0 * rn * l_radius


def cbc_halfspaces(obs: FeatureObservation, gamma: float) -> list[HalfspaceConstraint]:
    """One admissible half-space per feature: ``row @ V >= -gamma * h``.

    Rows never vanish for a projectable obstacle: even with the feature
    on the projected center, the radius-rate entry ``-2 Rn R / Zo^2``
    survives. A zero row would make the constraint meaningless, so it is
    rejected here.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    out = []
    rn = obs.obstacle.rn
    for i in range(obs.m):
        row = barrier_rate_row(
            obs.features[i], obs.obstacle.center, obs.l_features[i], obs.l_obstacle, obs.l_radius, rn
        )
        if not np.abs(row).max() > 0.0:
            raise ValueError(f"degenerate barrier row for feature {i}")
        h = barrier_value(obs.features[i], obs.obstacle.center, rn)
        out.append(HalfspaceConstraint(row=row, rhs=-gamma * h))
    return out


def noise_box_halfwidth(sigma: float, cov: np.ndarray) -> float:
    """Half-width e of the square [-e, e]^2 holding probability ``sigma``.

    ``cov`` is the (diagonal) covariance of the zero-mean planar noise.
    Isotropic covariances use the closed form ``nu * sqrt(2) *
    erfinv(sqrt(sigma))``; unequal diagonals solve the product-of-erf
    equation with a bracketing root finder. Non-diagonal covariances are
    rejected (see :func:`noise_box_halfwidth_numeric` for those).
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    cov = np.asarray(cov, dtype=float).reshape(2, 2)
    if max(abs(cov[0, 1]), abs(cov[1, 0])) > _DIAG_TOL * max(1.0, cov[0, 0], cov[1, 1]):
        raise UnsupportedCovariance(f"closed form needs a diagonal covariance, got {cov.tolist()}")
    v1, v2 = math.sqrt(max(cov[0, 0], 0.0)), math.sqrt(max(cov[1, 1], 0.0))
    if v1 == 0.0 and v2 == 0.0:
        return 0.0
    if v1 == 0.0 or v2 == 0.0:
        nu = max(v1, v2)
        return nu * math.sqrt(2.0) * float(erfinv(sigma))
    if abs(v1 - v2) <= 1e-14 * max(v1, v2):
        return v1 * math.sqrt(2.0) * float(erfinv(math.sqrt(sigma)))

    def box_prob_minus_sigma(e):
        return erf(e / (math.sqrt(2.0) * v1)) * erf(e / (math.sqrt(2.0) * v2)) - sigma

    hi = 2.0 * max(v1, v2)
    while box_prob_minus_sigma(hi) < 0.0:
        hi *= 2.0
    return float(brentq(box_prob_minus_sigma, 0.0, hi, xtol=1e-15, rtol=1e-15))


def box_probability(e: float, cov: np.ndarray) -> float:
    """Probability that zero-mean Gaussian noise falls in [-e, e]^2.

    General PSD covariances; integrates the conditional CDF along one
    axis. Degenerate axes collapse to the 1-D marginal.
    """
    if e <= 0.0:
        return 0.0
    cov = np.asarray(cov, dtype=float).reshape(2, 2)
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    if a <= 0.0 and c <= 0.0:
        return 1.0
    if a <= 0.0 or c <= 0.0:
        var = max(a, c)
        return float(erf(e / math.sqrt(2.0 * var)))
    cond_var = max(c - b * b / a, 0.0)
    sx = math.sqrt(a)
    if cond_var == 0.0:
        def integrand(x):
            y = b / a * x
            return _norm.pdf(x, scale=sx) if abs(y) <= e else 0.0
    else:
        sc = math.sqrt(cond_var)

        def integrand(x):
            mu = b / a * x
            return _norm.pdf(x, scale=sx) * (_norm.cdf((e - mu) / sc) - _norm.cdf((-e - mu) / sc))

    val, _ = quad(integrand, -e, e, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


def noise_box_halfwidth_numeric(sigma: float, cov: np.ndarray) -> float:
    """Half-width for general PSD covariances via numeric CDF inversion."""
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    cov = np.asarray(cov, dtype=float).reshape(2, 2)
    if np.linalg.eigvalsh(cov)[0] < -1e-12:
        raise UnsupportedCovariance("covariance must be PSD")
    if cov.max() == 0.0:
        return 0.0
    hi = 2.0 * math.sqrt(max(cov[0, 0], cov[1, 1]))
    while box_probability(hi, cov) < sigma:
        hi *= 2.0
    return float(brentq(lambda e: box_probability(e, cov) - sigma, 0.0, hi, xtol=1e-12))


def prcbc_quadratics(
    obs: FeatureObservation,
    gamma: float,
    halfwidth: float,
    include_radius_term: bool = True,
) -> list[QuadraticConstraint]:
    """One convex quadratic per feature for the noisy-measurement case.

    With ``ds`` the observed feature-to-obstacle offset and ``dl`` the
    difference of their interaction matrices, the constraint is

        V' (dl'dl / gamma^2) V + b V + (2 Rn^2 + 4 e^2 - ||ds||^2) <= 0
        b = (-2 ds'dl + 8 Rn L_r) / gamma

    where the radius-rate term ``8 Rn L_r`` can be dropped via
    ``include_radius_term=False`` for comparison runs. The quadratic part
    is a Gram matrix, hence PSD of rank <= 2.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if halfwidth < 0.0:
        raise ValueError(f"halfwidth must be nonnegative, got {halfwidth}")
    rn = obs.obstacle.rn
    out = []
    for i in range(obs.m):
        ds = obs.features[i] - obs.obstacle.center
        dl = obs.l_features[i] - obs.l_obstacle
        a = dl.T @ dl / gamma**2
        b = -2.0 * (ds @ dl) / gamma
        if include_radius_term:
            b = b + 8.0 * rn * obs.l_radius / gamma
        c = 2.0 * rn * rn + 4.0 * halfwidth * halfwidth - float(ds @ ds)
        out.append(QuadraticConstraint(a=a, b=b, c=c))
    return out


@dataclass(frozen=True)
class BarrierRowReport:
    """Smallest row magnitude seen while checking constraint rows."""

    min_inf_norm: float
    all_nonzero: bool
    n_rows: int


def validate_barrier_rows(observations) -> BarrierRowReport:
    """Check that no barrier-rate row degenerates to zero.

    The radius-rate entry ``-2 Rn R / Zo^2`` is structurally nonzero, so
    rows stay nonzero even when a feature sits exactly on the projected
    obstacle center; this scans real states and reports the minimum
    infinity norm encountered.
    """
    min_norm = np.inf
    n = 0
    for obs in observations:
        rn = obs.obstacle.rn
        for i in range(obs.m):
            row = barrier_rate_row(
                obs.features[i], obs.obstacle.center, obs.l_features[i], obs.l_obstacle, obs.l_radius, rn
            )
            min_norm = min(min_norm, float(np.abs(row).max()))
            n += 1
    return BarrierRowReport(min_inf_norm=min_norm, all_nonzero=bool(min_norm > 0.0), n_rows=n)
