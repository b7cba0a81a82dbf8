"""Interaction matrices: camera twist to image-plane velocity maps.

All rows follow the twist convention ``[vx, vy, vz, wx, wy, wz]`` in the
camera frame. Points are normalized image coordinates, depths are metric
and must be positive.
"""

from __future__ import annotations

import numpy as np

from .errors import NonPositiveDepth


def feature_interaction(p: np.ndarray, z: float) -> np.ndarray:
    """2x6 interaction matrix of a point feature at normalized ``p``, depth ``z``."""
    if not z > 0.0:
        raise NonPositiveDepth(f"feature depth {z} <= 0")
    a, b = float(p[0]), float(p[1])
    return np.array(
        [
            [-1.0 / z, 0.0, a / z, a * b, -(1.0 + a * a), b],
            [0.0, -1.0 / z, b / z, 1.0 + b * b, -a * b, -a],
        ]
    )


def obstacle_center_interaction(p_o: np.ndarray, z_o: float) -> np.ndarray:
    """2x6 interaction matrix of the projected obstacle center.

    Same functional form as a point feature, evaluated at the obstacle
    center and its own depth.
    """
    if not z_o > 0.0:
        raise NonPositiveDepth(f"obstacle depth {z_o} <= 0")
    return feature_interaction(p_o, z_o)


def obstacle_radius_interaction(p_o: np.ndarray, z_o: float, radius: float) -> np.ndarray:
    """1x6 interaction row of the normalized obstacle radius."""
    if not z_o > 0.0:
        raise NonPositiveDepth(f"obstacle depth {z_o} <= 0")
    if not radius > 0.0:
        raise ValueError(f"obstacle radius must be positive, got {radius}")
    a, b = float(p_o[0]), float(p_o[1])
    return np.array([0.0, 0.0, radius / z_o**2, radius * b / z_o, -radius * a / z_o, 0.0])


def stack_interaction(points: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Vertically stack feature interaction matrices, 2m x 6."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    depths = np.atleast_1d(np.asarray(depths, dtype=float))
    if points.shape[0] != depths.shape[0] or points.shape[0] < 1:
        raise ValueError(f"got {points.shape[0]} points for {depths.shape[0]} depths")
    return np.vstack([feature_interaction(p, z) for p, z in zip(points, depths)])
