"""Pinhole camera model, rigid camera poses, and scene projection.

Conventions used throughout the package:

* World frame: fixed, right handed.
* Camera frame: right handed, origin at the optical center, z axis along
  the optical axis pointing into the scene, x right, y down.
* ``CameraPose.rotation`` maps camera coordinates to world coordinates
  (its columns are the camera axes expressed in the world frame);
  ``translation`` is the optical center in world coordinates.
* A twist is the 6-vector ``[vx, vy, vz, wx, wy, wz]`` (linear then
  angular velocity) expressed in the current camera frame.
* Normalized image coordinates are pixel coordinates pushed through the
  inverse intrinsics: ``a = (u - px) / f``, ``b = (v - py) / f``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth

ORTHONORMAL_TOL = 1e-9
MIN_DEPTH = 1e-9


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def se3_exp(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exponential map of a body twist ``[v, w]``.

    Returns the incremental rotation and translation of the moving frame
    expressed in that frame, i.e. ``T_new = T_old @ [R, t; 0, 1]``.
    """
    v = np.asarray(xi[:3], dtype=float)
    w = np.asarray(xi[3:], dtype=float)
    theta = float(np.linalg.norm(w))
    wx = skew(w)
    wx2 = wx @ wx
    if theta < 1e-12:
        # series truncation error is below machine precision here
        rot = np.eye(3) + wx + 0.5 * wx2
        jac = np.eye(3) + 0.5 * wx + wx2 / 6.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        rot = np.eye(3) + (s / theta) * wx + ((1.0 - c) / theta**2) * wx2
        jac = np.eye(3) + ((1.0 - c) / theta**2) * wx + ((theta - s) / theta**3) * wx2
    return rot, jac @ v


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    """Pinhole intrinsics with a single focal length (square pixels)."""

    f: float
    px: float
    py: float

    def __post_init__(self):
        if not self.f > 0.0:
            raise ValueError(f"focal length must be positive, got {self.f}")


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Rigid camera pose: camera-to-world rotation and camera origin."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.3e})")
        det = np.linalg.det(rot)
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise ValueError(f"rotation determinant {det:.12f} != +1")

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_rpy(rpy: np.ndarray, translation: np.ndarray) -> "CameraPose":
        """Pose from intrinsic roll-pitch-yaw angles (radians), R = Rz@Ry@Rx."""
        r, p, y = float(rpy[0]), float(rpy[1]), float(rpy[2])
        cr, sr = np.cos(r), np.sin(r)
        cp, sp = np.cos(p), np.sin(p)
        cy, sy = np.cos(y), np.sin(y)
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return CameraPose(rz @ ry @ rx, np.asarray(translation, dtype=float))


def world_to_camera(pose: CameraPose, p: np.ndarray) -> np.ndarray:
    """Express a world point in the camera frame."""
    return pose.rotation.T @ (np.asarray(p, dtype=float) - pose.translation)


def camera_to_world(pose: CameraPose, p_cam: np.ndarray) -> np.ndarray:
    """Inverse of :func:`world_to_camera`."""
    return pose.rotation @ np.asarray(p_cam, dtype=float) + pose.translation


def normalize(q: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates to normalized image-plane coordinates."""
    q = np.asarray(q, dtype=float)
    return np.array([(q[0] - k.px) / k.f, (q[1] - k.py) / k.f])


def pixel_from_normalized(s: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Normalized image-plane coordinates back to pixels."""
    s = np.asarray(s, dtype=float)
    return np.array([k.f * s[0] + k.px, k.f * s[1] + k.py])


def project_to_pixel(p_cam: np.ndarray, k: CameraIntrinsics) -> tuple[np.ndarray, float]:
    """Project a camera-frame point to pixels; returns (pixel, depth).

    Raises :class:`NonPositiveDepth` when the point is on or behind the
    camera plane (depth <= 1e-9); callers treat this as a fatal trial
    condition.
    """
    p_cam = np.asarray(p_cam, dtype=float)
    z = float(p_cam[2])
    if z <= MIN_DEPTH:
        raise NonPositiveDepth(f"point depth {z:.3e} <= {MIN_DEPTH:.0e}")
    s = p_cam[:2] / z
    return pixel_from_normalized(s, k), z


def project_point(pose: CameraPose, k: CameraIntrinsics, p_world: np.ndarray) -> tuple[np.ndarray, float]:
    """World point to normalized coordinates and depth in one go."""
    p_cam = world_to_camera(pose, p_world)
    z = float(p_cam[2])
    if z <= MIN_DEPTH:
        raise NonPositiveDepth(f"point depth {z:.3e} <= {MIN_DEPTH:.0e}")
    return p_cam[:2] / z, z


def integrate_twist(pose: CameraPose, twist: np.ndarray, dt: float) -> CameraPose:
    """Advance the pose by the exponential of ``dt * twist``.

    The twist is a body twist (expressed in the current camera frame), so
    the increment right-multiplies the pose.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    rot_inc, t_inc = se3_exp(np.asarray(twist, dtype=float) * dt)
    return CameraPose(pose.rotation @ rot_inc, pose.translation + pose.rotation @ t_inc)


@dataclass(frozen=True, eq=False)
class Obstacle3:
    """Spherical obstacle on a piecewise-linear waypoint schedule.

    ``times`` must be strictly increasing; the center is held constant
    before the first and after the last waypoint.
    """

    radius: float
    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "points", points)
        if not self.radius > 0.0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")
        if points.shape != (times.shape[0], 3):
            raise ValueError(f"waypoints shape {points.shape} does not match {times.shape[0]} times")
        if times.shape[0] > 1 and not np.all(np.diff(times) > 0.0):
            raise ValueError("waypoint times must be strictly increasing")

    @staticmethod
    def static(center: np.ndarray, radius: float) -> "Obstacle3":
        return Obstacle3(radius, np.array([0.0]), np.asarray(center, dtype=float).reshape(1, 3))

    @staticmethod
    def constant_velocity(center: np.ndarray, velocity: np.ndarray, radius: float, duration: float = 1e6) -> "Obstacle3":
        center = np.asarray(center, dtype=float)
        velocity = np.asarray(velocity, dtype=float)
        return Obstacle3(
            radius,
            np.array([0.0, duration]),
            np.vstack([center, center + duration * velocity]),
        )

    def center_at(self, t: float) -> np.ndarray:
        if self.times.shape[0] == 1:
            return self.points[0].copy()
        return np.array([np.interp(t, self.times, self.points[:, i]) for i in range(3)])


@dataclass(frozen=True, eq=False)
class ObstacleImageState:
    """Projected obstacle: normalized center, normalized and pixel radii."""

    center: np.ndarray
    rn: float
    depth: float
    radius_px: float


def obstacle_image_state(obs: Obstacle3, pose: CameraPose, k: CameraIntrinsics, t: float) -> ObstacleImageState:
    """Project the obstacle center at time ``t`` into the image.

    The normalized radius is the metric radius divided by the center
    depth; the pixel radius additionally scales by the focal length.
    """
    center, z = project_point(pose, k, obs.center_at(t))
    return ObstacleImageState(center=center, rn=obs.radius / z, depth=z, radius_px=k.f * obs.radius / z)
