"""SE(3) poses, pinhole projection and twist integration.

Conventions: a Pose maps camera-frame coordinates to world-frame
coordinates (rotation columns are the camera axes expressed in the
world). The camera looks along its +z axis, +x right, +y down.
Angles are radians internally; degrees only at reporting boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLookAt, NonPositiveDepth

_EPS = 1e-12


def _as_array(x, shape) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(shape)
    a.flags.writeable = False
    return a


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation vector to rotation matrix."""
    theta = float(np.linalg.norm(rotvec))
    if theta < _EPS:
        return np.eye(3) + skew(rotvec)
    k = skew(rotvec / theta)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix to rotation vector, stable near 0 and pi."""
    trace = float(np.trace(rot))
    cos_theta = max(-1.0, min(1.0, (trace - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta < 1e-10:
        return np.array([rot[2, 1] - rot[1, 2],
                         rot[0, 2] - rot[2, 0],
                         rot[1, 0] - rot[0, 1]]) / 2.0
    if theta > math.pi - 1e-6:
        # near pi the off-diagonal formula degenerates; use R + I columns
        m = rot + np.eye(3)
        col = int(np.argmax(np.diag(m)))
        axis = m[:, col] / np.linalg.norm(m[:, col])
        # fix the sign from an off-diagonal antisymmetric element
        w = np.array([rot[2, 1] - rot[1, 2],
                      rot[0, 2] - rot[2, 0],
                      rot[1, 0] - rot[0, 1]])
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return theta * axis
    w = np.array([rot[2, 1] - rot[1, 2],
                  rot[0, 2] - rot[2, 0],
                  rot[1, 0] - rot[0, 1]])
    return w * (theta / (2.0 * math.sin(theta)))


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix via polar decomposition (SVD)."""
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3, det +1) and translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_array(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _as_array(self.translation, (3,)))
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(self.rotation) < 0.0:
            raise ValueError(f"rotation is not orthonormal (deviation {err:.2e})")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: maps other's source frame into self's target."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many points (N,3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z), w >= 0."""
        r = self.rotation
        t = np.trace(r)
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = np.array([0.25 * s,
                          (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s,
                          (r[1, 0] - r[0, 1]) / s])
        else:
            i = int(np.argmax(np.diag(r)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = math.sqrt(max(_EPS, 1.0 + r[i, i] - r[j, j] - r[k, k])) * 2.0
            q = np.empty(4)
            q[0] = (r[k, j] - r[j, k]) / s
            q[1 + i] = 0.25 * s
            q[1 + j] = (r[j, i] + r[i, j]) / s
            q[1 + k] = (r[k, i] + r[i, k]) / s
        if q[0] < 0.0:
            q = -q
        return q

    @staticmethod
    def from_quaternion(q: np.ndarray, translation: np.ndarray) -> "Pose":
        w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
        rot = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        return Pose(orthonormalize(rot), translation)


@dataclass(frozen=True)
class Twist:
    """Camera-frame velocity: linear (m/s) and angular (rad/s)."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "linear", _as_array(self.linear, (3,)))
        object.__setattr__(self, "angular", _as_array(self.angular, (3,)))
        if not (np.isfinite(self.linear).all() and np.isfinite(self.angular).all()):
            raise ValueError("twist components must be finite")

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return Twist(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole camera: focal lengths, principal point, resolution (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Same field of view at a different resolution."""
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy,
                                (self.cx + 0.5) * sx - 0.5,
                                (self.cy + 0.5) * sy - 0.5,
                                width, height)


def project(intrinsics: CameraIntrinsics, point_cam: np.ndarray) -> tuple[np.ndarray, float]:
    """Pinhole projection of a camera-frame point to (pixel, depth).

    Raises NonPositiveDepth when the point is on or behind the camera.
    """
    x, y, z = np.asarray(point_cam, dtype=np.float64)
    if z <= 1e-9:
        raise NonPositiveDepth(f"point depth {z:.3g} <= 1e-9")
    pixel = np.array([intrinsics.fx * x / z + intrinsics.cx,
                      intrinsics.fy * y / z + intrinsics.cy])
    return pixel, float(z)


def pixel_to_normalized(intrinsics: CameraIntrinsics, pixel: np.ndarray) -> tuple[float, float]:
    """Pixel coordinates to normalized image-plane coordinates."""
    u, v = np.asarray(pixel, dtype=np.float64)
    return (u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy


def integrate_twist(pose: Pose, twist: Twist, dt: float) -> Pose:
    """Advance a pose by a constant camera-frame twist over dt seconds.

    Uses the closed-form SE(3) exponential so large per-step rotations
    stay exact; the rotation is re-orthonormalized afterwards.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    rho = twist.linear * dt
    phi = twist.angular * dt
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < 1e-9:
        rot_step = np.eye(3) + k + 0.5 * (k @ k)
        v_mat = np.eye(3) + 0.5 * k + (k @ k) / 6.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
        c = (1.0 - a) / (theta * theta)
        rot_step = np.eye(3) + a * k + b * (k @ k)
        v_mat = np.eye(3) + b * k + c * (k @ k)
    new_rot = orthonormalize(pose.rotation @ rot_step)
    new_t = pose.rotation @ (v_mat @ rho) + pose.translation
    return Pose(new_rot, new_t)


def look_at(eye: np.ndarray, target: np.ndarray, roll: float = 0.0) -> Pose:
    """Pose whose camera z-axis points from eye toward target.

    `roll` is an extra rotation about the focal axis. The horizontal
    reference is world +y (falls back to +x when the view is along it).
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    dist = np.linalg.norm(forward)
    if dist <= 1e-9:
        raise DegenerateLookAt("eye and target coincide")
    f = forward / dist
    ref = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(ref, f)) > 1.0 - 1e-9:
        ref = np.array([1.0, 0.0, 0.0])
    x_axis = np.cross(ref, f)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(f, x_axis)
    rot = np.column_stack([x_axis, y_axis, f])
    if roll != 0.0:
        rot = rot @ rotation_about_z(roll)
    return Pose(orthonormalize(rot), eye)


def pose_error(current: Pose, desired: Pose) -> tuple[float, float]:
    """Translation error (meters) and geodesic rotation error (degrees)."""
    trans = float(np.linalg.norm(current.translation - desired.translation))
    rel = desired.rotation.T @ current.rotation
    cos_theta = max(-1.0, min(1.0, (float(np.trace(rel)) - 1.0) / 2.0))
    return trans, math.degrees(math.acos(cos_theta))
