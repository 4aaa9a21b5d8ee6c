"""SE(3) poses, Euler angles, and pinhole projection primitives.

Conventions used package-wide:

* Camera frame: x points right, y points down, z points forward along the
  optical axis.
* A ``Pose`` is camera-to-world: ``p_world = R @ p_cam + t``.  The camera
  center expressed in world coordinates is therefore ``t``.
* Euler angles compose as ``R = Rz(psi) @ Ry(phi) @ Rx(theta)`` with pitch
  ``theta`` about x, yaw ``phi`` about y, and roll ``psi`` about z.  With
  the y axis pointing down, positive yaw turns the gaze direction to the
  right, positive pitch tilts it up, and positive roll is clockwise as
  seen from behind the camera.
* Angles are radians everywhere in memory; degrees appear only at
  configuration and reporting boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ORTHONORMAL_TOL",
    "GIMBAL_LOCK_TOL",
    "GeometryError",
    "GimbalLock",
    "InvalidDepth",
    "BehindCamera",
    "DegenerateRay",
    "Intrinsics",
    "Pose",
    "PoseVector",
    "rot_x",
    "rot_y",
    "rot_z",
    "rotation_from_euler",
    "euler_from_rotation",
    "relative_pose",
    "pose_vector",
    "unproject",
    "reproject",
    "viewing_angle",
    "center_deviation",
]

ORTHONORMAL_TOL = 1e-9
GIMBAL_LOCK_TOL = 1e-6

_MIN_CAMERA_Z = 1e-9
_MIN_RAY_LENGTH = 1e-9


class GeometryError(Exception):
    """Base class for geometric failures."""


class GimbalLock(GeometryError):
    """Yaw is numerically at +-90 deg; pitch and roll are not separable."""


class InvalidDepth(GeometryError):
    """Depth value is missing, zero, negative, or non-finite."""


class BehindCamera(GeometryError):
    """Point lies behind the image plane after the camera transform."""


class DegenerateRay(GeometryError):
    """A viewing ray has (numerically) zero length."""


def _check_rotation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise GeometryError("rotation contains non-finite entries")
    drift = float(np.abs(r.T @ r - np.eye(3)).max())
    if drift > ORTHONORMAL_TOL:
        raise GeometryError(f"rotation is not orthonormal (drift {drift:.3e})")
    det = float(np.linalg.det(r))
    if abs(det - 1.0) > ORTHONORMAL_TOL:
        raise GeometryError(f"rotation determinant is {det:.12f}, expected +1")
    return r


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole parameters plus the image size they refer to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def center_pixel(self) -> np.ndarray:
        """Image center (width/2, height/2), the reference pixel for pairing."""
        return np.array([self.width / 2.0, self.height / 2.0])

    def contains(self, pixel) -> bool:
        u, v = float(pixel[0]), float(pixel[1])
        return 0.0 <= u < self.width and 0.0 <= v < self.height


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform; ``p_world = rotation @ p_cam + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation contains non-finite entries")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise GeometryError(f"homogeneous matrix must be 4x4, got {m.shape}")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > ORTHONORMAL_TOL:
            raise GeometryError(f"bottom row must be (0, 0, 0, 1), got {m[3].tolist()}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self @ other`` as transforms (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def transform(self, points) -> np.ndarray:
        """Apply the transform to one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class PoseVector:
    """Six-DoF relative motion: pitch/yaw/roll in radians plus a translation."""

    theta: float
    phi: float
    psi: float
    t_x: float
    t_y: float
    t_z: float

    DOFS = ("theta", "phi", "psi", "t_x", "t_y", "t_z")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.psi, self.t_x, self.t_y, self.t_z])

    def component(self, dof: str) -> float:
        if dof not in self.DOFS:
            raise ValueError(f"unknown DoF {dof!r}")
        return float(getattr(self, dof))

    def rotation_degrees(self) -> tuple[float, float, float]:
        return (math.degrees(self.theta), math.degrees(self.phi), math.degrees(self.psi))


def rot_x(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(theta: float, phi: float, psi: float) -> np.ndarray:
    """Compose ``Rz(psi) @ Ry(phi) @ Rx(theta)``.

    Round-trips exactly through :func:`euler_from_rotation` as long as the
    yaw stays outside that function's gimbal-lock band (roughly 1.5e-3 rad
    around +-pi/2).
    """
    return rot_z(psi) @ rot_y(phi) @ rot_x(theta)


def euler_from_rotation(r) -> tuple[float, float, float]:
    """Extract ``(theta, phi, psi)`` from a rotation matrix.

    Uses ``theta = atan2(R32, R33)``, ``phi = asin(-R31)`` and
    ``psi = atan2(R21, R11)``; the two-argument arctangent keeps the
    quadrants right where a plain ratio would be ambiguous by pi.

    Raises:
        GimbalLock: when ``|R31|`` is within ``GIMBAL_LOCK_TOL`` of 1, i.e.
            yaw at +-90 deg where pitch and roll collapse onto one axis.
    """
    r = _check_rotation(r)
    r31 = float(np.clip(r[2, 0], -1.0, 1.0))
    if abs(r31) > 1.0 - GIMBAL_LOCK_TOL:
        raise GimbalLock(f"|R31| = {abs(r31):.9f}; yaw is at +-90 deg")
    theta = math.atan2(r[2, 1], r[2, 2])
    phi = math.asin(-r31)
    psi = math.atan2(r[1, 0], r[0, 0])
    return theta, phi, psi


def relative_pose(src: Pose, tgt: Pose) -> Pose:
    """Motion from the source camera to the target camera.

    Returns ``inverse(src) o tgt``, i.e. the target camera's pose expressed
    in the source camera's frame.
    """
    return src.inverse().compose(tgt)


def pose_vector(src: Pose, tgt: Pose) -> PoseVector:
    """Six-DoF vector of the source-to-target relative motion.

    Raises:
        GimbalLock: propagated from the Euler extraction.
    """
    rel = relative_pose(src, tgt)
    theta, phi, psi = euler_from_rotation(rel.rotation)
    t = rel.translation
    return PoseVector(theta, phi, psi, float(t[0]), float(t[1]), float(t[2]))


def unproject(pixel, depth: float, k: Intrinsics, pose: Pose) -> np.ndarray:
    """Lift a pixel with known z-depth to a world point.

    ``p_world = pose o (depth * K^-1 [u, v, 1])``; depth is the camera-frame
    z coordinate, in metric units.

    Raises:
        InvalidDepth: if ``depth`` is not a positive finite number.
    """
    if not math.isfinite(depth) or depth <= 0.0:
        raise InvalidDepth(f"depth must be positive and finite, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    p_cam = np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])
    return pose.rotation @ p_cam + pose.translation


def reproject(point, k: Intrinsics, pose: Pose) -> np.ndarray:
    """Project a world point into a camera; may land outside image bounds.

    Raises:
        BehindCamera: if the camera-frame z coordinate is <= 1e-9.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    p_cam = pose.rotation.T @ (p - pose.translation)
    z = float(p_cam[2])
    if z <= _MIN_CAMERA_Z:
        raise BehindCamera(f"camera-frame z = {z:.3e}")
    return np.array([k.fx * p_cam[0] / z + k.cx, k.fy * p_cam[1] / z + k.cy])


def viewing_angle(point, origin_i, origin_j) -> float:
    """Angle in degrees at ``point`` between the rays to two camera centers.

    The cosine is clamped to [-1, 1] before the arccos to absorb the
    floating-point drift of near-parallel rays.

    Raises:
        DegenerateRay: if either camera center coincides with ``point``.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    a = np.asarray(origin_i, dtype=float).reshape(3) - p
    b = np.asarray(origin_j, dtype=float).reshape(3) - p
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na <= _MIN_RAY_LENGTH or nb <= _MIN_RAY_LENGTH:
        raise DegenerateRay("camera center coincides with the observed point")
    cos = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    return math.degrees(math.acos(cos))


def center_deviation(p_i, p_j) -> float:
    """Euclidean pixel distance between two image points."""
    a = np.asarray(p_i, dtype=float).reshape(2)
    b = np.asarray(p_j, dtype=float).reshape(2)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise GeometryError("pixel coordinates must be finite")
    return float(np.linalg.norm(a - b))
