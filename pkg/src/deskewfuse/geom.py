"""Rigid-body geometry: Rodrigues maps, pose interpolation, radial bases.

Rotations are plain ``(3, 3)`` float arrays. Poses carry an absolute stamp so
that a list of them forms an ego trajectory that can be sampled at any
acquisition time inside its span.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateGeometry, InvalidArgument, MissingPose, OutOfRange

GLOBAL_UP = np.array([0.0, 0.0, 1.0])
GLOBAL_X = np.array([1.0, 0.0, 0.0])

_AXIS_TOL = 1e-6


class AxisAngle(NamedTuple):
    axis: np.ndarray
    angle: float


class RadialBasis(NamedTuple):
    radial: np.ndarray
    tangential_1: np.ndarray
    tangential_2: np.ndarray

    def matrix(self) -> np.ndarray:
        """Rows are (radial, tangential_1, tangential_2)."""
        return np.vstack([self.radial, self.tangential_1, self.tangential_2])


def skew(w) -> np.ndarray:
    x, y, z = np.asarray(w, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0


def is_rotation(m, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(np.allclose(m.T @ m, np.eye(3), atol=tol, rtol=0) and abs(np.linalg.det(m) - 1.0) <= tol)


def rodrigues_exp(aa: AxisAngle | tuple) -> np.ndarray:
    axis, angle = aa
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > _AXIS_TOL:
        raise InvalidArgument(f"rotation axis must be unit length, got norm {np.linalg.norm(axis)}")
    k = skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def exp_so3(rotvec) -> np.ndarray:
    """Rotation matrix from a rotation vector (axis times angle)."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-300:
        return np.eye(3)
    return rodrigues_exp(AxisAngle(rotvec / theta, theta))


def rodrigues_log(r) -> AxisAngle:
    """Axis-angle of a rotation, angle in [0, pi]; identity maps to (+z, 0)."""
    r = np.asarray(r, dtype=float)
    w = vee(r)
    s = float(np.linalg.norm(w))
    c = (np.trace(r) - 1.0) / 2.0
    angle = math.atan2(s, c)
    if angle < 1e-12:
        return AxisAngle(GLOBAL_UP.copy(), 0.0)
    if angle < math.pi - 1e-3:
        return AxisAngle(w / s, angle)
    # Near pi the skew part vanishes; recover the axis from the symmetric part.
    sym = (r + r.T) / 2.0
    outer = (sym - c * np.eye(3)) / (1.0 - c)
    col = int(np.argmax(np.diag(outer)))
    axis = outer[:, col] / math.sqrt(outer[col, col])
    axis /= np.linalg.norm(axis)
    if s > 0 and axis @ w < 0:
        axis = -axis
    return AxisAngle(axis, angle)


def log_so3(r) -> np.ndarray:
    axis, angle = rodrigues_log(r)
    return axis * angle


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray
    stamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if not math.isfinite(self.stamp) or self.stamp < 0:
            raise InvalidArgument(f"pose stamp must be finite and non-negative, got {self.stamp}")

    @classmethod
    def identity(cls, stamp: float = 0.0) -> "Pose":
        return cls(np.eye(3), np.zeros(3), stamp)

    def apply(self, points) -> np.ndarray:
        """Map points (N, 3) or (3,) from this pose's local frame to the parent frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self * other; the result keeps self's stamp."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation, self.stamp)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation, self.stamp)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return (
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
            and abs(self.stamp - other.stamp) <= atol
        )


def interpolate_pose(p0: Pose, p1: Pose, t: float) -> Pose:
    """Constant-velocity pose between two stamped poses.

    Rotation follows the geodesic ``R0 exp(w theta s)``; translation is linear in
    the frame of ``p0``, i.e. ``T0 + R0 (s T01)`` with ``T01 = R0^T (T1 - T0)``.
    """
    t0, t1 = p0.stamp, p1.stamp
    if not t1 > t0:
        raise InvalidArgument(f"pose stamps must increase, got {t0} -> {t1}")
    if t < t0 or t > t1:
        raise OutOfRange(f"t={t} outside [{t0}, {t1}]")
    if t == t0:
        return p0
    s = (t - t0) / (t1 - t0)
    r01 = p0.rotation.T @ p1.rotation
    axis, angle = rodrigues_log(r01)
    t01 = p0.rotation.T @ (p1.translation - p0.translation)
    rot = p0.rotation @ rodrigues_exp(AxisAngle(axis, angle * s))
    trans = p0.rotation @ (s * t01) + p0.translation
    return Pose(rot, trans, t)


def interpolate_poses(p0: Pose, p1: Pose, stamps) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`interpolate_pose`; returns rotations (N, 3, 3) and translations (N, 3)."""
    stamps = np.asarray(stamps, dtype=float)
    if not p1.stamp > p0.stamp:
        raise InvalidArgument(f"pose stamps must increase, got {p0.stamp} -> {p1.stamp}")
    if stamps.size and (stamps.min() < p0.stamp or stamps.max() > p1.stamp):
        raise OutOfRange(f"stamps outside [{p0.stamp}, {p1.stamp}]")
    s = (stamps - p0.stamp) / (p1.stamp - p0.stamp)
    axis, angle = rodrigues_log(p0.rotation.T @ p1.rotation)
    k = skew(axis)
    th = angle * s
    rel = np.eye(3) + np.sin(th)[:, None, None] * k + (1 - np.cos(th))[:, None, None] * (k @ k)
    rots = p0.rotation @ rel
    t01 = p0.rotation.T @ (p1.translation - p0.translation)
    trans = p0.translation + (s[:, None] * t01) @ p0.rotation.T
    return rots, trans


def pose_velocity(p0: Pose, p1: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Global linear velocity of the origin and global angular velocity between two poses."""
    dt = p1.stamp - p0.stamp
    if not dt > 0:
        raise InvalidArgument("pose stamps must increase")
    lin = (p1.translation - p0.translation) / dt
    ang = p0.rotation @ log_so3(p0.rotation.T @ p1.rotation) / dt
    return lin, ang


class EgoTrajectory:
    """Time-ordered sensor poses in the global frame, sampled by interpolation."""

    def __init__(self, poses: Sequence[Pose]):
        poses = sorted(poses, key=lambda p: p.stamp)
        stamps = [p.stamp for p in poses]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise InvalidArgument("ego trajectory stamps must be strictly increasing")
        self.poses = list(poses)
        self.stamps = stamps

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    @property
    def start(self) -> float:
        return self.stamps[0]

    @property
    def end(self) -> float:
        return self.stamps[-1]

    def segment(self, t: float) -> tuple[Pose, Pose]:
        if not self.poses or t < self.start - 1e-12 or t > self.end + 1e-12 or len(self.poses) < 2:
            raise MissingPose(f"no ego pose covering t={t}")
        i = bisect.bisect_right(self.stamps, t) - 1
        i = min(max(i, 0), len(self.poses) - 2)
        return self.poses[i], self.poses[i + 1]

    def pose_at(self, t: float) -> Pose:
        p0, p1 = self.segment(t)
        return interpolate_pose(p0, p1, min(max(t, p0.stamp), p1.stamp))

    def velocity_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return pose_velocity(*self.segment(t))


def radial_basis(object_center_global, sensor_origin_global, up=GLOBAL_UP) -> RadialBasis:
    """Radial / azimuthal / polar unit triad for an object seen from a sensor.

    ``tangential_1 = radial x up`` (points to the sensor's right for a level
    ray) and ``tangential_2 = radial x tangential_1`` (points down), so the
    triad (radial, t1, t2) is right-handed.
    """
    d = np.asarray(object_center_global, dtype=float) - np.asarray(sensor_origin_global, dtype=float)
    n = float(np.linalg.norm(d))
    if n <= 1e-3:
        raise DegenerateGeometry("object center coincides with the sensor origin")
    radial = d / n
    aux = np.asarray(up, dtype=float)
    if np.linalg.norm(np.cross(radial, aux)) < _AXIS_TOL:
        aux = GLOBAL_X
    t1 = np.cross(radial, aux)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(radial, t1)
    t2 /= np.linalg.norm(t2)
    return RadialBasis(radial, t1, t2)


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def matrix_to_quaternion(r) -> np.ndarray:
    """(qw, qx, qy, qz) with qw >= 0."""
    from scipy.spatial.transform import Rotation as _R

    x, y, z, w = _R.from_matrix(np.asarray(r, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
