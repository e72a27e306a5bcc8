"""Rigid transforms, rotation helpers and plane parameterizations.

Conventions
-----------
* ``Pose`` maps points from its local frame into the parent frame:
  ``p_parent = R @ p_local + t``.
* Quaternions are stored ``(w, x, y, z)`` with ``w >= 0``.
* Tangent vectors are ordered ``(rotation, translation)``.
* Planes use ``n . p + d = 0`` with a unit normal.

The SO(3) helpers accept arrays with arbitrary leading batch dimensions so the
factor code can linearize whole groups of residuals in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

_SMALL_ANGLE = 1e-6
_NEAR_PI = 1e-3


# ---------------------------------------------------------------------------
# SO(3), batched
# ---------------------------------------------------------------------------


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of ``v`` (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula, (..., 3) -> (..., 3, 3)."""
    w = np.asarray(w, dtype=float)
    theta2 = np.sum(w * w, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = hat(w)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` (..., 3, 3) -> (..., 3).

    Uses ``atan2`` for the angle and a separate axis extraction close to pi,
    where the antisymmetric part of ``R`` vanishes.
    """
    R = np.asarray(R, dtype=float)
    vee = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    cos_t = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    sin_t = 0.5 * np.linalg.norm(vee, axis=-1)
    theta = np.arctan2(sin_t, cos_t)
    small = theta < _SMALL_ANGLE
    safe_sin = np.where(small, 1.0, sin_t)
    scale = np.where(small, 0.5 + theta * theta / 12.0, 0.5 * theta / safe_sin)
    w = scale[..., None] * vee

    near_pi = theta > math.pi - _NEAR_PI
    if np.any(near_pi):
        w = np.array(w, copy=True)
        for idx in zip(*np.nonzero(near_pi)) if w.ndim > 1 else [()]:
            w[idx] = _log_near_pi(R[idx], vee[idx], theta[idx])
    return w


def _log_near_pi(R: np.ndarray, vee: np.ndarray, theta: float) -> np.ndarray:
    # (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T
    B = 0.5 * (R + R.T) - math.cos(theta) * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ vee < 0.0:
        axis = -axis
    return theta * axis


def so3_right_jacobian_inv(w: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3), (..., 3) -> (..., 3, 3)."""
    w = np.asarray(w, dtype=float)
    theta2 = np.sum(w * w, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    coef = np.where(
        small,
        1.0 / 12.0 + theta2 / 720.0,
        1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    K = hat(w)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + 0.5 * K + coef[..., None, None] * (K @ K)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns (w, x, y, z) with w >= 0."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return _normalize_quat(np.array(q))


def _normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 4e-16:  # leave already-unit input bit-identical
        q = q / n
    if q[0] < 0.0:
        q = -q
    return q + 0.0  # drops negative zeros


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform with quaternion ``q = (w, x, y, z)`` and translation ``t``."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = _normalize_quat(self.q)
        t = np.array(self.t, dtype=float).reshape(3) + 0.0
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_rt(cls, R, t) -> Pose:
        pose = cls(rot_to_quat(np.asarray(R, dtype=float)), t)
        return pose

    @classmethod
    def from_matrix(cls, M) -> Pose:
        M = np.asarray(M, dtype=float)
        return cls.from_rt(M[:3, :3], M[:3, 3])

    @cached_property
    def R(self) -> np.ndarray:
        R = quat_to_rot(self.q)
        R.flags.writeable = False
        return R

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def compose(self, other: Pose) -> Pose:
        return Pose.from_rt(self.R @ other.R, self.R @ other.t + self.t)

    __matmul__ = compose

    def inverse(self) -> Pose:
        Rt = self.R.T
        return Pose.from_rt(Rt, -Rt @ self.t)

    def apply(self, p) -> np.ndarray:
        """Map point(s) (..., 3) from the local frame into the parent frame."""
        return np.asarray(p, dtype=float) @ self.R.T + self.t

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.R, other.R, rtol=0.0, atol=atol)
            and np.allclose(self.t, other.t, rtol=0.0, atol=atol)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.q, other.q) and np.array_equal(self.t, other.t))

    def __hash__(self) -> int:
        return hash((self.q.tobytes(), self.t.tobytes()))

    def __repr__(self) -> str:
        return f"Pose(q={self.q.tolist()}, t={self.t.tolist()})"


def pose_exp(v) -> Pose:
    """Retraction ``(omega, rho) -> (Exp(omega), rho)``."""
    v = np.asarray(v, dtype=float)
    return Pose.from_rt(so3_exp(v[:3]), v[3:6])


def pose_log(T: Pose) -> np.ndarray:
    """Inverse of :func:`pose_exp`: ``(Log(R), t)``."""
    return np.concatenate([so3_log(T.R), T.t])


def yaw_pose(x: float, y: float, z: float, yaw: float) -> Pose:
    c, s = math.cos(yaw), math.sin(yaw)
    return Pose.from_rt([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], [x, y, z])


# ---------------------------------------------------------------------------
# Planes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Plane:
    """Hessian normal form ``normal . p + d = 0``."""

    normal: np.ndarray
    d: float

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(3) + 0.0
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "d", float(self.d) + 0.0)

    def distance(self, p) -> np.ndarray:
        """Signed distance(s) of point(s) ``p`` to the plane."""
        return np.asarray(p, dtype=float) @ self.normal + self.d

    def flipped(self) -> Plane:
        return Plane(-self.normal, -self.d)

    @property
    def foot(self) -> np.ndarray:
        """Closest plane point to the origin, independent of the sign convention."""
        return -self.d * self.normal

    def __eq__(self, other) -> bool:
        if not isinstance(other, Plane):
            return NotImplemented
        return bool(np.array_equal(self.normal, other.normal) and self.d == other.d)

    def __repr__(self) -> str:
        return f"Plane(normal={self.normal.tolist()}, d={self.d!r})"


@dataclass(frozen=True)
class WallAngles:
    """Optimizable wall state: normal azimuth/elevation plus plane offset."""

    azimuth: float
    elevation: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.azimuth, self.elevation, self.d])

    @classmethod
    def from_array(cls, a) -> WallAngles:
        return cls(float(a[0]), float(a[1]), float(a[2]))


def angle_normal(azimuth: float, elevation: float) -> np.ndarray:
    ce = math.cos(elevation)
    return np.array([ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation)])


def angles_to_plane(a: WallAngles) -> Plane:
    return Plane(angle_normal(a.azimuth, a.elevation), a.d)


def plane_to_angles(q: Plane) -> WallAngles:
    """Azimuth/elevation of the normal; azimuth is 0 at the poles."""
    nx, ny, nz = q.normal
    horiz = math.hypot(nx, ny)
    elevation = math.atan2(nz, horiz)
    azimuth = 0.0 if horiz < 1e-12 else wrap_angle(math.atan2(ny, nx))
    return WallAngles(azimuth, elevation, q.d)


def transform_plane(T: Pose, q: Plane) -> Plane:
    """Express ``q`` in the frame whose pose (in the plane's frame) is ``T``."""
    return Plane(T.R.T @ q.normal, q.d + float(q.normal @ T.t))


def plane_from_marker(pose: Pose) -> Plane:
    """Board plane of a marker; the normal is the marker's local +z axis."""
    n = pose.R[:, 2]
    return Plane(n, -float(n @ pose.t))


def canonicalize_plane(q: Plane) -> Plane:
    """Sign convention with ``d <= 0``; through-origin ties broken on the normal."""
    if q.d > 0.0:
        return q.flipped()
    if q.d == 0.0:
        for c in q.normal:
            if c != 0.0:
                return q.flipped() if c < 0.0 else q
    return q
