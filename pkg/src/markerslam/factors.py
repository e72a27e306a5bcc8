"""Residuals and Jacobians for every edge type of the layered graph.

Each factor kind has one batched linearization routine operating on stacked
arrays (the optimizer calls these once per kind per iteration) and thin
single-factor wrappers that take geometry objects.

Jacobians are taken with respect to the local parameterization of each
variable:

* poses (keyframes, markers): right perturbation ``T <- T * pose_exp(delta)``,
  ``delta = (omega, rho)``, so ``R <- R Exp(omega)`` and ``t <- t + R rho``;
* walls: additive on ``(azimuth, elevation, d)``;
* room centers and points: additive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import BehindCamera, DegenerateRoom, MisclassifiedWalls
from .geometry import (
    Plane,
    Pose,
    WallAngles,
    angles_to_plane,
    hat,
    so3_log,
    so3_right_jacobian_inv,
)
from .map_model import PARALLEL_TOL, Intrinsics, Room

ODOMETRY = "odometry"
MARKER_OBS = "marker_obs"
POINT_PROJ = "point_proj"
MARKER_WALL = "marker_wall"
ROOM2 = "room2"
ROOM4 = "room4"

KINDS = (ODOMETRY, MARKER_OBS, POINT_PROJ, MARKER_WALL, ROOM2, ROOM4)
RESIDUAL_DIM = {ODOMETRY: 6, MARKER_OBS: 6, POINT_PROJ: 2, MARKER_WALL: 3, ROOM2: 3, ROOM4: 3}

# variable type prefixes of a VarKey = (type, id)
KF, MARKER, POINT, WALL, ROOM = "kf", "marker", "point", "wall", "room"
VAR_DIM = {KF: 6, MARKER: 6, POINT: 3, WALL: 3, ROOM: 3}
POSE_TYPES = (KF, MARKER)

SIGNATURE = {
    ODOMETRY: (KF, KF),
    MARKER_OBS: (KF, MARKER),
    POINT_PROJ: (KF, POINT),
    MARKER_WALL: (WALL, MARKER),
    ROOM2: (ROOM, WALL, WALL, MARKER),
    ROOM4: (ROOM, WALL, WALL, WALL, WALL),
}

MIN_DEPTH = 1e-6
MIN_ROOM_AXIS = 1e-9


def default_information() -> dict[str, np.ndarray]:
    return {
        ODOMETRY: np.diag([100.0] * 3 + [400.0] * 3),
        MARKER_OBS: np.diag([100.0] * 3 + [400.0] * 3),
        POINT_PROJ: np.eye(2),
        MARKER_WALL: 100.0 * np.eye(3),
        ROOM2: 50.0 * np.eye(3),
        ROOM4: 50.0 * np.eye(3),
    }


@dataclass
class Factor:
    """One weighted residual.

    ``measurement`` is a :class:`Pose` for odometry/marker_obs, a
    ``(pixel, Intrinsics)`` pair for point projections and ``None`` for the
    semantic factors, which carry no measurement.
    """

    kind: str
    variables: tuple
    measurement: Any
    information: np.ndarray

    def __post_init__(self):
        m = RESIDUAL_DIM[self.kind]
        info = np.asarray(self.information, dtype=float)
        if info.shape != (m, m):
            raise ValueError(f"{self.kind}: information must be {m}x{m}")
        if not np.allclose(info, info.T, rtol=0.0, atol=1e-12):
            raise ValueError(f"{self.kind}: information not symmetric")
        try:
            np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            raise ValueError(f"{self.kind}: information not positive definite") from None
        sig = SIGNATURE[self.kind]
        if len(self.variables) != len(sig) or any(v[0] != s for v, s in zip(self.variables, sig)):
            raise ValueError(f"{self.kind}: variables {self.variables} do not match {sig}")
        self.information = info


# ---------------------------------------------------------------------------
# Batched linearization
# ---------------------------------------------------------------------------


def _normal_and_derivs(w: np.ndarray):
    phi, theta = w[:, 0], w[:, 1]
    cp, sp, ct, st = np.cos(phi), np.sin(phi), np.cos(theta), np.sin(theta)
    n = np.stack([ct * cp, ct * sp, st], axis=1)
    n_phi = np.stack([-ct * sp, ct * cp, np.zeros_like(ct)], axis=1)
    n_theta = np.stack([-st * cp, -st * sp, ct], axis=1)
    return n, n_phi, n_theta


def lin_between(Ri, ti, Rj, tj, Rz, tz):
    """``r = log(Z^-1 Ti^-1 Tj)`` with Jacobians wrt Ti and Tj."""
    n = len(Ri)
    RiT = np.swapaxes(Ri, 1, 2)
    RzT = np.swapaxes(Rz, 1, 2)
    RzT_RiT = RzT @ RiT
    RE = RzT_RiT @ Rj
    a = np.einsum("nij,nj->ni", RiT, tj - ti)
    tE = np.einsum("nij,nj->ni", RzT, a - tz)
    rw = so3_log(RE)
    r = np.concatenate([rw, tE], axis=1)

    Jrinv = so3_right_jacobian_inv(rw)
    Jj = np.zeros((n, 6, 6))
    Jj[:, :3, :3] = Jrinv
    Jj[:, 3:, 3:] = RE
    Ji = np.zeros((n, 6, 6))
    Ji[:, :3, :3] = -Jrinv @ np.swapaxes(RE, 1, 2) @ RzT
    Ji[:, 3:, :3] = RzT @ hat(a)
    Ji[:, 3:, 3:] = -RzT
    return r, [Ji, Jj], np.ones(n, dtype=bool)


def lin_marker_wall(w, Rm, tm):
    """Wall normal tangential components and marker-to-wall distance, both in
    the marker frame, with the wall sign aligned to the marker's +z."""
    n_, n_phi, n_theta = _normal_and_derivs(w)
    s = np.where(np.einsum("ni,ni->n", n_, Rm[:, :, 2]) >= 0.0, 1.0, -1.0)
    ns = s[:, None] * n_
    RmT = np.swapaxes(Rm, 1, 2)
    v = np.einsum("nij,nj->ni", RmT, ns)
    dist = s * w[:, 2] + np.einsum("ni,ni->n", ns, tm)
    r = np.stack([v[:, 0], v[:, 1], dist], axis=1)

    Jw = np.zeros((len(w), 3, 3))
    Jw[:, :2, 0] = s[:, None] * np.einsum("nij,nj->ni", RmT, n_phi)[:, :2]
    Jw[:, :2, 1] = s[:, None] * np.einsum("nij,nj->ni", RmT, n_theta)[:, :2]
    Jw[:, 2, 0] = s * np.einsum("ni,ni->n", n_phi, tm)
    Jw[:, 2, 1] = s * np.einsum("ni,ni->n", n_theta, tm)
    Jw[:, 2, 2] = s
    Jm = np.zeros((len(w), 3, 6))
    Jm[:, :2, :3] = hat(v)[:, :2, :]
    Jm[:, 2, 3:] = np.einsum("ni,nij->nj", ns, Rm)
    return r, [Jw, Jm], np.ones(len(w), dtype=bool)


def lin_point_proj(Rk, tk, x, K, z):
    """Pinhole reprojection error; factors with depth <= MIN_DEPTH are
    returned with zero residual and Jacobian and ``valid`` False."""
    n = len(Rk)
    RkT = np.swapaxes(Rk, 1, 2)
    p = np.einsum("nij,nj->ni", RkT, x - tk)
    depth = p[:, 2]
    valid = depth > MIN_DEPTH
    Z = np.where(valid, depth, 1.0)
    fx, fy, cx, cy = K[:, 0], K[:, 1], K[:, 2], K[:, 3]
    u = fx * p[:, 0] / Z + cx
    v = fy * p[:, 1] / Z + cy
    r = np.stack([u, v], axis=1) - z
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = fx / Z
    dpi[:, 0, 2] = -fx * p[:, 0] / (Z * Z)
    dpi[:, 1, 1] = fy / Z
    dpi[:, 1, 2] = -fy * p[:, 1] / (Z * Z)
    Jk = np.zeros((n, 2, 6))
    Jk[:, :, :3] = dpi @ hat(p)
    Jk[:, :, 3:] = -dpi
    Jx = dpi @ RkT
    r[~valid] = 0.0
    Jk[~valid] = 0.0
    Jx[~valid] = 0.0
    return r, [Jk, Jx], valid


def _foot_and_jac(w):
    """Foot point ``-d n`` of each wall and its Jacobian wrt (phi, theta, d)."""
    n_, n_phi, n_theta = _normal_and_derivs(w)
    d = w[:, 2:3]
    foot = -d * n_
    J = np.stack([-d * n_phi, -d * n_theta, -n_], axis=2)
    return foot, J


def lin_room2(rc, wa, wb, Rm, tm):
    """Corridor center residual ``rc - eta(walls, c)`` with ``c`` the anchor
    marker center; degenerate corridors (``|k|`` ~ 0) are flagged invalid."""
    n = len(rc)
    fa, Ja = _foot_and_jac(wa)
    fb, Jb = _foot_and_jac(wb)
    k = 0.5 * (fa + fb)
    knorm = np.linalg.norm(k, axis=1)
    valid = knorm >= MIN_ROOM_AXIS
    kn = np.where(valid, knorm, 1.0)
    u = k / kn[:, None]
    c = tm
    cu = np.einsum("ni,ni->n", c, u)
    eta = k + c - cu[:, None] * u
    r = rc - eta

    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    P = eye - u[:, :, None] * u[:, None, :]
    A = u[:, :, None] * c[:, None, :] + cu[:, None, None] * eye
    deta_dk = eye - A @ P / kn[:, None, None]
    Jr = np.array(eye)
    Jwa = -0.5 * deta_dk @ Ja
    Jwb = -0.5 * deta_dk @ Jb
    Jm = np.zeros((n, 3, 6))
    Jm[:, :, 3:] = -P @ Rm
    out = [Jr, Jwa, Jwb, Jm]
    r[~valid] = 0.0
    for J in out:
        J[~valid] = 0.0
    return r, out, valid


def lin_room4(rc, w1, w2, w3, w4):
    """Four-wall room residual ``rc - sum(foot_i) / 2``."""
    n = len(rc)
    out = [np.array(np.broadcast_to(np.eye(3), (n, 3, 3)))]
    rho = np.zeros((n, 3))
    for w in (w1, w2, w3, w4):
        f, J = _foot_and_jac(w)
        rho += 0.5 * f
        out.append(-0.5 * J)
    return rc - rho, out, np.ones(n, dtype=bool)


# ---------------------------------------------------------------------------
# Single-factor API
# ---------------------------------------------------------------------------


def _R(T: Pose) -> np.ndarray:
    return T.R[None]


def _t(T: Pose) -> np.ndarray:
    return T.t[None]


def odometry_residual(T_i: Pose, T_j: Pose, Z_ij: Pose) -> np.ndarray:
    return lin_between(_R(T_i), _t(T_i), _R(T_j), _t(T_j), _R(Z_ij), _t(Z_ij))[0][0]


def marker_obs_residual(T_kf: Pose, T_m: Pose, Z: Pose) -> np.ndarray:
    return lin_between(_R(T_kf), _t(T_kf), _R(T_m), _t(T_m), _R(Z), _t(Z))[0][0]


def point_proj_residual(T_kf: Pose, x, intrinsics: Intrinsics, z) -> np.ndarray:
    r, _, valid = lin_point_proj(
        _R(T_kf),
        _t(T_kf),
        np.asarray(x, dtype=float)[None],
        intrinsics.as_array()[None],
        np.asarray(z, dtype=float)[None],
    )
    if not valid[0]:
        raise BehindCamera("point at or behind the image plane")
    return r[0]


def marker_wall_residual(w: WallAngles, T_m: Pose) -> np.ndarray:
    return lin_marker_wall(w.as_array()[None], _R(T_m), _t(T_m))[0][0]


def two_wall_room_center(w_a: Plane, w_b: Plane, c) -> np.ndarray:
    """Midpoint between two parallel walls along their normal, with the
    remaining coordinates taken from the marker center ``c``."""
    k = 0.5 * (w_a.foot + w_b.foot)
    kn = float(np.linalg.norm(k))
    if kn < MIN_ROOM_AXIS:
        raise DegenerateRoom("walls are mirror-symmetric about the origin")
    u = k / kn
    c = np.asarray(c, dtype=float)
    return k + c - (c @ u) * u


def two_wall_room_residual(r: Room, w_a: WallAngles, w_b: WallAngles, c) -> np.ndarray:
    return np.asarray(r.center, dtype=float) - two_wall_room_center(
        angles_to_plane(w_a), angles_to_plane(w_b), c
    )


def _check_axis_pair(a: Plane, b: Plane, axis: int, label: str) -> None:
    cos_tol = np.cos(PARALLEL_TOL)
    for p in (a, b):
        if abs(p.normal[axis]) < cos_tol:
            raise MisclassifiedWalls(f"{label}-wall normal {p.normal.tolist()} is off-axis")
    if abs(float(a.normal @ b.normal)) < cos_tol:
        raise MisclassifiedWalls(f"{label}-walls are not parallel")


def four_wall_room_center(w_xa: Plane, w_xb: Plane, w_ya: Plane, w_yb: Plane) -> np.ndarray:
    _check_axis_pair(w_xa, w_xb, 0, "x")
    _check_axis_pair(w_ya, w_yb, 1, "y")
    q_x = 0.5 * (w_xa.foot + w_xb.foot)
    q_y = 0.5 * (w_ya.foot + w_yb.foot)
    return q_x + q_y


def four_wall_room_residual(r: Room, walls: Sequence[WallAngles]) -> np.ndarray:
    return np.asarray(r.center, dtype=float) - four_wall_room_center(
        *(angles_to_plane(w) for w in walls)
    )


# ---------------------------------------------------------------------------
# Generic access by Factor
# ---------------------------------------------------------------------------


def _as_pose_arrays(value) -> tuple[np.ndarray, np.ndarray]:
    return value.R[None], value.t[None]


def _as_vec(value) -> np.ndarray:
    if isinstance(value, WallAngles):
        return value.as_array()[None]
    return np.asarray(value, dtype=float).reshape(1, 3)


def linearize_one(f: Factor, states) -> tuple[np.ndarray, list[np.ndarray], bool]:
    """Residual, Jacobian blocks (one per variable) and validity of ``f``
    evaluated at ``states`` (a mapping from variable key to value)."""
    vals = [states[v] for v in f.variables]
    if f.kind in (ODOMETRY, MARKER_OBS):
        Z = f.measurement
        r, J, ok = lin_between(*_as_pose_arrays(vals[0]), *_as_pose_arrays(vals[1]), Z.R[None], Z.t[None])
    elif f.kind == POINT_PROJ:
        z, intr = f.measurement
        r, J, ok = lin_point_proj(
            *_as_pose_arrays(vals[0]), _as_vec(vals[1]), intr.as_array()[None], np.asarray(z, float)[None]
        )
    elif f.kind == MARKER_WALL:
        r, J, ok = lin_marker_wall(_as_vec(vals[0]), *_as_pose_arrays(vals[1]))
    elif f.kind == ROOM2:
        r, J, ok = lin_room2(_as_vec(vals[0]), _as_vec(vals[1]), _as_vec(vals[2]), *_as_pose_arrays(vals[3]))
    elif f.kind == ROOM4:
        r, J, ok = lin_room4(*(_as_vec(v) for v in vals))
    else:
        raise ValueError(f"unknown factor kind {f.kind!r}")
    return r[0], [j[0] for j in J], bool(ok[0])


def factor_residual(f: Factor, states) -> np.ndarray:
    return linearize_one(f, states)[0]


def factor_jacobian(f: Factor, states) -> list[np.ndarray]:
    return linearize_one(f, states)[1]
