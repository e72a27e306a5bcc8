from __future__ import annotations

import math

import numpy as np
import pytest

from markerslam import factors as F
from markerslam.errors import BehindCamera, DegenerateRoom, MisclassifiedWalls
from markerslam.geometry import Plane, Pose, WallAngles, plane_to_angles, pose_exp, so3_exp
from markerslam.map_model import FOUR_WALL, TWO_WALL, Intrinsics, Room

from conftest import random_pose
from oracles import corridor_center, numeric_jacobian, random_instance, rectangle_center, relative_error


def _x_wall(x: float) -> Plane:
    return Plane([1.0, 0.0, 0.0], -x) if x >= 0 else Plane([-1.0, 0.0, 0.0], x)


# -- odometry / marker observations ---------------------------------------------


def test_odometry_consistent_is_zero(rng):
    for _ in range(20):
        Ti, Z = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(F.odometry_residual(Ti, Ti @ Z, Z), 0.0, atol=1e-12)


def test_odometry_small_translation():
    eps = 1e-3
    Ti = Pose.identity()
    r = F.odometry_residual(Ti, Pose(t=[eps, 0, 0]), Pose.identity())
    np.testing.assert_allclose(r, [0, 0, 0, eps, 0, 0], atol=1e-15)


def test_odometry_first_order_tangent(rng):
    Ti, Z = random_pose(rng), random_pose(rng)
    delta = 1e-5 * rng.normal(size=6)
    r = F.odometry_residual(Ti, Ti @ Z @ pose_exp(delta), Z)
    np.testing.assert_allclose(r, delta, atol=1e-9)


def test_marker_obs_examples(rng):
    T_kf, Z = random_pose(rng), random_pose(rng)
    np.testing.assert_allclose(F.marker_obs_residual(T_kf, T_kf @ Z, Z), 0.0, atol=1e-12)
    shifted = Pose(Z.q, Z.t + [0.01, 0, 0])
    r = F.marker_obs_residual(Pose.identity(), shifted, Z)
    assert np.linalg.norm(r[3:]) == pytest.approx(0.01, abs=1e-12)
    np.testing.assert_allclose(r[:3], 0.0, atol=1e-15)


# -- point projection ------------------------------------------------------------


def test_point_projection_examples():
    K = Intrinsics(500.0, 500.0, 320.0, 240.0)
    np.testing.assert_allclose(F.point_proj_residual(Pose.identity(), [0, 0, 3], K, [320, 240]), 0.0)
    np.testing.assert_allclose(F.point_proj_residual(Pose.identity(), [0.1, 0, 1], K, [370, 240]), 0.0, atol=1e-12)
    with pytest.raises(BehindCamera):
        F.point_proj_residual(Pose.identity(), [0.1, 0, 0], K, [0, 0])
    with pytest.raises(BehindCamera):
        F.point_proj_residual(Pose.identity(), [0.1, 0, -1], K, [0, 0])


# -- marker on wall ----------------------------------------------------------------


def _marker_on_x_wall(x: float, y: float, z: float) -> Pose:
    # board facing -x (into a room on the -x side of the wall x = const)
    R = np.column_stack([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])
    return Pose.from_rt(R, [x, y, z])


def test_marker_wall_zero_on_wall():
    w = plane_to_angles(Plane([1.0, 0.0, 0.0], -4.0))
    np.testing.assert_allclose(F.marker_wall_residual(w, _marker_on_x_wall(4.0, 1.0, 0.5)), 0.0, atol=1e-15)


def test_marker_wall_lifted():
    w = plane_to_angles(Plane([1.0, 0.0, 0.0], -4.0))
    # 0.1 m off the wall toward the room, i.e. along the marker's +z
    r = F.marker_wall_residual(w, _marker_on_x_wall(3.9, 1.0, 0.5))
    np.testing.assert_allclose(r, [0.0, 0.0, 0.1], atol=1e-12)


def test_marker_wall_tilted():
    w = plane_to_angles(Plane([1.0, 0.0, 0.0], -4.0))
    T = _marker_on_x_wall(4.0, 1.0, 0.5)
    tilt = math.radians(5.0)
    T = Pose.from_rt(T.R @ so3_exp([tilt, 0.0, 0.0]), T.t)
    r = F.marker_wall_residual(w, T)
    assert abs(r[0]) < 1e-15
    assert abs(r[1]) == pytest.approx(math.sin(tilt), abs=1e-12)
    assert abs(r[2]) < 1e-12


def test_marker_wall_zero_set(rng):
    for _ in range(50):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        q = Plane(n, rng.uniform(-5, 5))
        # construct a marker on the plane with +z along +-n
        z = n if rng.random() < 0.5 else -n
        x = np.cross([0.3, 0.2, 0.9], z)
        x /= np.linalg.norm(x)
        Rm = np.column_stack([x, np.cross(z, x), z])
        p = q.foot + rng.uniform(-2, 2) * x
        w = plane_to_angles(q)
        assert np.max(np.abs(F.marker_wall_residual(w, Pose.from_rt(Rm, p)))) < 1e-12
        # any off-plane shift or tilt makes it nonzero
        assert np.linalg.norm(F.marker_wall_residual(w, Pose.from_rt(Rm, p + 0.01 * z))) > 1e-3
        tilted = Pose.from_rt(Rm @ so3_exp([0.02, 0.0, 0.0]), p)
        assert np.linalg.norm(F.marker_wall_residual(w, tilted)) > 1e-3


# -- rooms ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "xa, xb, c, expect",
    [
        (1.0, 5.0, [2, 7, 1], [3, 7, 1]),
        (-1.0, 5.0, [0, 4, 0], [2, 4, 0]),
    ],
)
def test_two_wall_center_examples(xa, xb, c, expect):
    np.testing.assert_allclose(F.two_wall_room_center(_x_wall(xa), _x_wall(xb), c), expect, atol=1e-12)


def test_two_wall_center_y_walls():
    a = Plane([0.0, 1.0, 0.0], 0.0)
    b = Plane([0.0, 1.0, 0.0], -6.0)
    np.testing.assert_allclose(F.two_wall_room_center(a, b, [3, 2, 1]), [3, 3, 1], atol=1e-12)


def test_two_wall_center_degenerate():
    with pytest.raises(DegenerateRoom):
        F.two_wall_room_center(_x_wall(-2.0), _x_wall(2.0), [0, 1, 0])


def test_two_wall_center_against_line_oracle(rng):
    for _ in range(200):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        a = Plane(n, -rng.uniform(0, 6))
        b = Plane(n * (1 if rng.random() < 0.5 else -1), 0.0)
        b = Plane(b.normal, -rng.uniform(0, 6))
        k = 0.5 * (a.foot + b.foot)
        if np.linalg.norm(k) < 1e-3:
            continue
        c = rng.uniform(-5, 5, 3)
        np.testing.assert_allclose(F.two_wall_room_center(a, b, c), corridor_center(a, b, c), atol=1e-9)


def test_two_wall_residual():
    wa = plane_to_angles(_x_wall(1.0))
    wb = plane_to_angles(_x_wall(5.0))
    room = Room(0, TWO_WALL, np.array([3.0, 7.0, 1.0]), [0, 1])
    np.testing.assert_allclose(F.two_wall_room_residual(room, wa, wb, [2, 7, 1]), 0.0, atol=1e-12)
    room.center = room.center + [0.1, 0, 0]
    np.testing.assert_allclose(F.two_wall_room_residual(room, wa, wb, [2, 7, 1]), [0.1, 0, 0], atol=1e-12)


def _rect(x0, x1, y0, y1):
    return (
        Plane([1.0, 0, 0], -x0), Plane([1.0, 0, 0], -x1),
        Plane([0, 1.0, 0], -y0), Plane([0, 1.0, 0], -y1),
    )


def test_four_wall_center_examples():
    np.testing.assert_allclose(F.four_wall_room_center(*_rect(0, 4, 0, 6)), [2, 3, 0], atol=1e-12)
    a, b = 1.5, 2.5
    walls = (_x_wall(a), _x_wall(-a), Plane([0, 1.0, 0], -b), Plane([0, -1.0, 0], -b))
    np.testing.assert_allclose(F.four_wall_room_center(*walls), 0.0, atol=1e-12)


def test_four_wall_center_order_invariance(rng):
    for _ in range(20):
        x0, x1, y0, y1 = rng.uniform(-8, 8, 4)
        xa, xb, ya, yb = _rect(x0, x1, y0, y1)
        ref = F.four_wall_room_center(xa, xb, ya, yb)
        np.testing.assert_allclose(F.four_wall_room_center(xb, xa, ya, yb), ref, atol=1e-12)
        np.testing.assert_allclose(F.four_wall_room_center(xa, xb, yb, ya), ref, atol=1e-12)


def test_four_wall_misclassified():
    xa, xb, ya, yb = _rect(0, 4, 0, 6)
    with pytest.raises(MisclassifiedWalls):
        F.four_wall_room_center(xa, ya, xb, yb)
    tilted = Plane([math.cos(0.3), math.sin(0.3), 0.0], -4.0)
    with pytest.raises(MisclassifiedWalls):
        F.four_wall_room_center(xa, tilted, ya, yb)


def test_four_wall_residual_linearity():
    walls = [plane_to_angles(p) for p in _rect(0, 4, 0, 6)]
    room = Room(0, FOUR_WALL, np.array([2.0, 3.0, 0.0]), [0, 1, 2, 3])
    np.testing.assert_allclose(F.four_wall_room_residual(room, walls), 0.0, atol=1e-12)
    eps = 0.02
    walls[1] = WallAngles(walls[1].azimuth, walls[1].elevation, walls[1].d - eps)  # x = 4 + eps
    np.testing.assert_allclose(F.four_wall_room_residual(room, walls), [-eps / 2, 0, 0], atol=1e-12)


def test_four_wall_against_rectangle_oracle(rng):
    for _ in range(200):
        alpha = rng.uniform(-0.15, 0.15)
        nx = np.array([math.cos(alpha), math.sin(alpha), 0.0])
        ny = np.array([-math.sin(alpha), math.cos(alpha), 0.0])
        planes = []
        for n in (nx, nx, ny, ny):
            s = 1.0 if rng.random() < 0.5 else -1.0
            planes.append(Plane(s * n, -rng.uniform(0.0, 8.0)))
        np.testing.assert_allclose(F.four_wall_room_center(*planes), rectangle_center(*planes), atol=1e-9)


# -- Jacobians ----------------------------------------------------------------------


@pytest.mark.parametrize("kind", F.KINDS)
def test_jacobian_finite_differences(kind):
    rng = np.random.default_rng(100 + F.KINDS.index(kind))
    worst = 0.0
    for _ in range(100):
        f, states = random_instance(kind, rng)
        worst = max(worst, relative_error(F.factor_jacobian(f, states), numeric_jacobian(f, states)))
    assert worst < 1e-4


def test_odometry_jacobian_nondegenerate(rng):
    Ti, Z = random_pose(rng), random_pose(rng)
    f = F.Factor(F.ODOMETRY, ((F.KF, 0), (F.KF, 1)), Z, np.eye(6))
    Ji, Jj = F.factor_jacobian(f, {(F.KF, 0): Ti, (F.KF, 1): Ti @ Z})
    assert np.linalg.matrix_rank(Ji) == 6 and np.linalg.matrix_rank(Jj) == 6


def test_room2_marker_jacobian_is_orthogonal_projector(rng):
    f, states = random_instance(F.ROOM2, rng)
    J = F.factor_jacobian(f, states)
    walls = [F.angles_to_plane(states[k]) for k in f.variables[1:3]]
    k = 0.5 * (walls[0].foot + walls[1].foot)
    u = k / np.linalg.norm(k)
    Rm = states[f.variables[3]].R
    # d eta / d c is the projector I - u u^T, and c moves by R_m rho
    np.testing.assert_allclose(J[3][:, 3:], -(np.eye(3) - np.outer(u, u)) @ Rm, atol=1e-12)
    np.testing.assert_array_equal(J[3][:, :3], 0.0)


def test_room4_has_no_marker_argument():
    assert F.MARKER not in F.SIGNATURE[F.ROOM4]


# -- Factor validation ---------------------------------------------------------------


def test_factor_information_checks():
    keys = ((F.WALL, 0), (F.MARKER, 0))
    with pytest.raises(ValueError):
        F.Factor(F.MARKER_WALL, keys, None, np.eye(2))
    with pytest.raises(ValueError):
        F.Factor(F.MARKER_WALL, keys, None, np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(ValueError):
        F.Factor(F.MARKER_WALL, keys, None, -np.eye(3))
    with pytest.raises(ValueError):
        F.Factor(F.MARKER_WALL, keys[::-1], None, np.eye(3))


def test_default_information_values():
    info = F.default_information()
    np.testing.assert_array_equal(np.diag(info[F.ODOMETRY]), [100] * 3 + [400] * 3)
    np.testing.assert_array_equal(np.diag(info[F.MARKER_OBS]), [100] * 3 + [400] * 3)
    np.testing.assert_array_equal(info[F.POINT_PROJ], np.eye(2))
    np.testing.assert_array_equal(info[F.MARKER_WALL], 100 * np.eye(3))
    np.testing.assert_array_equal(info[F.ROOM2], 50 * np.eye(3))
    np.testing.assert_array_equal(info[F.ROOM4], 50 * np.eye(3))
