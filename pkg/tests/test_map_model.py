from __future__ import annotations

import math

import numpy as np
import pytest

from markerslam.errors import DanglingReference, DuplicateId
from markerslam.geometry import Plane, Pose, WallAngles, plane_from_marker
from markerslam.map_model import (
    DEFAULT_MARKER_SIZE,
    FOUR_WALL,
    TWO_WALL,
    HierMap,
    Intrinsics,
    Keyframe,
    MapPoint,
    Marker,
    Room,
    Wall,
    marker_corners,
    planes_parallel,
)

from conftest import random_pose


def test_default_marker_size_is_17cm():
    assert DEFAULT_MARKER_SIZE == 0.17


def test_corners_identity_pose():
    c = marker_corners(Marker(1, Pose.identity()))
    h = 0.085
    np.testing.assert_allclose(c, [[-h, -h, 0], [h, -h, 0], [h, h, 0], [-h, h, 0]], atol=1e-15)


def test_corners_translation_equivariant():
    base = marker_corners(Marker(1, Pose.identity(), 0.2))
    moved = marker_corners(Marker(1, Pose(t=[1, 2, 3]), 0.2))
    np.testing.assert_allclose(moved, base + [1, 2, 3], atol=1e-15)


def test_corners_random_poses(rng):
    for _ in range(100):
        T = random_pose(rng)
        s = rng.uniform(0.05, 1.0)
        c = marker_corners(Marker(0, T, s))
        np.testing.assert_allclose(c.mean(axis=0), T.t, atol=1e-12)
        q = plane_from_marker(T)
        assert np.max(np.abs(q.distance(c))) < 1e-12
        for i in range(4):
            assert np.linalg.norm(c[i] - c[(i + 1) % 4]) == pytest.approx(s, abs=1e-12)
        assert np.linalg.norm(c[0] - c[2]) == pytest.approx(s * math.sqrt(2), abs=1e-12)


def _small_map() -> HierMap:
    m = HierMap()
    m.add_marker(Marker(1, Pose(t=[1, 0, 0])))
    m.add_marker(Marker(2, Pose(t=[1, 3, 0])))
    m.add_wall(Wall(0, WallAngles(0.0, 0.0, -1.0), [1]))
    m.add_wall(Wall(1, WallAngles(0.0, 0.0, -4.0), [2]))
    return m


def test_insert_and_lookup():
    m = _small_map()
    assert m.get_by_id("marker", 1) is m.markers[1]
    assert m.get_by_id("wall", 0).markers == [1]
    kf = m.add_keyframe(Keyframe(0, 0.0, Pose.identity()))
    assert m.get_by_id("keyframe", 0) == kf
    p = m.add_point(MapPoint(5, np.array([1.0, 2.0, 3.0])))
    assert m.get_by_id("point", 5) is p
    assert m.audit() == []


def test_duplicate_marker():
    m = _small_map()
    with pytest.raises(DuplicateId):
        m.add_marker(Marker(1, Pose.identity()))


def test_wall_with_unknown_marker():
    m = _small_map()
    with pytest.raises(DanglingReference):
        m.add_wall(Wall(5, WallAngles(0, 0, 0), [99]))
    with pytest.raises(DanglingReference):
        m.add_wall(Wall(5, WallAngles(0, 0, 0), []))


def test_room_checks():
    m = _small_map()
    with pytest.raises(DanglingReference):
        m.add_room(Room(0, TWO_WALL, np.zeros(3), [0, 7]))
    with pytest.raises(ValueError):
        m.add_room(Room(0, FOUR_WALL, np.zeros(3), [0, 1]))
    with pytest.raises(DanglingReference):
        m.add_room(Room(0, TWO_WALL, np.zeros(3), [0, 1], anchor_marker=42))
    m.add_room(Room(0, TWO_WALL, np.zeros(3), [0, 1], anchor_marker=1))
    with pytest.raises(DuplicateId):
        m.add_room(Room(0, TWO_WALL, np.zeros(3), [0, 1]))
    assert m.audit() == []


def test_keyframes_strictly_increasing():
    m = HierMap()
    m.add_keyframe(Keyframe(0, 0.0, Pose.identity()))
    with pytest.raises(DuplicateId):
        m.add_keyframe(Keyframe(1, 0.0, Pose.identity()))
    with pytest.raises(DuplicateId):
        m.add_keyframe(Keyframe(0, 1.0, Pose.identity()))


def test_get_missing():
    with pytest.raises(DanglingReference):
        HierMap().get_by_id("room", 3)


def test_attach_and_owner():
    m = _small_map()
    m.add_marker(Marker(3, Pose(t=[1, 1, 0])))
    m.attach_marker(0, 3)
    assert m.wall_of_marker(3) == 0
    with pytest.raises(DuplicateId):
        m.attach_marker(0, 3)
    with pytest.raises(DanglingReference):
        m.attach_marker(0, 77)


def test_audit_reports_violations():
    m = _small_map()
    m.walls[1].markers.append(1)  # marker on two walls, bypassing the checks
    m.add_room(Room(0, TWO_WALL, np.zeros(3), [0, 1]))
    m.walls[1].state = WallAngles(math.pi / 2, 0.0, -4.0)
    problems = m.audit()
    assert any("several walls" in p for p in problems)
    assert any("not parallel" in p for p in problems)


def test_intrinsics_positive():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)


def test_marker_size_positive():
    with pytest.raises(ValueError):
        HierMap().add_marker(Marker(1, Pose.identity(), 0.0))


def test_planes_parallel_either_sign():
    a = Plane([1.0, 0, 0], -1.0)
    b = Plane([-math.cos(0.1), math.sin(0.1), 0], 2.0)
    assert planes_parallel(a, b)
    c = Plane([math.cos(0.2), math.sin(0.2), 0], 0.0)
    assert not planes_parallel(a, c)
