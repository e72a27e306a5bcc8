"""Layered map: keyframes, feature points, markers, walls and rooms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DanglingReference, DuplicateId
from .geometry import Plane, Pose, WallAngles, angles_to_plane

DEFAULT_MARKER_SIZE = 0.17
PARALLEL_TOL = math.radians(10.0)

TWO_WALL = "two_wall"
FOUR_WALL = "four_wall"


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])


DEFAULT_INTRINSICS = Intrinsics(460.0, 460.0, 320.0, 240.0)


@dataclass
class Keyframe:
    id: int
    timestamp: float
    pose: Pose
    intrinsics: Intrinsics = DEFAULT_INTRINSICS


@dataclass
class MapPoint:
    id: int
    position: np.ndarray
    viewing_direction: np.ndarray | None = None
    descriptor: bytes = b""


@dataclass
class Marker:
    id: int
    pose: Pose
    size: float = DEFAULT_MARKER_SIZE

    @property
    def corners(self) -> np.ndarray:
        return marker_corners(self)

    @property
    def center(self) -> np.ndarray:
        return self.pose.t


@dataclass
class Wall:
    id: int
    state: WallAngles
    markers: list[int] = field(default_factory=list)

    @property
    def plane(self) -> Plane:
        return angles_to_plane(self.state)


@dataclass
class Room:
    """Room node; ``anchor_marker`` is the marker whose center fixes a corridor's
    position along its axis (unused for four-wall rooms)."""

    id: int
    kind: str
    center: np.ndarray
    walls: list[int]
    label: str = ""
    anchor_marker: int | None = None


def marker_corners(m: Marker) -> np.ndarray:
    """Corners (4, 3) counter-clockwise seen from the marker's +z side."""
    h = 0.5 * m.size
    local = np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
    return m.pose.apply(local)


def planes_parallel(a: Plane, b: Plane, tol: float = PARALLEL_TOL) -> bool:
    """Parallel up to sign within ``tol`` radians."""
    c = min(1.0, abs(float(a.normal @ b.normal)))
    return math.acos(c) < tol


class _Store(dict):
    def __init__(self, kind: str):
        super().__init__()
        self.kind = kind

    def insert(self, key: int, value) -> None:
        if key in self:
            raise DuplicateId(f"{self.kind} id {key} already present")
        self[key] = value


class HierMap:
    """Id-indexed entity stores with referential-integrity checks on insert."""

    def __init__(self):
        self.keyframes: dict[int, Keyframe] = _Store("keyframe")
        self.points: dict[int, MapPoint] = _Store("point")
        self.markers: dict[int, Marker] = _Store("marker")
        self.walls: dict[int, Wall] = _Store("wall")
        self.rooms: dict[int, Room] = _Store("room")

    def add_keyframe(self, kf: Keyframe) -> Keyframe:
        if self.keyframes:
            last = self.keyframes[next(reversed(self.keyframes))]
            if kf.id <= last.id or kf.timestamp <= last.timestamp:
                raise DuplicateId(
                    f"keyframe {kf.id} (t={kf.timestamp}) does not follow "
                    f"keyframe {last.id} (t={last.timestamp})"
                )
        self.keyframes.insert(kf.id, kf)
        return kf

    def add_point(self, p: MapPoint) -> MapPoint:
        self.points.insert(p.id, p)
        return p

    def add_marker(self, m: Marker) -> Marker:
        if not m.size > 0:
            raise ValueError("marker size must be positive")
        self.markers.insert(m.id, m)
        return m

    def add_wall(self, w: Wall) -> Wall:
        if not w.markers:
            raise DanglingReference(f"wall {w.id} has no markers")
        if len(set(w.markers)) != len(w.markers):
            raise DuplicateId(f"wall {w.id} lists a marker twice")
        missing = [m for m in w.markers if m not in self.markers]
        if missing:
            raise DanglingReference(f"wall {w.id} references unknown markers {missing}")
        self.walls.insert(w.id, w)
        return w

    def add_room(self, r: Room) -> Room:
        expected = {TWO_WALL: 2, FOUR_WALL: 4}.get(r.kind)
        if expected is None or len(r.walls) != expected:
            raise ValueError(f"room {r.id}: kind {r.kind!r} with {len(r.walls)} walls")
        missing = [w for w in r.walls if w not in self.walls]
        if missing:
            raise DanglingReference(f"room {r.id} references unknown walls {missing}")
        if r.anchor_marker is not None and r.anchor_marker not in self.markers:
            raise DanglingReference(f"room {r.id} anchor marker {r.anchor_marker} unknown")
        self.rooms.insert(r.id, r)
        return r

    def attach_marker(self, wall_id: int, marker_id: int) -> None:
        wall = self.get_by_id("wall", wall_id)
        if marker_id not in self.markers:
            raise DanglingReference(f"unknown marker {marker_id}")
        if marker_id in wall.markers:
            raise DuplicateId(f"marker {marker_id} already on wall {wall_id}")
        wall.markers.append(marker_id)

    def get_by_id(self, kind: str, key: int):
        store = {
            "keyframe": self.keyframes,
            "point": self.points,
            "marker": self.markers,
            "wall": self.walls,
            "room": self.rooms,
        }[kind]
        try:
            return store[key]
        except KeyError:
            raise DanglingReference(f"no {kind} with id {key}") from None

    def wall_of_marker(self, marker_id: int) -> int | None:
        for w in self.walls.values():
            if marker_id in w.markers:
                return w.id
        return None

    def audit(self) -> list[str]:
        """Return every referential-integrity violation (empty when consistent)."""
        problems = []
        owners: dict[int, list[int]] = {}
        for w in self.walls.values():
            if not w.markers:
                problems.append(f"wall {w.id}: no markers")
            if len(set(w.markers)) != len(w.markers):
                problems.append(f"wall {w.id}: duplicate marker ids")
            for m in w.markers:
                if m not in self.markers:
                    problems.append(f"wall {w.id}: unknown marker {m}")
                owners.setdefault(m, []).append(w.id)
        for m, ws in owners.items():
            if len(ws) > 1:
                problems.append(f"marker {m}: on several walls {ws}")
        for r in self.rooms.values():
            n = {TWO_WALL: 2, FOUR_WALL: 4}.get(r.kind)
            if n != len(r.walls):
                problems.append(f"room {r.id}: kind {r.kind} with {len(r.walls)} walls")
            for w in r.walls:
                if w not in self.walls:
                    problems.append(f"room {r.id}: unknown wall {w}")
            if r.kind == TWO_WALL and all(w in self.walls for w in r.walls) and len(r.walls) == 2:
                a, b = (self.walls[w].plane for w in r.walls)
                if not planes_parallel(a, b):
                    problems.append(f"room {r.id}: corridor walls not parallel")
        ids = list(self.keyframes)
        stamps = [k.timestamp for k in self.keyframes.values()]
        if ids != sorted(ids) or any(b <= a for a, b in zip(stamps, stamps[1:])):
            problems.append("keyframes: ids/timestamps not strictly increasing")
        for p in self.points.values():
            if not np.all(np.isfinite(p.position)):
                problems.append(f"point {p.id}: non-finite position")
        return problems

    def __iter__(self) -> Iterator:
        yield from (self.keyframes, self.points, self.markers, self.walls, self.rooms)

