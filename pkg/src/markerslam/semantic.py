"""Wall/room inference from marker poses and loop-event detection."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AmbiguousRoomGeometry, ConfigError, DegenerateRoom, MisclassifiedWalls
from .factors import four_wall_room_center, two_wall_room_center
from .geometry import Plane, canonicalize_plane, plane_from_marker, plane_to_angles
from .map_model import FOUR_WALL, PARALLEL_TOL, TWO_WALL, HierMap, Marker, Room, Wall, planes_parallel

MARKER_REVISIT = "marker_revisit"
WALL_REMATCH = "wall_rematch"


@dataclass
class RoomDictionary:
    """Room labels and the marker ids on their walls; no geometry."""

    entries: list[tuple[str, list[int]]] = field(default_factory=list)

    def __post_init__(self):
        labels = [label for label, _ in self.entries]
        if len(set(labels)) != len(labels):
            raise ConfigError("duplicate room label in dictionary")
        for label, ids in self.entries:
            if len(set(ids)) != len(ids):
                raise ConfigError(f"room {label!r}: duplicate marker id")

    @classmethod
    def parse(cls, text: str, source: str = "<dictionary>") -> RoomDictionary:
        entries: list[tuple[str, list[int]]] = []
        seen: dict[str, int] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"([^:]+?)\s*:\s*(.*)", line)
            if not m:
                raise ConfigError(f"{source}:{lineno}: expected 'label: id,id,...'")
            label, rest = m.group(1).strip(), m.group(2).strip()
            if label in seen:
                raise ConfigError(f"{source}:{lineno}: duplicate label {label!r} (first on line {seen[label]})")
            try:
                ids = [int(tok) for tok in rest.split(",") if tok.strip()]
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: marker ids must be integers") from None
            if not ids:
                raise ConfigError(f"{source}:{lineno}: room {label!r} lists no markers")
            if len(set(ids)) != len(ids):
                raise ConfigError(f"{source}:{lineno}: room {label!r} repeats a marker id")
            seen[label] = lineno
            entries.append((label, ids))
        return cls(entries)

    @classmethod
    def load(cls, path) -> RoomDictionary:
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    def dumps(self) -> str:
        return "".join(f"{label}: {','.join(map(str, ids))}\n" for label, ids in self.entries)


@dataclass(frozen=True)
class LoopEvent:
    kind: str
    subject: int
    keyframe: int


@dataclass
class SemanticConfig:
    angle_gate: float = math.radians(10.0)
    distance_gate: float = 0.3
    revisit_window: int = 30


# ---------------------------------------------------------------------------
# Walls
# ---------------------------------------------------------------------------


def match_wall(candidate: Plane, center: np.ndarray, walls, angle_gate: float, distance_gate: float):
    """First wall (in id order) whose plane agrees with ``candidate`` up to sign
    within the angle gate and passes within ``distance_gate`` of ``center``."""
    cos_gate = math.cos(angle_gate)
    for w in walls:
        plane = w.plane
        if abs(float(plane.normal @ candidate.normal)) < cos_gate:
            continue
        if abs(float(plane.distance(center))) <= distance_gate:
            return w
    return None


def infer_wall(
    m: Marker,
    hmap: HierMap,
    angle_gate: float = math.radians(10.0),
    distance_gate: float = 0.3,
    next_id: int | None = None,
) -> tuple[int, bool]:
    """Attach marker ``m`` to a matching wall or create one.

    Returns ``(wall_id, created)``. A marker already on a wall returns that
    wall unchanged.
    """
    owner = hmap.wall_of_marker(m.id)
    if owner is not None:
        return owner, False
    candidate = plane_from_marker(m.pose)
    w = match_wall(candidate, m.pose.t, hmap.walls.values(), angle_gate, distance_gate)
    if w is not None:
        hmap.attach_marker(w.id, m.id)
        return w.id, False
    wid = next_id if next_id is not None else (max(hmap.walls, default=-1) + 1)
    hmap.add_wall(Wall(wid, plane_to_angles(candidate), [m.id]))
    return wid, True


# ---------------------------------------------------------------------------
# Rooms
# ---------------------------------------------------------------------------


def classify_room(planes: dict[int, Plane]) -> tuple[str, list[int]]:
    """Match distinct walls to a room template.

    Returns ``(TWO_WALL, [a, b])`` or ``(FOUR_WALL, [xa, xb, ya, yb])``.
    Four-wall rooms are split by the dominant horizontal axis of each
    canonicalized normal; walls more than the parallel tolerance off-axis are
    rejected.
    """
    ids = list(planes)
    if len(ids) == 2:
        a, b = (planes[i] for i in ids)
        if planes_parallel(a, b):
            return TWO_WALL, ids
        raise AmbiguousRoomGeometry(f"walls {ids} are not parallel")
    if len(ids) == 4:
        cos_tol = math.cos(PARALLEL_TOL)
        xs, ys = [], []
        for i in ids:
            n = canonicalize_plane(planes[i]).normal
            if abs(n[0]) >= cos_tol:
                xs.append(i)
            elif abs(n[1]) >= cos_tol:
                ys.append(i)
            else:
                raise AmbiguousRoomGeometry(f"wall {i} is not axis-aligned")
        if len(xs) != 2 or len(ys) != 2:
            raise AmbiguousRoomGeometry(f"walls {ids} do not split into two axis pairs")
        return FOUR_WALL, xs + ys
    raise AmbiguousRoomGeometry(f"{len(ids)} distinct walls match no room template")


def room_center(kind: str, planes: list[Plane], anchor_center=None) -> np.ndarray:
    if kind == TWO_WALL:
        return two_wall_room_center(planes[0], planes[1], anchor_center)
    return four_wall_room_center(*planes)


def detect_rooms(
    dictionary: RoomDictionary,
    hmap: HierMap,
    first_seen: dict[int, int] | None = None,
    next_id: int | None = None,
) -> tuple[list[Room], dict[str, str]]:
    """Create rooms for every dictionary entry whose markers are all mapped.

    ``first_seen`` orders markers by first observation (keyframe id); the
    earliest-seen marker of an entry anchors a corridor center. Returns the new
    rooms and, for entries that could not be realized yet, the reason.
    """
    realized = {r.label for r in hmap.rooms.values()}
    new_rooms: list[Room] = []
    pending: dict[str, str] = {}
    rid = next_id if next_id is not None else max(hmap.rooms, default=-1) + 1
    for label, ids in dictionary.entries:
        if label in realized or not all(i in hmap.markers for i in ids):
            continue
        wall_ids: list[int] = []
        for i in ids:
            w = hmap.wall_of_marker(i)
            if w is None:
                break
            if w not in wall_ids:
                wall_ids.append(w)
        else:
            try:
                kind, ordered = classify_room({w: hmap.walls[w].plane for w in wall_ids})
                planes = [hmap.walls[w].plane for w in ordered]
                anchor = None
                if kind == TWO_WALL:
                    order = sorted(ids, key=lambda i: (first_seen or {}).get(i, 0))
                    anchor = order[0]
                    center = room_center(kind, planes, hmap.markers[anchor].center)
                else:
                    center = room_center(kind, planes)
            except (AmbiguousRoomGeometry, DegenerateRoom, MisclassifiedWalls) as exc:
                pending[label] = str(exc)
                continue
            room = Room(rid, kind, center, ordered, label=label, anchor_marker=anchor)
            hmap.add_room(room)
            new_rooms.append(room)
            rid += 1
            continue
        pending[label] = "marker not on a wall"
    return new_rooms, pending


# ---------------------------------------------------------------------------
# Loop events
# ---------------------------------------------------------------------------


def check_loops(
    frame_markers,
    keyframe: int,
    last_seen: dict[int, int],
    wall_support: dict[int, int],
    attached: dict[int, int] | None = None,
    window: int = 30,
) -> list[LoopEvent]:
    """Loop events for one keyframe.

    ``last_seen`` maps marker id to the keyframe index it was last observed at
    (before this keyframe); ``wall_support`` maps wall id to the last keyframe
    index with an observation of any of its markers (before this keyframe);
    ``attached`` maps newly mapped markers to the existing wall they joined.
    Keyframe values are sequence indices, so the gap counts keyframes.
    """
    events = []
    for mid in frame_markers:
        prev = last_seen.get(mid)
        if prev is not None and keyframe - prev > window:
            events.append(LoopEvent(MARKER_REVISIT, mid, keyframe))
    for mid, wid in (attached or {}).items():
        prev = wall_support.get(wid)
        if prev is not None and keyframe - prev > window:
            events.append(LoopEvent(WALL_REMATCH, wid, keyframe))
    return events
