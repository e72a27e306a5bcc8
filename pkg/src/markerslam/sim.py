"""Synthetic worlds, scripted trajectories and noisy observation streams.

World and trajectory files are JSON documents carrying ``format_version``.
Observation streams persist as JSON Lines: one header record, then one record
per frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    ConfigError,
    DanglingReference,
    DuplicateMarkerId,
    MalformedLine,
    MarkerOffWall,
    TrajectoryCollision,
)
from .geometry import Plane, Pose, plane_to_angles, pose_exp, wrap_angle
from .map_model import DEFAULT_INTRINSICS, DEFAULT_MARKER_SIZE, TWO_WALL, HierMap, Intrinsics, MapPoint, Marker, Room, Wall
from .semantic import RoomDictionary, classify_room, room_center

FORMAT_VERSION = 1

# camera z forward, x right, y down; robot x forward, z up
CAMERA_IN_ROBOT = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

_AXES = {
    "+x": (np.array([1.0, 0, 0]), np.array([0, 1.0, 0])),
    "-x": (np.array([-1.0, 0, 0]), np.array([0, 1.0, 0])),
    "+y": (np.array([0, 1.0, 0]), np.array([1.0, 0, 0])),
    "-y": (np.array([0, -1.0, 0]), np.array([1.0, 0, 0])),
}
_UP = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WallRect:
    """Vertical rectangle. ``normal`` names the axis the free side faces.

    In-wall coordinates: ``u`` runs along the horizontal wall axis (+y for
    x-facing walls, +x for y-facing walls) from ``corner``; ``v`` runs up.
    """

    id: int
    corner: tuple
    extent: tuple
    normal: str

    def __post_init__(self):
        if self.normal not in _AXES:
            raise ConfigError(f"wall {self.id}: normal must be one of {sorted(_AXES)}")
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ConfigError(f"wall {self.id}: extent must be positive")

    @property
    def n(self) -> np.ndarray:
        return _AXES[self.normal][0]

    @property
    def e1(self) -> np.ndarray:
        return _AXES[self.normal][1]

    def point(self, u: float, v: float) -> np.ndarray:
        return np.asarray(self.corner, dtype=float) + u * self.e1 + v * _UP

    @property
    def plane(self) -> Plane:
        return Plane(self.n, -float(self.n @ np.asarray(self.corner, dtype=float)))

    def crossed_by(self, a: np.ndarray, b: np.ndarray) -> bool:
        plane = self.plane
        da, db = float(plane.distance(a)), float(plane.distance(b))
        if da * db > 0 or da == db:
            return False
        s = da / (da - db)
        p = a + s * (b - a) - np.asarray(self.corner, dtype=float)
        u, v = float(p @ self.e1), float(p[2])
        return 0.0 <= u <= self.extent[0] and 0.0 <= v <= self.extent[1]


@dataclass(frozen=True)
class MarkerPlacement:
    marker_id: int
    wall: int
    offset: tuple
    size: float = DEFAULT_MARKER_SIZE


@dataclass
class WorldSpec:
    walls: list[WallRect]
    markers: list[MarkerPlacement]
    rooms: list[tuple[str, list[int]]] = field(default_factory=list)
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))


@dataclass(frozen=True)
class Waypoint:
    position: tuple
    yaw: float
    hold: float = 0.0


@dataclass
class TrajectorySpec:
    waypoints: list[Waypoint]
    speed: float = 0.5
    rate: float = 10.0
    yaw_rate: float = 0.5

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ConfigError("trajectory needs at least 2 waypoints")
        if not (self.speed > 0 and self.rate > 0 and self.yaw_rate > 0):
            raise ConfigError("speed, rate and yaw_rate must be positive")


@dataclass
class NoiseSpec:
    """Observation noise and sensor gates.

    ``odom_trans`` / ``odom_rot`` are per-frame sigmas; either a scalar
    (isotropic) or three values along the robot axes (forward, left, up), the
    rotation ones being roll, pitch and yaw.
    """

    odom_trans: float | tuple = 0.0
    odom_rot: float | tuple = 0.0
    marker_trans: float = 0.0
    marker_rot: float = 0.0
    pixel: float = 0.0
    max_range: float = 6.0
    fov_half_angle: float = 0.6
    seed: int = 0
    intrinsics: Intrinsics = DEFAULT_INTRINSICS

    def __post_init__(self):
        sig = (*np.ravel(self.odom_trans), *np.ravel(self.odom_rot), self.marker_trans, self.marker_rot, self.pixel)
        if np.size(self.odom_trans) not in (1, 3) or np.size(self.odom_rot) not in (1, 3):
            raise ConfigError("odometry sigmas must be a scalar or three values")
        if any(s < 0 for s in sig):
            raise ConfigError("noise sigmas must be non-negative")
        if not self.max_range > 0:
            raise ConfigError("max_range must be positive")
        if not 0 < self.fov_half_angle < math.pi / 2:
            raise ConfigError("fov_half_angle must lie in (0, pi/2)")

    def odometry_sigmas(self) -> np.ndarray:
        """Sigmas of the 6-vector tangent noise in camera axes (rotation first)."""
        C = np.abs(CAMERA_IN_ROBOT.T)
        rot = np.broadcast_to(np.asarray(self.odom_rot, dtype=float), (3,))
        trans = np.broadcast_to(np.asarray(self.odom_trans, dtype=float), (3,))
        return np.concatenate([C @ rot, C @ trans])


@dataclass
class World:
    spec: WorldSpec
    truth: HierMap
    dictionary: RoomDictionary
    walls: dict[int, WallRect]


@dataclass
class FrameObservation:
    timestamp: float
    odometry: Pose
    markers: list[tuple[int, Pose, float]]
    points: list[tuple[int, np.ndarray]]
    ground_truth: Pose | None = None


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------


def marker_pose_on_wall(rect: WallRect, u: float, v: float) -> Pose:
    """+z along the wall normal, x horizontal, y up."""
    z = rect.n
    x = np.cross(_UP, z)
    y = np.cross(z, x)
    return Pose.from_rt(np.column_stack([x, y, z]), rect.point(u, v))


def build_world(spec: WorldSpec) -> World:
    rects: dict[int, WallRect] = {}
    for w in spec.walls:
        if w.id in rects:
            raise ConfigError(f"duplicate wall id {w.id}")
        rects[w.id] = w
    truth = HierMap()
    on_wall: dict[int, list[int]] = {}
    for p in spec.markers:
        if p.marker_id in truth.markers:
            raise DuplicateMarkerId(f"marker id {p.marker_id} placed twice")
        rect = rects.get(p.wall)
        if rect is None:
            raise MarkerOffWall(f"marker {p.marker_id}: unknown wall {p.wall}")
        h = 0.5 * p.size
        u, v = p.offset
        if not (p.size > 0 and h <= u <= rect.extent[0] - h and h <= v <= rect.extent[1] - h):
            raise MarkerOffWall(f"marker {p.marker_id} does not fit inside wall {p.wall}")
        truth.add_marker(Marker(p.marker_id, marker_pose_on_wall(rect, u, v), p.size))
        on_wall.setdefault(p.wall, []).append(p.marker_id)
    # rectangles sharing one plane and facing (e.g. split by a doorway) form one wall
    groups: dict[tuple, list[int]] = {}
    for wid in sorted(on_wall):
        r = rects[wid]
        groups.setdefault((r.normal, round(r.plane.d, 9)), []).append(wid)
    for members in sorted(groups.values()):
        ids = [m for wid in members for m in on_wall[wid]]
        truth.add_wall(Wall(members[0], plane_to_angles(rects[members[0]].plane), ids))
    for i, x in enumerate(np.asarray(spec.points, dtype=float).reshape(-1, 3)):
        truth.add_point(MapPoint(i, x.copy()))

    dictionary = RoomDictionary([(label, list(ids)) for label, ids in spec.rooms])
    for rid, (label, ids) in enumerate(dictionary.entries):
        missing = [i for i in ids if i not in truth.markers]
        if missing:
            raise DanglingReference(f"room {label!r} lists unplaced markers {missing}")
        wall_ids = list(dict.fromkeys(truth.wall_of_marker(i) for i in ids))
        kind, ordered = classify_room({w: truth.walls[w].plane for w in wall_ids})
        planes = [truth.walls[w].plane for w in ordered]
        anchor = ids[0] if kind == TWO_WALL else None
        center = room_center(kind, planes, truth.markers[anchor].center if anchor is not None else None)
        truth.add_room(Room(rid, kind, center, ordered, label=label, anchor_marker=anchor))
    return World(spec, truth, dictionary, rects)


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------


def robot_to_camera(position, yaw: float) -> Pose:
    c, s = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    p = np.zeros(3)
    p[: len(position)] = position
    return Pose.from_rt(Rz @ CAMERA_IN_ROBOT, p)


def _timeline(traj: TrajectorySpec):
    """Piecewise segments ``(t0, t1, p0, p1, yaw0, dyaw)``."""
    segs = []
    t = 0.0
    wps = traj.waypoints
    for i, wp in enumerate(wps):
        p = np.zeros(3)
        p[: len(wp.position)] = wp.position
        if wp.hold > 0:
            segs.append((t, t + wp.hold, p, p, wp.yaw, 0.0))
            t += wp.hold
        if i + 1 < len(wps):
            nxt = wps[i + 1]
            q = np.zeros(3)
            q[: len(nxt.position)] = nxt.position
            dyaw = wrap_angle(nxt.yaw - wp.yaw)
            dur = max(float(np.linalg.norm(q - p)) / traj.speed, abs(dyaw) / traj.yaw_rate)
            if dur > 0:
                segs.append((t, t + dur, p, q, wp.yaw, dyaw))
                t += dur
    return segs, t


def sample_trajectory(traj: TrajectorySpec) -> list[tuple[float, Pose]]:
    """Ground-truth camera poses at every frame time in ``[0, duration]``."""
    segs, total = _timeline(traj)
    n = int(math.floor(total * traj.rate + 1e-9)) + 1
    out = []
    k = 0
    for i in range(n):
        t = i / traj.rate
        while k + 1 < len(segs) and t > segs[k][1]:
            k += 1
        t0, t1, p0, p1, y0, dy = segs[k] if segs else (0.0, 0.0, np.zeros(3), np.zeros(3), traj.waypoints[0].yaw, 0.0)
        s = 0.0 if t1 <= t0 else min(1.0, max(0.0, (t - t0) / (t1 - t0)))
        out.append((t, robot_to_camera(p0 + s * (p1 - p0), y0 + s * dy)))
    return out


def check_collisions(world: World, samples: list[tuple[float, Pose]]) -> None:
    for (ta, a), (_, b) in zip(samples, samples[1:]):
        for rect in world.walls.values():
            if rect.crossed_by(a.t, b.t):
                raise TrajectoryCollision(f"trajectory crosses wall {rect.id} near t={ta:.3f}")


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


def _noise(seed: int, frame: int, channel: int, key: int, sigmas) -> np.ndarray:
    # independent stream per (frame, channel, entity) so that adding or
    # removing detections never changes the noise on the others
    rng = np.random.default_rng([seed, frame, channel, key])
    return rng.standard_normal(len(sigmas)) * np.asarray(sigmas, dtype=float)


def _perturb(T: Pose, noise: np.ndarray) -> Pose:
    if not np.any(noise):
        return T
    return T.compose(pose_exp(noise))


def marker_visible(cam: Pose, m: Marker, noise: NoiseSpec) -> bool:
    ray = m.center - cam.t
    dist = float(np.linalg.norm(ray))
    if dist == 0.0 or dist > noise.max_range:
        return False
    axis = cam.R[:, 2]
    if float(axis @ ray) / dist < math.cos(noise.fov_half_angle):
        return False
    return float(m.pose.R[:, 2] @ ray) < 0.0


def project(cam: Pose, x: np.ndarray, K: Intrinsics):
    pc = cam.R.T @ (x - cam.t)
    if pc[2] <= 1e-6:
        return None, pc
    return np.array([K.fx * pc[0] / pc[2] + K.cx, K.fy * pc[1] / pc[2] + K.cy]), pc


def point_visible(cam: Pose, x: np.ndarray, noise: NoiseSpec):
    K = noise.intrinsics
    uv, pc = project(cam, x, K)
    if uv is None or pc[2] < 0.1 or float(np.linalg.norm(pc)) > noise.max_range:
        return None
    if not (0.0 <= uv[0] < 2 * K.cx and 0.0 <= uv[1] < 2 * K.cy):
        return None
    return uv


def simulate(world: World, traj: TrajectorySpec, noise: NoiseSpec) -> Iterator[FrameObservation]:
    """Seeded observation stream; frame 0 carries an identity odometry delta."""
    samples = sample_trajectory(traj)
    check_collisions(world, samples)
    so = noise.odometry_sigmas()
    sm = [noise.marker_rot] * 3 + [noise.marker_trans] * 3
    markers = [world.truth.markers[k] for k in sorted(world.truth.markers)]
    points = [world.truth.points[k] for k in sorted(world.truth.points)]
    prev = None
    for i, (t, cam) in enumerate(samples):
        if prev is None:
            odom = Pose.identity()
        else:
            odom = _perturb(prev.inverse() @ cam, _noise(noise.seed, i, 0, 0, so))
        dets = []
        for m in markers:
            if marker_visible(cam, m, noise):
                Z = cam.inverse() @ m.pose
                dets.append((m.id, _perturb(Z, _noise(noise.seed, i, 1, m.id, sm)), m.size))
        pts = []
        for p in points:
            uv = point_visible(cam, p.position, noise)
            if uv is not None:
                if noise.pixel > 0:
                    uv = uv + _noise(noise.seed, i, 2, p.id, [noise.pixel] * 2)
                pts.append((p.id, uv))
        yield FrameObservation(t, odom, dets, pts, cam)
        prev = cam


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1: expected a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    return doc


class _Reader:
    """Key access that reports the offending JSON path on schema errors."""

    def __init__(self, source: str):
        self.source = source

    def get(self, obj, key, where, default=...):
        if not isinstance(obj, dict):
            raise ConfigError(f"{self.source}: {where} must be an object")
        if key not in obj:
            if default is ...:
                raise ConfigError(f"{self.source}: missing {where}.{key}")
            return default
        return obj[key]

    def number(self, obj, key, where, default=...) -> float:
        v = self.get(obj, key, where, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{self.source}: {where}.{key} must be a number")
        return float(v)

    def vector(self, obj, key, where, n, default=...) -> tuple:
        v = self.get(obj, key, where, default)
        if not (isinstance(v, list) and len(v) in ((n,) if isinstance(n, int) else n)):
            raise ConfigError(f"{self.source}: {where}.{key} must be a list of {n} numbers")
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"{self.source}: {where}.{key} must hold numbers")
        return tuple(float(x) for x in v)


def world_from_dict(doc: dict, source: str = "<world>") -> WorldSpec:
    rd = _Reader(source)
    walls = []
    for i, w in enumerate(rd.get(doc, "walls", "world")):
        where = f"walls[{i}]"
        walls.append(
            WallRect(
                int(rd.number(w, "id", where)),
                rd.vector(w, "corner", where, 3),
                rd.vector(w, "extent", where, 2),
                str(rd.get(w, "normal", where)),
            )
        )
    markers = []
    for i, m in enumerate(rd.get(doc, "markers", "world")):
        where = f"markers[{i}]"
        markers.append(
            MarkerPlacement(
                int(rd.number(m, "id", where)),
                int(rd.number(m, "wall", where)),
                rd.vector(m, "offset", where, 2),
                rd.number(m, "size", where, DEFAULT_MARKER_SIZE),
            )
        )
    rooms = []
    for i, r in enumerate(rd.get(doc, "rooms", "world", [])):
        where = f"rooms[{i}]"
        ids = rd.get(r, "markers", where)
        if not isinstance(ids, list) or not all(isinstance(x, int) for x in ids):
            raise ConfigError(f"{source}: {where}.markers must be a list of integers")
        rooms.append((str(rd.get(r, "label", where)), list(ids)))
    points = np.zeros((0, 3))
    pts = rd.get(doc, "points", "world", [])
    if isinstance(pts, dict):
        points = scatter_points(walls, int(rd.number(pts, "per_wall", "points")), int(rd.number(pts, "seed", "points", 0)))
    elif pts:
        try:
            points = np.array(pts, dtype=float).reshape(-1, 3)
        except ValueError:
            raise ConfigError(f"{source}: points must be a list of 3-vectors") from None
    return WorldSpec(walls, markers, rooms, points)


def scatter_points(walls, per_wall: int, seed: int = 0) -> np.ndarray:
    """Feature points uniformly on wall surfaces, 1 cm proud of the wall."""
    rng = np.random.default_rng(seed)
    out = []
    for w in walls:
        uv = rng.uniform(0.0, 1.0, size=(per_wall, 2)) * np.asarray(w.extent, dtype=float)
        for u, v in uv:
            out.append(w.point(u, v) + 0.01 * w.n)
    return np.array(out).reshape(-1, 3)


def trajectory_from_dict(doc: dict, source: str = "<trajectory>") -> TrajectorySpec:
    rd = _Reader(source)
    wps = []
    for i, w in enumerate(rd.get(doc, "waypoints", "trajectory")):
        where = f"waypoints[{i}]"
        wps.append(
            Waypoint(
                rd.vector(w, "position", where, (2, 3)),
                math.radians(rd.number(w, "yaw_deg", where)),
                rd.number(w, "hold", where, 0.0),
            )
        )
    return TrajectorySpec(
        wps,
        speed=rd.number(doc, "speed", "trajectory", 0.5),
        rate=rd.number(doc, "rate", "trajectory", 10.0),
        yaw_rate=math.radians(rd.number(doc, "yaw_rate_deg", "trajectory", math.degrees(0.5))),
    )


def noise_from_dict(doc: dict, base: NoiseSpec | None = None, source: str = "<noise>") -> NoiseSpec:
    """Overlay the keys present in ``doc`` on ``base``."""
    base = base or NoiseSpec()
    rd = _Reader(source)
    kw = {}
    for key in ("odom_trans", "odom_rot"):
        if key in doc:
            kw[key] = rd.vector(doc, key, "noise", 3) if isinstance(doc[key], list) else rd.number(doc, key, "noise")
    for key in ("marker_trans", "marker_rot", "pixel", "max_range", "fov_half_angle"):
        if key in doc:
            kw[key] = rd.number(doc, key, "noise")
    if "seed" in doc:
        seed = doc["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"{source}: noise.seed must be a non-negative integer")
        kw["seed"] = seed
    if "intrinsics" in doc:
        try:
            kw["intrinsics"] = Intrinsics(*rd.vector(doc, "intrinsics", "noise", 4))
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    unknown = set(doc) - set(kw) - {"format_version"}
    if unknown:
        raise ConfigError(f"{source}: unknown noise keys {sorted(unknown)}")
    try:
        return replace(base, **kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_world(path) -> WorldSpec:
    return world_from_dict(load_json(path), str(path))


def load_trajectory(path) -> TrajectorySpec:
    return trajectory_from_dict(load_json(path), str(path))


def load_noise(path, base: NoiseSpec | None = None) -> NoiseSpec:
    return noise_from_dict(load_json(path), base, str(path))


# ---------------------------------------------------------------------------
# Observation record files
# ---------------------------------------------------------------------------


def pose_to_list(T: Pose) -> list[float]:
    """``tx ty tz qx qy qz qw``."""
    q = T.q
    return [float(T.t[0]), float(T.t[1]), float(T.t[2]), float(q[1]), float(q[2]), float(q[3]), float(q[0])]


def pose_from_list(v) -> Pose:
    tx, ty, tz, qx, qy, qz, qw = (float(x) for x in v)
    return Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))


@dataclass
class StreamHeader:
    initial_pose: Pose
    intrinsics: Intrinsics = DEFAULT_INTRINSICS


def frame_to_record(obs: FrameObservation) -> dict:
    rec = {
        "t": obs.timestamp,
        "odom": pose_to_list(obs.odometry),
        "markers": [[mid] + pose_to_list(Z) + [size] for mid, Z, size in obs.markers],
        "points": [[pid, float(uv[0]), float(uv[1])] for pid, uv in obs.points],
    }
    if obs.ground_truth is not None:
        rec["gt"] = pose_to_list(obs.ground_truth)
    return rec


def frame_from_record(rec: dict) -> FrameObservation:
    markers = [(int(m[0]), pose_from_list(m[1:8]), float(m[8])) for m in rec["markers"]]
    points = [(int(p[0]), np.array([float(p[1]), float(p[2])])) for p in rec["points"]]
    gt = pose_from_list(rec["gt"]) if "gt" in rec else None
    return FrameObservation(float(rec["t"]), pose_from_list(rec["odom"]), markers, points, gt)


def write_observations(path, header: StreamHeader, frames) -> int:
    """Write header plus frames; returns the number of frames written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        head = {
            "format_version": FORMAT_VERSION,
            "initial_pose": pose_to_list(header.initial_pose),
            "intrinsics": list(header.intrinsics.as_array()),
        }
        fh.write(json.dumps(head) + "\n")
        for obs in frames:
            fh.write(json.dumps(frame_to_record(obs)) + "\n")
            n += 1
    return n


def read_observations(path) -> tuple[StreamHeader, list[FrameObservation]]:
    path = Path(path)
    header = None
    frames = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if header is None:
                    if rec.get("format_version") != FORMAT_VERSION:
                        raise ValueError(f"unsupported format_version {rec.get('format_version')!r}")
                    header = StreamHeader(pose_from_list(rec["initial_pose"]), Intrinsics(*rec["intrinsics"]))
                else:
                    frames.append(frame_from_record(rec))
            except (ValueError, KeyError, TypeError, IndexError, AttributeError) as exc:
                raise MalformedLine(str(path), lineno, str(exc) or type(exc).__name__) from None
    if header is None:
        raise MalformedLine(str(path), 1, "missing header record")
    return header, frames


def generate(world_spec: WorldSpec, traj: TrajectorySpec, noise: NoiseSpec):
    """Build the world and simulate; returns ``(world, header, frames)``."""
    world = build_world(world_spec)
    frames = list(simulate(world, traj, noise))
    header = StreamHeader(frames[0].ground_truth, noise.intrinsics)
    return world, header, frames

