"""Frame-by-frame SLAM loop over simulated observation streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import factors as F
from .errors import DataError, OutOfOrderFrame
from .evalkit import Trajectory
from .geometry import Pose, so3_log
from .map_model import DEFAULT_INTRINSICS, FOUR_WALL, HierMap, Intrinsics, Keyframe, MapPoint, Marker
from .optimizer import FactorGraph, OptimizeConfig, optimize
from .semantic import MARKER_REVISIT, WALL_REMATCH, RoomDictionary, check_loops, detect_rooms, infer_wall
from .sim import FrameObservation

FULL = "full"
BASELINE = "baseline"
SEMANTIC_KINDS = (F.MARKER_WALL, F.ROOM2, F.ROOM4)


@dataclass
class PipelineConfig:
    mode: str = FULL
    kf_translation: float = 0.25
    kf_rotation: float = math.radians(10.0)
    kf_on_new_marker: bool = True
    local_window: int = 10
    local: OptimizeConfig = field(default_factory=lambda: OptimizeConfig(max_iterations=10))
    global_: OptimizeConfig = field(default_factory=lambda: OptimizeConfig(max_iterations=50))
    angle_gate: float = math.radians(10.0)
    distance_gate: float = 0.3
    revisit_window: int = 30
    information: dict = field(default_factory=dict)
    use_points: bool = True
    min_parallax: float = math.radians(2.0)
    final_global: bool = True

    def __post_init__(self):
        if self.mode not in (FULL, BASELINE):
            raise ValueError(f"mode must be {FULL!r} or {BASELINE!r}")
        if not (self.kf_translation > 0 and self.kf_rotation > 0):
            raise ValueError("keyframe gates must be positive")
        if self.local_window < 2:
            raise ValueError("local window must hold at least 2 keyframes")
        if not (self.angle_gate > 0 and self.distance_gate > 0 and self.revisit_window >= 1):
            raise ValueError("semantic gates must be positive")
        info = F.default_information()
        for kind, mat in self.information.items():
            if kind not in info:
                raise ValueError(f"unknown factor kind {kind!r}")
            info[kind] = np.asarray(mat, dtype=float)
        self.information = info


def triangulate(centers: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Point minimizing squared distance to the rays ``centers + s * dirs``."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c, d in zip(centers, dirs):
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ c
    return np.linalg.solve(A, b)


class Pipeline:
    """Incremental state: map, factor graph, variable values and bookkeeping.

    Keyframe ids are dense from 0, so a keyframe id is also its index in the
    sequence.
    """

    def __init__(self, cfg: PipelineConfig | None = None, dictionary: RoomDictionary | None = None,
                 initial_pose: Pose | None = None, intrinsics: Intrinsics = DEFAULT_INTRINSICS):
        self.cfg = cfg or PipelineConfig()
        self.dictionary = dictionary or RoomDictionary()
        self.initial_pose = initial_pose or Pose.identity()
        self.intrinsics = intrinsics
        self.map = HierMap()
        self.graph = FactorGraph()
        self.states: dict = {}
        self.events: list[dict] = []
        self.frame_index = -1
        self.last_stamp: float | None = None
        self.since_kf = Pose.identity()
        self.first_seen: dict[int, int] = {}
        self.last_seen: dict[int, int] = {}
        self.wall_support: dict[int, int] = {}
        self.point_obs: dict[int, list[tuple[int, np.ndarray]]] = {}
        # dead-reckoned keyframe poses; point gating uses these so that the
        # graph never depends on optimized values (baseline and full share it)
        self.odo_chain: dict[int, Pose] = {}
        self._touching: dict = {}

    # -- bookkeeping -------------------------------------------------------

    @property
    def last_kf(self) -> int | None:
        return len(self.map.keyframes) - 1 if self.map.keyframes else None

    @property
    def cursor(self) -> Pose:
        if self.last_kf is None:
            return self.initial_pose
        return self.states[(F.KF, self.last_kf)] @ self.since_kf

    def _add_factor(self, kind: str, variables: tuple, measurement=None) -> None:
        f = F.Factor(kind, variables, measurement, self.cfg.information[kind])
        self.graph.add(f)
        for v in variables:
            self._touching.setdefault(v, []).append(len(self.graph.factors) - 1)

    def _log(self, **event) -> None:
        self.events.append(event)

    # -- frame processing --------------------------------------------------

    def process_frame(self, obs: FrameObservation, force: bool | None = None) -> bool:
        """Consume one frame; returns whether it became a keyframe.

        ``force`` overrides the keyframe decision (used to replay a log).
        """
        if self.last_stamp is not None and obs.timestamp <= self.last_stamp:
            raise OutOfOrderFrame(f"frame at t={obs.timestamp} after t={self.last_stamp}")
        self.last_stamp = obs.timestamp
        self.frame_index += 1
        if self.last_kf is not None:
            self.since_kf = self.since_kf @ obs.odometry

        new_ids = sorted({mid for mid, _, _ in obs.markers if mid not in self.map.markers})
        if self.last_kf is None:
            reason = "first"
        elif self.cfg.kf_on_new_marker and new_ids:
            reason = "new_marker"
        elif float(np.linalg.norm(self.since_kf.t)) >= self.cfg.kf_translation:
            reason = "translation"
        elif float(np.linalg.norm(so3_log(self.since_kf.R))) >= self.cfg.kf_rotation:
            reason = "rotation"
        else:
            reason = None
        if force is not None:
            reason = ("replay" if reason is None else reason) if force else None
        if reason is None:
            self._log(event="frame", frame=self.frame_index, t=obs.timestamp, keyframe=None)
            return False
        self._add_keyframe(obs, reason)
        return True

    def _add_keyframe(self, obs: FrameObservation, reason: str) -> None:
        cfg = self.cfg
        kid = 0 if self.last_kf is None else self.last_kf + 1
        pose = self.cursor
        self.map.add_keyframe(Keyframe(kid, obs.timestamp, pose, self.intrinsics))
        kkey = (F.KF, kid)
        self.states[kkey] = pose
        self.odo_chain[kid] = self.initial_pose if kid == 0 else self.odo_chain[kid - 1] @ self.since_kf
        self._log(event="frame", frame=self.frame_index, t=obs.timestamp, keyframe=kid, reason=reason)
        if kid > 0:
            self._add_factor(F.ODOMETRY, ((F.KF, kid - 1), kkey), self.since_kf)
        self.since_kf = Pose.identity()

        attached: dict[int, int] = {}
        for mid, Z, size in sorted(obs.markers, key=lambda d: d[0]):
            mkey = (F.MARKER, mid)
            if mid not in self.map.markers:
                m = self.map.add_marker(Marker(mid, pose @ Z, size))
                self.states[mkey] = m.pose
                self.first_seen[mid] = kid
                wid, created = infer_wall(m, self.map, cfg.angle_gate, cfg.distance_gate, next_id=len(self.map.walls))
                wkey = (F.WALL, wid)
                if created:
                    self.states[wkey] = self.map.walls[wid].state
                    self._log(event="wall_created", keyframe=kid, wall=wid, marker=mid)
                else:
                    attached[mid] = wid
                    self._log(event="marker_attached", keyframe=kid, wall=wid, marker=mid)
                self._add_factor(F.MARKER_WALL, (wkey, mkey))
            self._add_factor(F.MARKER_OBS, (kkey, mkey), Z)

        if cfg.use_points:
            self._add_points(kid, obs)

        rooms, _pending = detect_rooms(self.dictionary, self.map, self.first_seen, next_id=len(self.map.rooms))
        for r in rooms:
            rkey = (F.ROOM, r.id)
            self.states[rkey] = np.array(r.center, dtype=float)
            walls = tuple((F.WALL, w) for w in r.walls)
            if r.kind == FOUR_WALL:
                self._add_factor(F.ROOM4, (rkey, *walls))
            else:
                self._add_factor(F.ROOM2, (rkey, *walls, (F.MARKER, r.anchor_marker)))
            self._log(event="room_created", keyframe=kid, room=r.id, label=r.label, kind=r.kind, walls=list(r.walls))

        seen = sorted({mid for mid, _, _ in obs.markers})
        events = check_loops(seen, kid, self.last_seen, self.wall_support, attached, cfg.revisit_window)
        if cfg.mode == BASELINE:
            events = [e for e in events if e.kind != WALL_REMATCH]
        for mid in seen:
            self.last_seen[mid] = kid
            self.wall_support[self.map.wall_of_marker(mid)] = kid
        for e in events:
            self._log(event="loop", kind=e.kind, subject=e.subject, keyframe=kid)

        if kid > 0:
            self._optimize_local(kid)
        if any(e.kind in (MARKER_REVISIT, WALL_REMATCH) for e in events):
            self.optimize_global("loop")

    def _add_points(self, kid: int, obs: FrameObservation) -> None:
        K = self.intrinsics
        kkey = (F.KF, kid)
        for pid, uv in sorted(obs.points, key=lambda d: d[0]):
            pkey = (F.POINT, pid)
            if pid in self.map.points:
                self._add_factor(F.POINT_PROJ, (kkey, pkey), (np.asarray(uv, dtype=float), K))
                continue
            track = self.point_obs.setdefault(pid, [])
            track.append((kid, np.asarray(uv, dtype=float)))
            if len(track) < 2:
                continue
            centers, dirs = [], []
            for k, z in track:
                T = self.odo_chain[k]
                ray = T.R @ np.array([(z[0] - K.cx) / K.fx, (z[1] - K.cy) / K.fy, 1.0])
                centers.append(T.t)
                dirs.append(ray / np.linalg.norm(ray))
            if math.acos(min(1.0, float(dirs[0] @ dirs[-1]))) < self.cfg.min_parallax:
                continue
            x = triangulate(np.array(centers), np.array(dirs))
            if any(float(d @ (x - c)) <= 0.1 for c, d in zip(centers, dirs)):
                continue
            # carry the point into the estimate frame through its first keyframe
            k0 = track[0][0]
            T0 = self.states[(F.KF, k0)]
            x = T0.apply(self.odo_chain[k0].inverse().apply(x))
            v = x - T0.t
            self.map.add_point(MapPoint(pid, x, v / np.linalg.norm(v)))
            self.states[pkey] = x
            for k, z in track:
                self._add_factor(F.POINT_PROJ, ((F.KF, k), pkey), (z, K))
            del self.point_obs[pid]

    # -- optimization ------------------------------------------------------

    def _active(self, f: F.Factor) -> bool:
        return self.cfg.mode == FULL or f.kind not in SEMANTIC_KINDS

    def _optimize_local(self, kid: int) -> None:
        """Free the last ``local_window`` keyframes and the landmarks they observe;
        everything else touched by the involved factors stays fixed."""
        facs = self.graph.factors
        lo = max(0, kid - self.cfg.local_window + 1)
        free = {(F.KF, k) for k in range(lo, kid + 1)}
        for k in range(lo, kid + 1):
            for fi in self._touching.get((F.KF, k), ()):
                free.update(v for v in facs[fi].variables if v[0] in (F.MARKER, F.POINT))
        if self.cfg.mode == FULL:
            walls = {(F.WALL, self.map.wall_of_marker(v[1])) for v in free if v[0] == F.MARKER}
            free |= walls
            for w in walls:
                for fi in self._touching.get(w, ()):
                    free.update(v for v in facs[fi].variables if v[0] == F.ROOM)
        idx = sorted({fi for v in free for fi in self._touching.get(v, ()) if self._active(facs[fi])})
        local = [facs[i] for i in idx]
        involved = {v for f in local for v in f.variables}
        fixed = involved - free
        cfg = self.cfg.local
        if lo == 0:
            fixed.add((F.KF, 0))
        new, report = optimize(local, self.states, _with_gauge(cfg, None), fixed)
        self._commit(new)
        self._log(event="optimize", scope="local", keyframe=kid, **report.as_dict())

    def optimize_global(self, why: str) -> None:
        active = [f for f in self.graph.factors if self._active(f)]
        if not active:
            return
        new, report = optimize(active, self.states, _with_gauge(self.cfg.global_, 0))
        self._commit(new)
        self._log(event="optimize", scope="global", trigger=why, keyframe=self.last_kf, **report.as_dict())

    def _commit(self, new: dict) -> None:
        m = self.map
        for key, val in new.items():
            if self.states.get(key) is val:
                continue
            self.states[key] = val
            kind, i = key
            if kind == F.KF:
                m.keyframes[i].pose = val
            elif kind == F.MARKER:
                m.markers[i].pose = val
            elif kind == F.WALL:
                m.walls[i].state = val
            elif kind == F.ROOM:
                m.rooms[i].center = np.array(val, dtype=float)
            elif kind == F.POINT:
                m.points[i].position = np.array(val, dtype=float)

    def finish(self) -> None:
        if self.cfg.final_global and self.map.keyframes:
            self.optimize_global("end")

    def trajectory(self) -> Trajectory:
        ks = [self.map.keyframes[i] for i in sorted(self.map.keyframes)]
        return Trajectory([k.timestamp for k in ks], [self.states[(F.KF, k.id)] for k in ks])


def _with_gauge(cfg: OptimizeConfig, gauge: int | None) -> OptimizeConfig:
    return replace(cfg, gauge=gauge)


def run_sequence(
    frames: Iterable[FrameObservation],
    cfg: PipelineConfig | None = None,
    dictionary: RoomDictionary | None = None,
    initial_pose: Pose | None = None,
    intrinsics: Intrinsics = DEFAULT_INTRINSICS,
    decisions: Iterable[bool] | None = None,
) -> tuple[HierMap, Trajectory, list[dict]]:
    """Run the whole stream; returns the map, keyframe trajectory and event log.

    ``decisions`` replays per-frame keyframe choices (e.g. from an event log).
    """
    p = Pipeline(cfg, dictionary, initial_pose, intrinsics)
    forced = iter(decisions) if decisions is not None else None
    n = 0
    for obs in frames:
        p.process_frame(obs, next(forced) if forced is not None else None)
        n += 1
    if n == 0:
        raise DataError("empty observation stream")
    p.finish()
    return p.map, p.trajectory(), p.events


def keyframe_decisions(events: list[dict]) -> list[bool]:
    return [e["keyframe"] is not None for e in events if e["event"] == "frame"]
