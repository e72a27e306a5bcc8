"""Trajectory error, trajectory/map files and plot data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyOverlap, MalformedLine
from .geometry import Pose
from .map_model import HierMap

MAP_FORMAT = "markerslam-map"
MAP_VERSION = 1
MATCH_TOL = 0.01


@dataclass
class Trajectory:
    stamps: list[float] = field(default_factory=list)
    poses: list[Pose] = field(default_factory=list)

    def __post_init__(self):
        if len(self.stamps) != len(self.poses):
            raise ValueError("stamps and poses differ in length")
        if any(b <= a for a, b in zip(self.stamps, self.stamps[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def append(self, stamp: float, pose: Pose) -> None:
        if self.stamps and stamp <= self.stamps[-1]:
            raise ValueError(f"timestamp {stamp} does not follow {self.stamps[-1]}")
        self.stamps.append(float(stamp))
        self.poses.append(pose)

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    def transformed(self, T: Pose) -> Trajectory:
        return Trajectory(list(self.stamps), [T @ p for p in self.poses])

    def __len__(self) -> int:
        return len(self.stamps)


@dataclass
class AteResult:
    rmse: float
    std: float
    mean: float
    errors: np.ndarray
    stamps: np.ndarray
    alignment: Pose
    unmatched: int = 0

    def as_dict(self) -> dict:
        q = self.alignment.q
        return {
            "rmse": self.rmse,
            "std": self.std,
            "mean": self.mean,
            "matched": int(len(self.errors)),
            "unmatched": self.unmatched,
            "alignment": [*map(float, self.alignment.t), float(q[1]), float(q[2]), float(q[3]), float(q[0])],
        }


def associate(est: Trajectory, gt: Trajectory, tol: float = MATCH_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(i_est, i_gt)`` by nearest ground-truth stamp within ``tol``."""
    g = np.asarray(gt.stamps, dtype=float)
    ie, ig = [], []
    if len(g) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    for i, s in enumerate(est.stamps):
        j = int(np.searchsorted(g, s))
        best = None
        for c in (j - 1, j):
            if 0 <= c < len(g) and (best is None or abs(g[c] - s) < abs(g[best] - s)):
                best = c
        if abs(g[best] - s) <= tol + 1e-12:
            ie.append(i)
            ig.append(best)
    return np.array(ie, dtype=int), np.array(ig, dtype=int)


def rigid_align(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Least-squares rotation and translation mapping ``src`` onto ``dst``."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    S[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ S @ U.T
    return Pose.from_rt(R, mu_d - R @ mu_s)


def ate(est: Trajectory, gt: Trajectory, align: str = "rigid", tol: float = MATCH_TOL) -> AteResult:
    if align not in ("none", "rigid"):
        raise ValueError(f"align must be 'none' or 'rigid', not {align!r}")
    ie, ig = associate(est, gt, tol)
    if len(ie) == 0:
        raise EmptyOverlap("no estimated timestamp matches the ground truth")
    P = est.positions()[ie]
    G = gt.positions()[ig]
    T = rigid_align(P, G) if align == "rigid" else Pose.identity()
    if align == "rigid":
        P = T.apply(P)
    err = np.linalg.norm(P - G, axis=1)
    mean = float(err.mean())
    rmse = math.sqrt(float(np.mean(err**2)))
    std = float(err.std())
    return AteResult(rmse, std, mean, err, np.asarray(est.stamps)[ie], T, len(est) - len(ie))


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal; integral values without a fraction."""
    x = float(x)
    if x == 0.0:
        return "0"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def export_trajectory(traj: Trajectory, path) -> None:
    """``timestamp tx ty tz qx qy qz qw`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s, p in zip(traj.stamps, traj.poses):
            vals = [s, *p.t, p.q[1], p.q[2], p.q[3], p.q[0]]
            fh.write(" ".join(fmt_float(v) for v in vals) + "\n")


def import_trajectory(path) -> Trajectory:
    traj = Trajectory()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise MalformedLine(str(path), lineno, f"expected 8 fields, got {len(parts)}")
            try:
                s, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts)
            except ValueError:
                raise MalformedLine(str(path), lineno, "non-numeric field") from None
            q = np.array([qw, qx, qy, qz])
            if not (np.all(np.isfinite(q)) and np.linalg.norm(q) > 0):
                raise MalformedLine(str(path), lineno, "invalid quaternion")
            try:
                traj.append(s, Pose(q, [tx, ty, tz]))
            except ValueError as exc:
                raise MalformedLine(str(path), lineno, str(exc)) from None
    return traj


def _r(x) -> float:
    # 9 decimals hide last-bit differences between numeric backends
    v = round(float(x), 9)
    return 0.0 if v == 0.0 else v


def _rl(a) -> list[float]:
    return [_r(v) for v in np.asarray(a, dtype=float).ravel()]


def _pose_fields(p: Pose) -> list[float]:
    return _rl([*p.t, p.q[1], p.q[2], p.q[3], p.q[0]])


def map_document(hmap: HierMap) -> dict:
    return {
        "format": MAP_FORMAT,
        "version": MAP_VERSION,
        "keyframes": [
            {"id": k.id, "t": k.timestamp, "pose": _pose_fields(k.pose), "intrinsics": _rl(k.intrinsics.as_array())}
            for k in (hmap.keyframes[i] for i in sorted(hmap.keyframes))
        ],
        "points": [
            {
                "id": p.id,
                "position": _rl(p.position),
                "viewing_direction": None if p.viewing_direction is None else _rl(p.viewing_direction),
                "descriptor": p.descriptor.hex(),
            }
            for p in (hmap.points[i] for i in sorted(hmap.points))
        ],
        "markers": [
            {"id": m.id, "size": m.size, "pose": _pose_fields(m.pose), "corners": [_rl(c) for c in m.corners]}
            for m in (hmap.markers[i] for i in sorted(hmap.markers))
        ],
        "walls": [
            {
                "id": w.id,
                "azimuth": _r(w.state.azimuth),
                "elevation": _r(w.state.elevation),
                "d": _r(w.state.d),
                "markers": list(w.markers),
            }
            for w in (hmap.walls[i] for i in sorted(hmap.walls))
        ],
        "rooms": [
            {
                "id": r.id,
                "label": r.label,
                "kind": r.kind,
                "center": _rl(r.center),
                "walls": list(r.walls),
                "anchor_marker": r.anchor_marker,
            }
            for r in (hmap.rooms[i] for i in sorted(hmap.rooms))
        ],
    }


def export_map(hmap: HierMap, path) -> None:
    """Versioned JSON document, entities ordered by id, values rounded to 1e-9."""
    text = json.dumps(map_document(hmap), indent=1) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def emit_error_series(result: AteResult, path) -> int:
    """CSV ``frame_index,timestamp,error_m``; returns the row count."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "timestamp", "error_m"])
        for i, (s, e) in enumerate(zip(result.stamps, result.errors)):
            w.writerow([i, fmt_float(s), fmt_float(e)])
    return len(result.errors)
