"""Regenerate the bundled scenario files under src/markerslam/scenarios/."""

from __future__ import annotations

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "markerslam" / "scenarios"
FLOOR, HEIGHT = -1.2, 2.7  # camera at z = 0, 1.2 m above the floor


def wall(i, corner_xy, length, normal):
    return {"id": i, "corner": [corner_xy[0], corner_xy[1], FLOOR], "extent": [length, HEIGHT], "normal": normal}


def markers_on(wall_id, offsets, first_id, v=1.2):
    return [{"id": first_id + k, "wall": wall_id, "offset": [u, v]} for k, u in enumerate(offsets)]


def dump(name, doc):
    doc = {"format_version": 1, **doc}
    (OUT / name).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def corridor():
    walls = [wall(0, (0, -1.0), 12.0, "+y"), wall(1, (0, 1.5), 12.0, "-y")]
    markers = markers_on(0, [3.0, 5.5, 8.0, 10.5], 1) + markers_on(1, [3.0, 6.0, 9.0], 5)
    dump("corridor_world.json", {
        "walls": walls,
        "markers": markers,
        "rooms": [{"label": "corridor", "markers": [m["id"] for m in markers]}],
        "points": {"per_wall": 12, "seed": 1},
    })
    dump("corridor_traj.json", {
        "waypoints": [
            {"position": [0.5, 0.25], "yaw_deg": 0.0, "hold": 0.2},
            {"position": [6.0, 0.25], "yaw_deg": 15.0},
            {"position": [11.0, 0.25], "yaw_deg": -15.0},
        ],
        "speed": 0.5,
        "rate": 10.0,
    })


def office():
    # corridor y in [-1, 1.5], x in [0, 14]; room x in [3, 9], y in [-6, -2];
    # doorway x in [5.5, 6.5] through both y = -1 and y = -2
    walls = [
        wall(0, (0, -1.0), 5.5, "+y"),
        wall(1, (6.5, -1.0), 7.5, "+y"),
        wall(2, (0, 1.5), 14.0, "-y"),
        wall(3, (0, -1.0), 2.5, "+x"),
        wall(4, (14.0, -1.0), 2.5, "-x"),
        wall(10, (3.0, -2.0), 2.5, "-y"),
        wall(11, (6.5, -2.0), 2.5, "-y"),
        wall(12, (3.0, -6.0), 6.0, "+y"),
        wall(13, (3.0, -6.0), 4.0, "+x"),
        wall(14, (9.0, -6.0), 4.0, "-x"),
    ]
    corridor_m = (
        markers_on(0, [1.0, 3.0, 5.0], 1)
        + markers_on(1, [1.0, 3.0, 5.0, 7.0], 4)
        + markers_on(2, [1.0, 3.5, 6.0, 8.5, 11.0, 13.0], 8)
    )
    end_m = markers_on(3, [0.8, 1.7], 14) + markers_on(4, [0.8, 1.7], 16)
    room_m = (
        markers_on(10, [1.2], 20)
        + markers_on(11, [1.2], 21)
        + markers_on(12, [1.0, 3.0, 5.0], 22)
        + markers_on(13, [1.0, 3.0], 25)
        + markers_on(14, [1.0, 3.0], 27)
    )
    dump("office_world.json", {
        "walls": walls,
        "markers": corridor_m + end_m + room_m,
        "rooms": [
            {"label": "corridor", "markers": [m["id"] for m in corridor_m]},
            {"label": "lab", "markers": [m["id"] for m in room_m]},
        ],
        "points": {"per_wall": 6, "seed": 2},
    })
    dump("office_traj.json", {
        "waypoints": [
            {"position": [0.8, 0.25], "yaw_deg": 0.0, "hold": 0.2},
            {"position": [12.5, 0.25], "yaw_deg": 0.0},
            {"position": [12.5, 0.25], "yaw_deg": 180.0},
            {"position": [6.0, 0.25], "yaw_deg": 180.0},
            {"position": [6.0, 0.25], "yaw_deg": -90.0},
            {"position": [6.0, -3.0], "yaw_deg": -90.0},
            {"position": [4.5, -4.5], "yaw_deg": -150.0},
            {"position": [4.5, -4.5], "yaw_deg": 90.0},
            {"position": [7.5, -4.5], "yaw_deg": 0.0},
            {"position": [7.5, -4.5], "yaw_deg": 90.0},
            {"position": [6.0, -3.0], "yaw_deg": 90.0},
            {"position": [6.0, 0.25], "yaw_deg": 90.0},
            {"position": [6.0, 0.25], "yaw_deg": 180.0},
            {"position": [1.2, 0.25], "yaw_deg": 180.0},
            {"position": [1.2, 0.25], "yaw_deg": 45.0},
        ],
        "speed": 0.5,
        "rate": 10.0,
        "yaw_rate_deg": 30.0,
    })


def long_corridor():
    # single pass; every marker is seen once and never again
    length = 30.0
    walls = [
        wall(0, (0, -1.0), length, "+y"),
        wall(1, (0, 1.4), length, "-y"),
        wall(2, (length, -1.0), 2.4, "-x"),
    ]
    markers = markers_on(0, [3.0 + 3.0 * k for k in range(9)], 1) + markers_on(1, [4.5 + 3.0 * k for k in range(9)], 10)
    dump("long_corridor_world.json", {
        "walls": walls,
        "markers": markers + markers_on(2, [1.2], 30),
        "rooms": [{"label": "corridor", "markers": [m["id"] for m in markers]}],
        "points": {"per_wall": 6, "seed": 3},
    })
    wps = [{"position": [0.5, 0.2], "yaw_deg": 0.0, "hold": 0.2}]
    for k in range(1, 9):
        wps.append({"position": [0.5 + 3.5 * k, 0.2], "yaw_deg": 12.0 if k % 2 else -12.0})
    dump("long_corridor_traj.json", {"waypoints": wps, "speed": 0.6, "rate": 10.0})


def loop_room():
    # 10 m x 8 m room, two laps along a rectangle 1.8 m from the walls
    walls = [
        wall(0, (0, 0), 10.0, "+y"),
        wall(1, (0, 8.0), 10.0, "-y"),
        wall(2, (0, 0), 8.0, "+x"),
        wall(3, (10.0, 0), 8.0, "-x"),
    ]
    markers = (
        markers_on(0, [2.5, 5.0, 7.5], 1)
        + markers_on(1, [2.5, 5.0, 7.5], 4)
        + markers_on(2, [2.0, 4.0, 6.0], 7)
        + markers_on(3, [2.0, 4.0, 6.0], 10)
    )
    dump("loop_world.json", {
        "walls": walls,
        "markers": markers,
        "rooms": [{"label": "hall", "markers": [m["id"] for m in markers]}],
        "points": {"per_wall": 12, "seed": 4},
    })
    corners = [([1.8, 1.8], 0.0), ([8.2, 1.8], 90.0), ([8.2, 6.2], 180.0), ([1.8, 6.2], -90.0)]
    wps = [{"position": corners[0][0], "yaw_deg": 0.0, "hold": 0.2}]
    for lap in range(2):
        for i in range(1, 5):
            pos, _ = corners[i % 4]
            prev_yaw = corners[i - 1][1]
            wps.append({"position": pos, "yaw_deg": prev_yaw})
            wps.append({"position": pos, "yaw_deg": corners[i % 4][1]})
    dump("loop_traj.json", {"waypoints": wps, "speed": 0.5, "rate": 10.0, "yaw_rate_deg": 30.0})


# planar-dominant odometry drift (robot axes x, y, z / roll, pitch, yaw)
EXPERIMENT_NOISE = {
    "odom_trans": [0.003, 0.003, 0.0005],
    "odom_rot": [0.001, 0.001, 0.01],
    "marker_trans": 0.03,
    "marker_rot": 0.08,
    "pixel": 1.0,
}


def experiment_pipeline():
    # odometry information: per-frame camera-axis sigmas, inflated 4x to cover
    # the several frames between keyframes
    tr, rot = EXPERIMENT_NOISE["odom_trans"], EXPERIMENT_NOISE["odom_rot"]
    perm = [1, 2, 0]  # camera x, y, z are robot -y, -z, x
    odo = [1.0 / (4 * rot[i] ** 2) for i in perm] + [1.0 / (4 * tr[i] ** 2) for i in perm]
    mt, mr = EXPERIMENT_NOISE["marker_trans"], EXPERIMENT_NOISE["marker_rot"]
    return {
        "use_points": True,
        "information": {
            "odometry": odo,
            "marker_obs": [1 / mr**2] * 3 + [1 / mt**2] * 3,
            "marker_wall": [1e4] * 3,
            "room2": [100.0] * 3,
            "room4": [100.0] * 3,
        },
    }


def experiments():
    for name in ("long_corridor", "loop"):
        dump(f"{name}_experiment.json", {
            "world": f"{name}_world.json",
            "trajectory": f"{name}_traj.json",
            "noise": EXPERIMENT_NOISE,
            "seeds": list(range(20)),
            "align": "rigid",
            "pipeline": experiment_pipeline(),
        })
    dump("noise_default.json", EXPERIMENT_NOISE)
    dump("pipeline_default.json", {"pipeline": experiment_pipeline()})


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    corridor()
    office()
    long_corridor()
    loop_room()
    experiments()


if __name__ == "__main__":
    main()
