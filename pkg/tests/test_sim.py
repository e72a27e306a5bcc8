from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from markerslam import factors as F
from markerslam.errors import (
    ConfigError,
    DanglingReference,
    DuplicateMarkerId,
    MalformedLine,
    MarkerOffWall,
    TrajectoryCollision,
)
from markerslam.geometry import Pose
from markerslam.map_model import FOUR_WALL
from markerslam.optimizer import marginal_cost
from markerslam.pipeline import PipelineConfig, Pipeline
from markerslam.sim import (
    MarkerPlacement,
    NoiseSpec,
    StreamHeader,
    TrajectorySpec,
    WallRect,
    Waypoint,
    WorldSpec,
    build_world,
    generate,
    load_json,
    load_noise,
    load_trajectory,
    load_world,
    read_observations,
    sample_trajectory,
    simulate,
    write_observations,
)

from conftest import SCENARIOS

NOISY = NoiseSpec(odom_trans=0.01, odom_rot=0.005, marker_trans=0.02, marker_rot=0.03, pixel=1.0, seed=7)


def _box_spec(points=None):
    walls = [
        WallRect(0, (0, 0, -1.2), (6, 2.7), "+x"),
        WallRect(1, (4, 0, -1.2), (6, 2.7), "-x"),
        WallRect(2, (0, 0, -1.2), (4, 2.7), "+y"),
        WallRect(3, (0, 6, -1.2), (4, 2.7), "-y"),
    ]
    markers = [MarkerPlacement(10 + i, i, (2.0, 1.2)) for i in range(4)]
    pts = np.zeros((0, 3)) if points is None else points
    return WorldSpec(walls, markers, [("box", [10, 11, 12, 13])], pts)


def _scenario(name):
    return load_world(SCENARIOS / f"{name}_world.json"), load_trajectory(SCENARIOS / f"{name}_traj.json")


def test_rectangle_room_center():
    world = build_world(_box_spec())
    (room,) = world.truth.rooms.values()
    assert room.kind == FOUR_WALL
    np.testing.assert_allclose(room.center, [2.0, 3.0, 0.0], atol=1e-12)
    assert len(world.truth.points) == 0
    assert world.truth.audit() == []


def test_markers_face_into_the_room():
    world = build_world(_box_spec())
    inside = np.array([2.0, 3.0, 0.0])
    for m in world.truth.markers.values():
        assert m.pose.R[:, 2] @ (inside - m.center) > 0
        assert m.size == 0.17


@pytest.mark.parametrize("offset", [(0.05, 1.2), (5.95, 1.2), (2.0, 2.65), (-1.0, 1.0)])
def test_marker_off_wall(offset):
    spec = _box_spec()
    spec.markers[0] = MarkerPlacement(10, 0, offset)
    with pytest.raises(MarkerOffWall):
        build_world(spec)


def test_duplicate_and_dangling_markers():
    spec = _box_spec()
    spec.markers.append(MarkerPlacement(10, 1, (1.0, 1.0)))
    with pytest.raises(DuplicateMarkerId):
        build_world(spec)
    spec = _box_spec()
    spec.rooms = [("box", [10, 11, 99])]
    with pytest.raises(DanglingReference):
        build_world(spec)


def test_doorway_split_wall_is_one_plane():
    world = build_world(_scenario("office")[0])
    # rects 0 and 1 share y = -1 facing +y
    owners = {world.truth.wall_of_marker(m) for m in (1, 2, 3, 4, 5, 6, 7)}
    assert len(owners) == 1


def test_trajectory_sampling_and_collision():
    traj = TrajectorySpec([Waypoint((0.0, 0.0), 0.0, 0.5), Waypoint((2.0, 0.0), 0.0)], speed=1.0, rate=10.0)
    samples = sample_trajectory(traj)
    assert len(samples) == 26
    assert [t for t, _ in samples][:3] == [0.0, 0.1, 0.2]
    np.testing.assert_allclose(samples[-1][1].t, [2.0, 0.0, 0.0], atol=1e-12)
    # camera looks along +x (the robot's forward axis)
    np.testing.assert_allclose(samples[0][1].R[:, 2], [1, 0, 0], atol=1e-15)
    world = build_world(_box_spec())
    bad = TrajectorySpec([Waypoint((2.0, 3.0), 0.0), Waypoint((6.0, 3.0), 0.0)])
    with pytest.raises(TrajectoryCollision):
        list(simulate(world, bad, NoiseSpec()))


def test_same_seed_identical_streams(tmp_path):
    spec, traj = _scenario("corridor")
    paths = []
    for k in range(2):
        world, header, frames = generate(spec, traj, NOISY)
        paths.append(tmp_path / f"obs{k}.jsonl")
        write_observations(paths[-1], header, frames)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    _, _, other = generate(spec, traj, replace(NOISY, seed=8))
    assert other[5].odometry != frames[5].odometry


def _gates(cam: Pose, m, noise: NoiseSpec) -> bool:
    # independent restatement: range, field of view, board facing the camera
    ray = m.center - cam.t
    dist = np.linalg.norm(ray)
    in_range = 0 < dist <= noise.max_range
    angle = math.acos(np.clip(cam.R[:, 2] @ ray / dist, -1, 1))
    return bool(in_range and angle <= noise.fov_half_angle and m.pose.R[:, 2] @ ray < 0)


def test_visibility_gates_exact():
    spec, traj = _scenario("office")
    world, _, frames = generate(spec, traj, NOISY)
    for obs in frames[::3]:
        seen = {mid for mid, _, _ in obs.markers}
        expect = {m.id for m in world.truth.markers.values() if _gates(obs.ground_truth, m, NOISY)}
        assert seen == expect


def test_backfacing_and_behind_never_detected():
    spec, traj = _scenario("loop")
    world, _, frames = generate(spec, traj, NoiseSpec())
    for obs in frames:
        cam = obs.ground_truth
        for mid, Z, _ in obs.markers:
            m = world.truth.markers[mid]
            assert (cam.R.T @ (m.center - cam.t))[2] > 0
            assert m.pose.R[:, 2] @ (m.center - cam.t) < 0


def test_detections_monotone_in_range():
    spec, traj = _scenario("corridor")
    counts = []
    prev = None
    for r in (2.0, 4.0, 6.0, 9.0):
        _, _, frames = generate(spec, traj, replace(NOISY, max_range=r))
        sets = [({m for m, _, _ in f.markers}, {p for p, _ in f.points}) for f in frames]
        if prev is not None:
            assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(prev, sets))
        prev = sets
        counts.append(sum(len(a) + len(b) for a, b in sets))
    assert counts == sorted(counts) and counts[0] < counts[-1]


def test_noise_independent_per_detection():
    spec, traj = _scenario("corridor")
    _, _, a = generate(spec, traj, replace(NOISY, max_range=4.0))
    _, _, b = generate(spec, traj, replace(NOISY, max_range=8.0))
    for fa, fb in zip(a, b):
        zb = {mid: Z for mid, Z, _ in fb.markers}
        for mid, Z, _ in fa.markers:
            assert Z == zb[mid]


def test_noiseless_observations_consistent():
    spec, traj = _scenario("corridor")
    world, header, frames = generate(spec, traj, NoiseSpec())
    for prev, cur in zip(frames, frames[1:]):
        assert (prev.ground_truth @ cur.odometry).allclose(cur.ground_truth, atol=1e-12)
    for obs in frames:
        for mid, Z, _ in obs.markers:
            assert (obs.ground_truth @ Z).allclose(world.truth.markers[mid].pose, atol=1e-12)


def test_noiseless_graph_cost_at_truth():
    spec, traj = _scenario("office")
    world, header, frames = generate(spec, traj, NoiseSpec())
    p = Pipeline(PipelineConfig(), world.dictionary, header.initial_pose)
    gt = {}
    for obs in frames:
        if p.process_frame(obs):
            gt[p.last_kf] = obs.ground_truth
    truth = dict(p.states)
    for k, v in p.states.items():
        kind, i = k
        if kind == F.KF:
            truth[k] = gt[i]
        elif kind == F.MARKER:
            truth[k] = world.truth.markers[i].pose
        elif kind == F.POINT:
            truth[k] = world.truth.points[i].position
    for k in p.states:
        if k[0] == F.WALL:
            mid = p.map.walls[k[1]].markers[0]
            truth[k] = world.truth.walls[world.truth.wall_of_marker(mid)].state
    for r in p.map.rooms.values():
        planes = [truth[(F.WALL, w)] for w in r.walls]
        if r.kind == FOUR_WALL:
            truth[(F.ROOM, r.id)] = F.four_wall_room_center(*(F.angles_to_plane(w) for w in planes))
        else:
            c = world.truth.markers[r.anchor_marker].center
            truth[(F.ROOM, r.id)] = F.two_wall_room_center(*(F.angles_to_plane(w) for w in planes), c)
    assert len(p.map.rooms) == 2 and len(p.graph.of_kind(F.POINT_PROJ)) > 0
    assert marginal_cost(p.graph, truth) < 1e-18


def test_record_round_trip(tmp_path):
    spec, traj = _scenario("corridor")
    _, header, frames = generate(spec, traj, NOISY)
    path = tmp_path / "obs.jsonl"
    assert write_observations(path, header, frames) == len(frames)
    h2, back = read_observations(path)
    assert h2.initial_pose == header.initial_pose and h2.intrinsics == header.intrinsics
    assert len(back) == len(frames)
    for a, b in zip(frames, back):
        assert a.timestamp == b.timestamp and a.odometry == b.odometry and a.ground_truth == b.ground_truth
        assert [(m, Z, s) for m, Z, s in a.markers] == [(m, Z, s) for m, Z, s in b.markers]
        assert all(i == j and np.array_equal(u, v) for (i, u), (j, v) in zip(a.points, b.points))


def test_record_errors(tmp_path):
    path = tmp_path / "obs.jsonl"
    header = StreamHeader(Pose.identity())
    write_observations(path, header, [])
    lines = path.read_text().splitlines()
    path.write_text(lines[0] + "\n" + '{"t": 0.0, "odom": [1, 2]}\n')
    with pytest.raises(MalformedLine, match=":2"):
        read_observations(path)
    path.write_text('{"format_version": 9}\n')
    with pytest.raises(MalformedLine, match=":1"):
        read_observations(path)
    path.write_text("")
    with pytest.raises(MalformedLine):
        read_observations(path)


def test_config_errors(tmp_path):
    p = tmp_path / "w.json"
    p.write_text('{\n "format_version": 1,\n "walls": [\n}\n')
    with pytest.raises(ConfigError, match=r"w\.json:4"):
        load_json(p)
    p.write_text(json.dumps({"format_version": 2}))
    with pytest.raises(ConfigError, match="format_version"):
        load_json(p)
    p.write_text(json.dumps({"format_version": 1, "walls": [{"id": 0, "corner": [0, 0], "extent": [1, 1], "normal": "+x"}], "markers": []}))
    with pytest.raises(ConfigError, match=r"walls\[0\]\.corner"):
        load_world(p)
    p.write_text(json.dumps({"format_version": 1, "odom_trans": 0.1, "typo": 1}))
    with pytest.raises(ConfigError, match="typo"):
        load_noise(p)
    p.write_text(json.dumps({"format_version": 1, "odom_trans": [0.1, 0.1, 0.01], "seed": 4}))
    n = load_noise(p)
    assert n.odom_trans == (0.1, 0.1, 0.01) and n.seed == 4
    with pytest.raises(ConfigError):
        load_json(tmp_path / "missing.json")


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec(odom_trans=-1.0)
    with pytest.raises(ConfigError):
        NoiseSpec(max_range=0.0)
    with pytest.raises(ConfigError):
        NoiseSpec(odom_rot=(0.1, 0.2))


def test_odometry_sigmas_in_camera_axes():
    n = NoiseSpec(odom_trans=(1.0, 2.0, 3.0), odom_rot=(4.0, 5.0, 6.0))
    # camera x, y, z = robot -y, -z, +x
    np.testing.assert_array_equal(n.odometry_sigmas(), [5.0, 6.0, 4.0, 2.0, 3.0, 1.0])
