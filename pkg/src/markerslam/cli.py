"""Command-line entry point: simulate, slam, eval, experiment.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import kernels
from .config import load_experiment, load_pipeline_config
from .errors import DataError, NumericalError
from .evalkit import Trajectory, ate, emit_error_series, export_map, export_trajectory, import_trajectory
from .experiment import run_experiment
from .pipeline import BASELINE, FULL, PipelineConfig, run_sequence
from .semantic import RoomDictionary
from .sim import (
    NoiseSpec,
    StreamHeader,
    build_world,
    load_noise,
    load_trajectory,
    load_world,
    read_observations,
    simulate,
    write_observations,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such file")
    return p


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def cmd_simulate(args) -> int:
    world = build_world(load_world(_existing(args.world)))
    traj = load_trajectory(_existing(args.trajectory))
    noise = load_noise(_existing(args.noise)) if args.noise else NoiseSpec()
    if args.seed is not None:
        noise = replace(noise, seed=args.seed)
    frames = list(simulate(world, traj, noise))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_observations(out / "observations.jsonl", StreamHeader(frames[0].ground_truth, noise.intrinsics), frames)
    export_trajectory(Trajectory([f.timestamp for f in frames], [f.ground_truth for f in frames]), out / "groundtruth.txt")
    (out / "dictionary.txt").write_text(world.dictionary.dumps(), encoding="utf-8")
    export_map(world.truth, out / "groundtruth_map.json")
    print(f"{len(frames)} frames -> {out}")
    return EXIT_OK


def cmd_slam(args) -> int:
    header, frames = read_observations(_existing(args.observations))
    dictionary = RoomDictionary.load(_existing(args.dictionary)) if args.dictionary else RoomDictionary()
    cfg = load_pipeline_config(_existing(args.config), args.mode) if args.config else PipelineConfig(mode=args.mode or FULL)
    hmap, traj, events = run_sequence(frames, cfg, dictionary, header.initial_pose, header.intrinsics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_trajectory(traj, out / "trajectory.txt")
    export_map(hmap, out / "map.json")
    with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e) + "\n")
    print(f"{len(traj)} keyframes, {len(hmap.markers)} markers, {len(hmap.walls)} walls, {len(hmap.rooms)} rooms -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    est = import_trajectory(_existing(args.estimate))
    gt = import_trajectory(_existing(args.groundtruth))
    res = ate(est, gt, args.align)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ate_{args.label}.json").write_text(_dumps({"label": args.label, "align": args.align, **res.as_dict()}), encoding="utf-8")
    emit_error_series(res, out / f"errors_{args.label}.csv")
    print(f"{args.label}: rmse {res.rmse:.6g} m, std {res.std:.6g} m over {len(res.errors)} poses")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_experiment(_existing(args.config))
    if args.seeds:
        cfg.seeds = args.seeds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(r):
        print(f"seed {r.seed}: full {r.rmse[FULL]:.6g} m, baseline {r.rmse[BASELINE]:.6g} m", flush=True)

    summary = run_experiment(cfg, out if args.keep_runs else None, progress)
    (out / "summary.csv").write_text(summary.table(), encoding="utf-8")
    doc = {
        "seeds": [r.seed for r in summary.results],
        "median_improvement": summary.median_improvement,
        "full_not_worse_fraction": summary.full_not_worse,
        "within_20pct_fraction": summary.within(0.2),
    }
    (out / "summary.json").write_text(_dumps(doc), encoding="utf-8")
    print(f"median improvement {100 * summary.median_improvement:.1f}%, full <= baseline in {100 * summary.full_not_worse:.0f}% of seeds")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="markerslam", description="Marker-based hierarchical SLAM on simulated observation streams.")
    p.add_argument("--backend", choices=("native", "python"), help="numeric kernel implementation (default: native if built)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate an observation stream and its ground truth")
    s.add_argument("--world", required=True, help="world JSON file")
    s.add_argument("--trajectory", required=True, help="trajectory JSON file")
    s.add_argument("--noise", help="noise JSON file (default: noiseless)")
    s.add_argument("--seed", type=int, help="override the noise seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("slam", help="run the pipeline on an observation file")
    s.add_argument("--observations", required=True, help="observation JSON Lines file")
    s.add_argument("--dictionary", help="room dictionary file ('label: id,id,...' per line)")
    s.add_argument("--config", help="pipeline config JSON file")
    s.add_argument("--mode", choices=(FULL, BASELINE), help="override the configured mode (default: full)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_slam)

    s = sub.add_parser("eval", help="absolute trajectory error of an estimate")
    s.add_argument("--estimate", required=True, help="estimated trajectory file")
    s.add_argument("--groundtruth", required=True, help="ground-truth trajectory file")
    s.add_argument("--align", choices=("rigid", "none"), default="rigid", help="alignment before comparison")
    s.add_argument("--label", default="run", help="method label used in output file names")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="paired full-vs-baseline runs over several seeds")
    s.add_argument("--config", required=True, help="experiment JSON file (world, trajectory, noise, seeds, pipeline)")
    s.add_argument("--seeds", type=int, nargs="+", help="override the configured seed list")
    s.add_argument("--keep-runs", action="store_true", help="also write per-seed trajectories and error series")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend:
        try:
            kernels.use_backend(args.backend)
        except RuntimeError as exc:
            print(f"markerslam: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"markerslam: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        print(f"markerslam: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
