"""Compare the compiled and numpy kernel backends.

Times three levels: the block Cholesky solve of a synthetic pose-graph
system, normal-equation assembly (scatter-add), and a full global
optimization of the noisy office scenario. Run with ``python3
benchmarks/bench_kernels.py``; ``--quick`` uses smaller sizes.
"""

from __future__ import annotations

import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from markerslam import kernels
from markerslam.linsys import BlockSystem
from markerslam.optimizer import optimize
from markerslam.pipeline import Pipeline, PipelineConfig
from markerslam.sim import NoiseSpec, generate, load_trajectory, load_world

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "markerslam" / "scenarios"


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def pose_graph_system(n: int, loops: int, seed: int = 0) -> BlockSystem:
    """Chain of ``n`` 6-dof blocks plus random loop edges, filled SPD."""
    rng = np.random.default_rng(seed)
    pairs = [(i, i + 1) for i in range(n - 1)]
    pairs += [tuple(sorted(rng.choice(n, 2, replace=False))) for _ in range(loops)]
    sysm = BlockSystem([6] * n, pairs)
    for i, j in pairs:
        J = rng.normal(size=(6, 12))
        H = J.T @ J
        # each stored block once; block_index handles the transposed storage
        for (a, va), (b, vb) in (((0, i), (0, i)), ((1, j), (1, j)), ((0, i), (1, j))):
            sysm.add(sysm.block_index(va, vb).ravel(), H[6 * a : 6 * a + 6, 6 * b : 6 * b + 6].ravel())
    sysm.values[sysm.diag_idx] += 1.0
    sysm.rhs[:] = rng.normal(size=sysm.dim)
    return sysm


def office_problem():
    world, header, frames = generate(
        load_world(SCENARIOS / "office_world.json"),
        load_trajectory(SCENARIOS / "office_traj.json"),
        NoiseSpec(odom_trans=0.01, odom_rot=0.005, marker_trans=0.02, marker_rot=0.03, pixel=1.0, seed=1),
    )
    cfg = PipelineConfig(final_global=False)
    p = Pipeline(cfg, world.dictionary, header.initial_pose)
    for obs in frames:
        p.process_frame(obs)
    return p


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller problems, fewer repeats")
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    args = ap.parse_args(argv)
    n, loops = (300, 30) if args.quick else (2000, 200)
    repeat = 2 if args.quick else args.repeat

    if "native" not in kernels.BACKENDS:
        print("compiled extension not built; only the numpy backend is available")
    rows = []
    sysm = pose_graph_system(n, loops)
    rng = np.random.default_rng(1)
    idx = rng.integers(0, sysm.nnz, size=200_000)
    vals = rng.normal(size=idx.size)
    pipe = office_problem()
    active = pipe.graph.factors
    gcfg = replace(pipe.cfg.global_, gauge=0, max_iterations=10)

    previous = kernels.backend
    solutions = {}
    try:
        for name in kernels.BACKENDS:
            kernels.use_backend(name)
            t_solve = _best(lambda: sysm.solve(1e-3), repeat)
            solutions[name] = sysm.solve(1e-3)
            buf = np.zeros(sysm.nnz)
            t_scatter = _best(lambda: kernels.scatter_add(buf, idx, vals), repeat)
            t_opt = _best(lambda: optimize(active, pipe.states, gcfg), max(1, repeat // 2))
            rows.append((name, t_solve, t_scatter, t_opt))
    finally:
        kernels.use_backend(previous)

    print(f"system: {n} blocks of 6, {loops} loop edges, {sysm.nnz} stored scalars")
    print(f"office graph: {len(active)} factors, {len(pipe.states)} variables, 10 LM iterations")
    print(f"{'backend':<8} {'cholesky+solve':>15} {'scatter 200k':>13} {'global opt':>11}")
    for name, a, b, c in rows:
        print(f"{name:<8} {a * 1e3:>12.2f} ms {b * 1e3:>10.2f} ms {c:>9.2f} s")
    if len(rows) == 2:
        (_, a0, b0, c0), (_, a1, b1, c1) = rows
        print(f"{'speedup':<8} {a1 / a0:>14.1f}x {b1 / b0:>12.1f}x {c1 / c0:>10.1f}x")
        diff = np.abs(solutions["native"] - solutions["python"]).max()
        print(f"max solution difference between backends: {diff:.2e}")


if __name__ == "__main__":
    main()
