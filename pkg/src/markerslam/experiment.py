"""Paired full-vs-baseline runs over several simulator seeds."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentConfig
from .evalkit import Trajectory, ate, emit_error_series, export_trajectory
from .pipeline import BASELINE, FULL, run_sequence
from .sim import build_world, load_trajectory, load_world, simulate

# RMSE differences below this are round-off, not a difference between modes
RMSE_FLOOR = 1e-9


@dataclass
class SeedResult:
    seed: int
    rmse: dict[str, float]

    @property
    def improvement(self) -> float:
        """Relative RMSE reduction of full mode over the baseline."""
        b, f = self.rmse[BASELINE], self.rmse[FULL]
        if max(b, f) < RMSE_FLOOR:
            return 0.0
        return (b - f) / b

    @property
    def full_not_worse(self) -> bool:
        return self.rmse[FULL] <= max(self.rmse[BASELINE], RMSE_FLOOR)


@dataclass
class Summary:
    results: list[SeedResult]

    @property
    def median_improvement(self) -> float:
        return statistics.median(r.improvement for r in self.results)

    @property
    def full_not_worse(self) -> float:
        """Fraction of seeds where full RMSE <= baseline RMSE."""
        return sum(r.full_not_worse for r in self.results) / len(self.results)

    def within(self, band: float) -> float:
        """Fraction of seeds with full RMSE within ``band`` (relative) of baseline."""
        ok = 0
        for r in self.results:
            b, f = r.rmse[BASELINE], r.rmse[FULL]
            ok += abs(f - b) <= band * b or max(b, f) < RMSE_FLOOR
        return ok / len(self.results)

    def table(self) -> str:
        lines = ["seed,rmse_full,rmse_baseline,improvement"]
        for r in self.results:
            lines.append(f"{r.seed},{r.rmse[FULL]!r},{r.rmse[BASELINE]!r},{r.improvement!r}")
        return "\n".join(lines) + "\n"


def run_seed(cfg: ExperimentConfig, world, traj_spec, seed: int, out: Path | None = None) -> SeedResult:
    noise = replace(cfg.noise, seed=seed)
    frames = list(simulate(world, traj_spec, noise))
    gt = Trajectory([f.timestamp for f in frames], [f.ground_truth for f in frames])
    rmse = {}
    for mode in (FULL, BASELINE):
        _, est, _ = run_sequence(frames, cfg.pipeline_config(mode), world.dictionary, frames[0].ground_truth, noise.intrinsics)
        res = ate(est, gt, cfg.align)
        rmse[mode] = res.rmse
        if out is not None:
            d = out / f"seed_{seed:04d}"
            d.mkdir(parents=True, exist_ok=True)
            export_trajectory(est, d / f"trajectory_{mode}.txt")
            emit_error_series(res, d / f"errors_{mode}.csv")
    return SeedResult(seed, rmse)


def run_experiment(cfg: ExperimentConfig, out: Path | None = None, progress=None) -> Summary:
    world = build_world(load_world(cfg.world))
    traj_spec = load_trajectory(cfg.trajectory)
    results = []
    for seed in cfg.seeds:
        r = run_seed(cfg, world, traj_spec, seed, out)
        results.append(r)
        if progress is not None:
            progress(r)
    return Summary(results)
