"""JSON run/experiment configuration files.

Pipeline section keys (all optional)::

    mode                "full" | "baseline"
    kf_translation      m
    kf_rotation_deg     degrees
    kf_on_new_marker    bool
    local_window        keyframes
    angle_gate_deg, distance_gate, revisit_window
    use_points          bool
    min_parallax_deg    degrees
    information         {factor kind: diagonal list or full matrix}
    local, global       {max_iterations, initial_damping, damping_up, damping_down,
                         convergence_tol, step_tol, gradient_tol, max_damping, huber_delta}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import factors as F
from .errors import ConfigError
from .optimizer import OptimizeConfig
from .pipeline import BASELINE, FULL, PipelineConfig
from .sim import NoiseSpec, load_json, noise_from_dict

_OPT_KEYS = {f.name for f in fields(OptimizeConfig)} - {"gauge"}
_PIPE_KEYS = {
    "mode", "kf_translation", "kf_rotation_deg", "kf_on_new_marker", "local_window", "angle_gate_deg",
    "distance_gate", "revisit_window", "use_points", "min_parallax_deg", "information", "local", "global",
}


def _information(kind: str, value, source: str) -> np.ndarray:
    if kind not in F.RESIDUAL_DIM:
        raise ConfigError(f"{source}: unknown factor kind {kind!r} in information")
    m = F.RESIDUAL_DIM[kind]
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: information[{kind!r}] must be numeric") from None
    if a.shape == (m,):
        a = np.diag(a)
    if a.shape != (m, m):
        raise ConfigError(f"{source}: information[{kind!r}] must be {m} diagonal values or a {m}x{m} matrix")
    if not (np.allclose(a, a.T, rtol=0.0, atol=1e-12) and np.all(np.linalg.eigvalsh(a) > 0)):
        raise ConfigError(f"{source}: information[{kind!r}] must be symmetric positive definite")
    return a


def _optimizer(doc, base: OptimizeConfig, source: str, where: str) -> OptimizeConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: {where} must be an object")
    unknown = set(doc) - _OPT_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown keys in {where}: {sorted(unknown)}")
    kw = {f.name: getattr(base, f.name) for f in fields(OptimizeConfig)}
    kw.update(doc)
    try:
        return OptimizeConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {where}: {exc}") from None


def pipeline_from_dict(doc: dict, source: str = "<config>", mode: str | None = None) -> PipelineConfig:
    unknown = set(doc) - _PIPE_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown pipeline keys {sorted(unknown)}")
    base = PipelineConfig()
    kw = {}
    plain = {"kf_translation", "kf_on_new_marker", "local_window", "distance_gate", "revisit_window", "use_points", "mode"}
    for key in plain & set(doc):
        kw[key] = doc[key]
    for key, target in (("kf_rotation_deg", "kf_rotation"), ("angle_gate_deg", "angle_gate"), ("min_parallax_deg", "min_parallax")):
        if key in doc:
            kw[target] = math.radians(float(doc[key]))
    if "information" in doc:
        info = doc["information"]
        if not isinstance(info, dict):
            raise ConfigError(f"{source}: information must be an object")
        kw["information"] = {k: _information(k, v, source) for k, v in info.items()}
    kw["local"] = _optimizer(doc.get("local", {}), base.local, source, "local")
    kw["global_"] = _optimizer(doc.get("global", {}), base.global_, source, "global")
    if mode is not None:
        kw["mode"] = mode
    try:
        return PipelineConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_pipeline_config(path, mode: str | None = None) -> PipelineConfig:
    doc = load_json(path)
    return pipeline_from_dict(doc.get("pipeline", {}), str(path), mode)


@dataclass
class ExperimentConfig:
    world: Path
    trajectory: Path
    noise: NoiseSpec
    seeds: list[int]
    pipeline: dict = field(default_factory=dict)
    align: str = "rigid"
    modes: tuple = (FULL, BASELINE)
    source: str = "<experiment>"

    def pipeline_config(self, mode: str) -> PipelineConfig:
        return pipeline_from_dict(self.pipeline, self.source, mode)


def load_experiment(path) -> ExperimentConfig:
    """Paths inside the file are resolved relative to the file's directory."""
    path = Path(path)
    doc = load_json(path)
    src = str(path)
    for key in ("world", "trajectory", "seeds"):
        if key not in doc:
            raise ConfigError(f"{src}: missing required key {key!r}")
    seeds = doc["seeds"]
    if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)):
        raise ConfigError(f"{src}: seeds must be a non-empty list of non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"{src}: seeds repeat")
    noise_doc = doc.get("noise", {})
    if not isinstance(noise_doc, dict):
        raise ConfigError(f"{src}: noise must be an object")
    noise = noise_from_dict(noise_doc, source=src)
    align = doc.get("align", "rigid")
    if align not in ("rigid", "none"):
        raise ConfigError(f"{src}: align must be 'rigid' or 'none'")
    pipe = doc.get("pipeline", {})
    pipeline_from_dict(pipe, src)  # validate early
    root = path.parent
    return ExperimentConfig(root / doc["world"], root / doc["trajectory"], noise, list(seeds), pipe, align, source=src)
