"""Levenberg-Marquardt over the factor graph.

Variables are addressed by keys ``(type, id)`` (see :mod:`markerslam.factors`);
their values are :class:`Pose` for keyframes and markers, :class:`WallAngles`
for walls and 3-vectors for rooms and points.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import factors as F
from .errors import DanglingReference, SingularSystem
from .geometry import Pose, WallAngles, so3_exp
from .linsys import BlockSystem


@dataclass
class OptimizeConfig:
    max_iterations: int = 50
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 1.0 / 3.0
    convergence_tol: float = 1e-10
    step_tol: float = 1e-12
    gradient_tol: float = 1e-14
    max_damping: float = 1e12
    huber_delta: float | None = None
    gauge: int | None = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.initial_damping > 0 and self.convergence_tol > 0):
            raise ValueError("damping and tolerance must be positive")
        if not (self.damping_up > 1.0 and 0.0 < self.damping_down < 1.0):
            raise ValueError("damping factors must satisfy up > 1 > down > 0")


@dataclass
class OptimizeReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    costs: list[float] = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    skipped_factors: int = 0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "costs": list(self.costs),
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "skipped_factors": self.skipped_factors,
        }


@dataclass
class FactorGraph:
    factors: list[F.Factor] = field(default_factory=list)

    def add(self, f: F.Factor) -> F.Factor:
        self.factors.append(f)
        return f

    def variables(self) -> list:
        seen: dict = {}
        for f in self.factors:
            for v in f.variables:
                seen.setdefault(v, None)
        return list(seen)

    def of_kind(self, kind: str) -> list[F.Factor]:
        return [f for f in self.factors if f.kind == kind]

    def __len__(self) -> int:
        return len(self.factors)


def robust_cost(s: np.ndarray, delta: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Huber-robustified squared norms and their IRLS weights."""
    if delta is None:
        return s, np.ones_like(s)
    d2 = delta * delta
    root = np.sqrt(np.maximum(s, d2))
    rho = np.where(s <= d2, s, 2.0 * delta * root - d2)
    w = np.where(s <= d2, 1.0, delta / root)
    return rho, w


class _Group:
    """All factors of one kind, with gather indices into the variable pools."""

    def __init__(self, kind: str, facs: list[F.Factor], pose_idx, vec_idx):
        self.kind = kind
        sig = F.SIGNATURE[kind]
        self.slot_pool = ["pose" if t in F.POSE_TYPES else "vec" for t in sig]
        self.slot_idx = [
            np.array([(pose_idx if pool == "pose" else vec_idx)[f.variables[s]] for f in facs], dtype=np.int64)
            for s, pool in enumerate(self.slot_pool)
        ]
        self.info = np.stack([f.information for f in facs])
        self.keys = [f.variables for f in facs]
        if kind in (F.ODOMETRY, F.MARKER_OBS):
            self.Rz = np.stack([f.measurement.R for f in facs])
            self.tz = np.stack([f.measurement.t for f in facs])
        elif kind == F.POINT_PROJ:
            self.z = np.stack([np.asarray(f.measurement[0], dtype=float) for f in facs])
            self.K = np.stack([f.measurement[1].as_array() for f in facs])

    def linearize(self, R: np.ndarray, t: np.ndarray, V: np.ndarray):
        args = []
        for pool, idx in zip(self.slot_pool, self.slot_idx):
            if pool == "pose":
                args.extend([R[idx], t[idx]])
            else:
                args.append(V[idx])
        k = self.kind
        if k in (F.ODOMETRY, F.MARKER_OBS):
            return F.lin_between(*args, self.Rz, self.tz)
        if k == F.POINT_PROJ:
            return F.lin_point_proj(*args, self.K, self.z)
        if k == F.MARKER_WALL:
            return F.lin_marker_wall(*args)
        if k == F.ROOM2:
            return F.lin_room2(*args)
        return F.lin_room4(*args)


class _Linearization:
    def __init__(self, cost, parts, skipped):
        self.cost = cost
        self.parts = parts  # per group: (r, J list, weights)
        self.skipped = skipped


class Problem:
    """Packed representation of a graph slice, reusable across iterations."""

    def __init__(self, factors: Iterable[F.Factor], states: Mapping, fixed: Iterable = (), build_system: bool = True):
        facs = list(factors)
        fixed = set(fixed)
        order: dict = {}
        for f in facs:
            for v in f.variables:
                if v not in states:
                    raise DanglingReference(f"factor {f.kind} references missing variable {v}")
                order.setdefault(v, None)
        self.keys = list(order)
        self.pose_keys = [k for k in self.keys if k[0] in F.POSE_TYPES]
        self.vec_keys = [k for k in self.keys if k[0] not in F.POSE_TYPES]
        pose_idx = {k: i for i, k in enumerate(self.pose_keys)}
        vec_idx = {k: i for i, k in enumerate(self.vec_keys)}
        self.R = np.stack([states[k].R for k in self.pose_keys]) if self.pose_keys else np.zeros((0, 3, 3))
        self.t = np.stack([states[k].t for k in self.pose_keys]) if self.pose_keys else np.zeros((0, 3))
        self.V = (
            np.stack([_vec_value(states[k]) for k in self.vec_keys]) if self.vec_keys else np.zeros((0, 3))
        )
        self.is_wall = np.array([k[0] == F.WALL for k in self.vec_keys], dtype=bool)

        self.free = [k for k in self.keys if k not in fixed]
        block_of = {k: b for b, k in enumerate(self.free)}
        sizes = [F.VAR_DIM[k[0]] for k in self.free]

        by_kind: dict[str, list[F.Factor]] = defaultdict(list)
        for f in facs:
            if len(set(f.variables)) != len(f.variables):
                raise ValueError(f"{f.kind} factor repeats a variable: {f.variables}")
            by_kind[f.kind].append(f)
        self.groups = [_Group(k, by_kind[k], pose_idx, vec_idx) for k in F.KINDS if by_kind.get(k)]
        if not build_system:
            return

        pairs = set()
        for g in self.groups:
            blocks = [[block_of.get(v, -1) for v in keys] for keys in g.keys]
            g.blocks = np.array(blocks, dtype=np.int64).reshape(len(g.keys), -1)
            for row in blocks:
                fr = [b for b in row if b >= 0]
                for a in range(len(fr)):
                    for b in range(a + 1, len(fr)):
                        pairs.add((min(fr[a], fr[b]), max(fr[a], fr[b])))
        self.system = BlockSystem(sizes, sorted(pairs))
        self._build_scatter(block_of)

        # scalar positions of every free variable's step inside the solution
        self.free_pose = np.array([pose_idx[k] for k in self.free if k in pose_idx], dtype=np.int64)
        self.free_pose_x = np.array(
            [self.system.rhs_index(block_of[k]) for k in self.free if k in pose_idx], dtype=np.int64
        ).reshape(-1, 6)
        self.free_vec = np.array([vec_idx[k] for k in self.free if k in vec_idx], dtype=np.int64)
        self.free_vec_x = np.array(
            [self.system.rhs_index(block_of[k]) for k in self.free if k in vec_idx], dtype=np.int64
        ).reshape(-1, 3)

    def _build_scatter(self, block_of) -> None:
        sysm = self.system
        for g in self.groups:
            dims = [F.VAR_DIM[t] for t in F.SIGNATURE[g.kind]]
            g.pair_scatter = []
            g.rhs_scatter = []
            nslot = len(dims)
            for a in range(nslot):
                for b in range(a, nslot):
                    rows = np.flatnonzero((g.blocks[:, a] >= 0) & (g.blocks[:, b] >= 0))
                    if len(rows):
                        idx = sysm.block_indices(g.blocks[rows, a], g.blocks[rows, b], dims[a], dims[b])
                        g.pair_scatter.append((a, b, rows, idx.reshape(len(rows), -1)))
                rows = np.flatnonzero(g.blocks[:, a] >= 0)
                if len(rows):
                    g.rhs_scatter.append((a, rows, sysm.rhs_indices(g.blocks[rows, a], dims[a])))

    # -- evaluation -----------------------------------------------------------

    def linearize(self, R, t, V, huber: float | None) -> _Linearization:
        cost = 0.0
        parts = []
        skipped = 0
        for g in self.groups:
            r, J, valid = g.linearize(R, t, V)
            s = np.einsum("ni,nij,nj->n", r, g.info, r)
            rho, w = robust_cost(s, huber)
            cost += float(np.sum(rho))
            skipped += int(np.count_nonzero(~valid))
            parts.append((r, J, w))
        return _Linearization(cost, parts, skipped)

    def assemble(self, lin: _Linearization) -> float:
        """Fill the normal equations; returns the max-norm of the gradient."""
        sysm = self.system
        sysm.zero()
        for g, (r, J, w) in zip(self.groups, lin.parts):
            W = w[:, None, None] * g.info
            JtW = [np.swapaxes(Js, 1, 2) @ W for Js in J]
            for a, b, rows, idx in g.pair_scatter:
                C = JtW[a][rows] @ J[b][rows]
                sysm.add(idx, C.reshape(len(rows), -1))
            for a, rows, idx in g.rhs_scatter:
                grad = np.einsum("nij,nj->ni", JtW[a][rows], r[rows])
                sysm.add_rhs(idx, -grad)
        return float(np.max(np.abs(sysm.rhs))) if sysm.dim else 0.0

    def retract(self, x: np.ndarray):
        R, t, V = self.R.copy(), self.t.copy(), self.V.copy()
        if len(self.free_pose):
            d = x[self.free_pose_x]
            Rf = R[self.free_pose]
            R[self.free_pose] = Rf @ so3_exp(d[:, :3])
            t[self.free_pose] += np.einsum("nij,nj->ni", Rf, d[:, 3:])
        if len(self.free_vec):
            V[self.free_vec] += x[self.free_vec_x]
            walls = self.free_vec[self.is_wall[self.free_vec]]
            if len(walls):
                V[walls, 0] = _wrap(V[walls, 0])
                V[walls, 1] = np.clip(V[walls, 1], -0.5 * math.pi, 0.5 * math.pi)
        return R, t, V

    def step_norm_ok(self, x: np.ndarray, tol: float) -> bool:
        scale = math.sqrt(float(np.sum(self.t**2) + np.sum(self.V**2)))
        return float(np.linalg.norm(x)) <= tol * (scale + tol)

    def export(self, states: Mapping) -> dict:
        out = dict(states)
        for k, i in zip(self.pose_keys, range(len(self.pose_keys))):
            out[k] = Pose.from_rt(self.R[i], self.t[i])
        for k, i in zip(self.vec_keys, range(len(self.vec_keys))):
            v = self.V[i]
            out[k] = WallAngles.from_array(v) if k[0] == F.WALL else v.copy()
        return out


def _wrap(a: np.ndarray) -> np.ndarray:
    w = np.remainder(a + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w <= -math.pi, w + 2.0 * math.pi, w)


def _vec_value(v) -> np.ndarray:
    if isinstance(v, WallAngles):
        return v.as_array()
    return np.asarray(v, dtype=float).reshape(3)


def optimize(
    graph: FactorGraph | Iterable[F.Factor],
    states: Mapping,
    cfg: OptimizeConfig | None = None,
    fixed: Iterable = (),
) -> tuple[dict, OptimizeReport]:
    """Minimize the total weighted cost; returns updated states and a report.

    ``fixed`` lists variable keys held constant in addition to the gauge
    keyframe ``("kf", cfg.gauge)``.
    """
    cfg = cfg or OptimizeConfig()
    facs = graph.factors if isinstance(graph, FactorGraph) else list(graph)
    fixed = set(fixed)
    if cfg.gauge is not None:
        gkey = (F.KF, cfg.gauge)
        if gkey not in states:
            raise DanglingReference(f"gauge keyframe {cfg.gauge} not in states")
        fixed.add(gkey)

    report = OptimizeReport()
    if not facs:
        report.converged, report.stop_reason = True, "empty graph"
        return dict(states), report

    prob = Problem(facs, states, fixed)
    lin = prob.linearize(prob.R, prob.t, prob.V, cfg.huber_delta)
    cost = lin.cost
    report.initial_cost = report.final_cost = cost
    report.costs.append(cost)
    report.skipped_factors = lin.skipped
    if not prob.free:
        report.converged, report.stop_reason = True, "no free variables"
        return dict(states), report
    gmax = prob.assemble(lin)
    if cost == 0.0 or gmax <= cfg.gradient_tol:
        report.converged, report.stop_reason = True, "gradient tolerance"
        return dict(states), report

    lam = cfg.initial_damping
    accepted = 0
    while report.iterations < cfg.max_iterations:
        report.iterations += 1
        x = prob.system.solve(lam)
        if x is None:
            lam *= cfg.damping_up
            if lam > cfg.max_damping:
                report.stop_reason = "damping overflow"
                break
            continue
        R, t, V = prob.retract(x)
        trial = prob.linearize(R, t, V, cfg.huber_delta)
        if np.isfinite(trial.cost) and trial.cost <= cost:
            rel = (cost - trial.cost) / cost
            prob.R, prob.t, prob.V = R, t, V
            lin, cost = trial, trial.cost
            accepted += 1
            report.costs.append(cost)
            lam = max(lam * cfg.damping_down, 1e-15)
            if cost == 0.0 or rel < cfg.convergence_tol:
                report.converged, report.stop_reason = True, "function tolerance"
                break
            if prob.step_norm_ok(x, cfg.step_tol):
                report.converged, report.stop_reason = True, "step tolerance"
                break
            gmax = prob.assemble(lin)
            if gmax <= cfg.gradient_tol:
                report.converged, report.stop_reason = True, "gradient tolerance"
                break
        else:
            if prob.step_norm_ok(x, cfg.step_tol):
                report.converged, report.stop_reason = True, "step tolerance"
                break
            lam *= cfg.damping_up
            if lam > cfg.max_damping:
                report.stop_reason = "damping overflow"
                break
    else:
        report.stop_reason = "max iterations"

    report.final_cost = cost
    report.skipped_factors = lin.skipped
    if accepted == 0 and report.stop_reason == "damping overflow":
        if prob.system.solve(cfg.max_damping) is None:
            raise SingularSystem("normal equations singular beyond damping repair", report)
    return prob.export(states), report


def marginal_cost(graph: FactorGraph | Iterable[F.Factor], states: Mapping, huber_delta: float | None = None) -> float:
    """Total cost ``sum(rho(r^T Lambda r))``."""
    facs = graph.factors if isinstance(graph, FactorGraph) else list(graph)
    if not facs:
        return 0.0
    prob = Problem(facs, states, build_system=False)
    return prob.linearize(prob.R, prob.t, prob.V, huber_delta).cost
