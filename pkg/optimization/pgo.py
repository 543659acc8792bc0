# -*- coding: utf-8 -*-
"""
Sim(3) pose-graph optimisation of the room layer.

Each factor constrains a pair of room reference poses with a measured
relative transform Z_ij. The residual is r = log(Z^-1 o T_i^-1 o T_j) and
poses are updated on the right, T <- T o exp(delta). Levenberg-Marquardt
iterates on the normal equations with analytic Jacobians

    J_j = Jr^-1(r)
    J_i = -Jr^-1(r) Ad(T_j^-1 o T_i)

where Jr is the exact right Jacobian of Sim(3). The lowest room id of every
connected component is held fixed. Object poses are stored relative to their
room and therefore follow the optimised room poses without being touched.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse import coo_matrix, identity as sparse_identity
from scipy.sparse.csgraph import connected_components as _cc
from scipy.sparse.linalg import spsolve

from geometry.sim3 import TANGENT_DIM, Sim3, right_jacobian_inverse, sim3_exp, sim3_log
from mapping.scene_graph import RoomPoseGraph, SceneGraph
from utils.errors import InvalidInputError, UnconstrainedVariablesError

logger = logging.getLogger(__name__)

FACTOR_MODES = ("per_estimate", "consensus")
DENSE_LIMIT = 200
FD_STEP = 1e-6


@dataclass
class PGOConfig:
    max_iters: int = 100
    lambda_init: float = 1e-4
    cost_tol: float = 1e-12
    step_tol: float = 1e-12
    anchor: int = -1  # -1: lowest room id of each connected component
    mode: str = "per_estimate"
    loop_weight: float = 1.0
    huber_delta: float = 0.0  # 0 disables the robust kernel

    def validate(self) -> None:
        if self.max_iters < 0 or self.lambda_init <= 0:
            raise InvalidInputError("pgo.max_iters must be >= 0 and pgo.lambda_init > 0")
        if self.mode not in FACTOR_MODES:
            raise InvalidInputError(f"pgo.mode must be one of {FACTOR_MODES}, got '{self.mode}'")
        if self.loop_weight <= 0 or self.huber_delta < 0:
            raise InvalidInputError("pgo.loop_weight must be > 0 and pgo.huber_delta >= 0")


@dataclass(frozen=True, eq=False)
class Factor:
    i: int
    j: int
    measurement: Sim3
    information: np.ndarray = field(default_factory=lambda: np.eye(TANGENT_DIM))
    kind: str = "transition"

    def __post_init__(self):
        if self.i == self.j:
            raise InvalidInputError(f"factor endpoints must differ, got ({self.i}, {self.j})")
        info = np.asarray(self.information, dtype=float)
        if info.shape != (TANGENT_DIM, TANGENT_DIM):
            raise InvalidInputError(f"factor information must be 7x7, got {info.shape}")
        object.__setattr__(self, "information", info)


@dataclass
class OptReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    damping_trace: List[float] = field(default_factory=list)
    cost_trace: List[float] = field(default_factory=list)  # cost of every accepted iterate
    anchors: List[int] = field(default_factory=list)
    n_factors: int = 0
    n_poses: int = 0
    elapsed: float = 0.0
    solver: str = "dense"


def residual(factor: Factor, T_i: Sim3, T_j: Sim3) -> np.ndarray:
    """r = log(Z^-1 o T_i^-1 o T_j) as a (rho, phi, sigma) vector."""
    return sim3_log(factor.measurement.inverse().compose(T_i.inverse()).compose(T_j))


def factor_jacobians(factor: Factor, T_i: Sim3, T_j: Sim3) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual and its Jacobians with respect to right perturbations of T_i and T_j."""
    r = residual(factor, T_i, T_j)
    jr_inv = right_jacobian_inverse(r)
    J_j = jr_inv
    J_i = -jr_inv @ T_j.inverse().compose(T_i).adjoint()
    return r, J_i, J_j


def numeric_jacobian_check(factor: Factor, T_i: Sim3, T_j: Sim3, h: float = FD_STEP) -> float:
    """Max abs deviation between analytic and central-difference Jacobians."""
    _, J_i, J_j = factor_jacobians(factor, T_i, T_j)
    analytic = np.hstack([J_i, J_j])
    numeric = np.zeros_like(analytic)
    for k in range(2 * TANGENT_DIM):
        d = np.zeros(2 * TANGENT_DIM)
        d[k] = h
        plus = residual(factor, T_i.compose(sim3_exp(d[:7])), T_j.compose(sim3_exp(d[7:])))
        minus = residual(factor, T_i.compose(sim3_exp(-d[:7])), T_j.compose(sim3_exp(-d[7:])))
        numeric[:, k] = (plus - minus) / (2.0 * h)
    return float(np.max(np.abs(analytic - numeric)))


def build_factors(view: RoomPoseGraph, mode: str = "per_estimate", loop_weight: float = 1.0) -> List[Factor]:
    """One factor per raw edge estimate, or one per edge consensus."""
    if mode not in FACTOR_MODES:
        raise InvalidInputError(f"unknown factor mode '{mode}'")
    factors = []
    for _, edge in view.edges:
        weight = loop_weight if edge.kind == "loop_closure" else 1.0
        measurements = edge.estimates if mode == "per_estimate" else [edge.consensus]
        for z in measurements:
            factors.append(Factor(edge.rooms[0], edge.rooms[1], z, weight * edge.information, edge.kind))
    return factors


def connected_components(node_ids: Sequence[int], factors: Sequence[Factor]) -> List[List[int]]:
    """Components of the factor graph, each sorted, ordered by their lowest id."""
    ids = sorted(node_ids)
    index = {n: k for k, n in enumerate(ids)}
    if not ids:
        return []
    rows = [index[f.i] for f in factors]
    cols = [index[f.j] for f in factors]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
    _, labels = _cc(adj, directed=False)
    groups: Dict[int, List[int]] = {}
    for n in ids:
        groups.setdefault(int(labels[index[n]]), []).append(n)
    return sorted(groups.values(), key=lambda g: g[0])


def _robust_weight(e: float, delta: float) -> float:
    return 1.0 if delta <= 0.0 or e <= delta else delta / e


def _robust_cost(e: float, delta: float) -> float:
    if delta <= 0.0 or e <= delta:
        return e * e
    return 2.0 * delta * e - delta * delta


def total_cost(poses: Dict[int, Sim3], factors: Sequence[Factor], huber_delta: float = 0.0) -> float:
    cost = 0.0
    for f in factors:
        r = residual(f, poses[f.i], poses[f.j])
        cost += _robust_cost(float(np.sqrt(max(r @ f.information @ r, 0.0))), huber_delta)
    return cost


def _normal_equations(poses, factors, index, huber_delta, sparse):
    n = len(index) * TANGENT_DIM
    g = np.zeros(n)
    blocks = []
    for f in factors:
        r, J_i, J_j = factor_jacobians(f, poses[f.i], poses[f.j])
        e = float(np.sqrt(max(r @ f.information @ r, 0.0)))
        W = _robust_weight(e, huber_delta) * f.information
        for a, Ja in ((f.i, J_i), (f.j, J_j)):
            if a not in index:
                continue
            sa = index[a] * TANGENT_DIM
            g[sa:sa + TANGENT_DIM] += Ja.T @ W @ r
            for b, Jb in ((f.i, J_i), (f.j, J_j)):
                if b in index:
                    blocks.append((sa, index[b] * TANGENT_DIM, Ja.T @ W @ Jb))
    if sparse:
        rows, cols, vals = [], [], []
        local_r, local_c = np.meshgrid(np.arange(TANGENT_DIM), np.arange(TANGENT_DIM), indexing="ij")
        for sa, sb, block in blocks:
            rows.append((sa + local_r).ravel())
            cols.append((sb + local_c).ravel())
            vals.append(block.ravel())
        H = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsc()
    else:
        H = np.zeros((n, n))
        for sa, sb, block in blocks:
            H[sa:sa + TANGENT_DIM, sb:sb + TANGENT_DIM] += block
    return H, g


def _solve(H, g, lam: float, sparse: bool) -> np.ndarray:
    if sparse:
        return -spsolve((H + lam * sparse_identity(H.shape[0], format="csc")).tocsc(), g)
    A = H + lam * np.eye(H.shape[0])
    try:
        return -cho_solve(cho_factor(A), g)
    except LinAlgError:
        return -np.linalg.lstsq(A, g, rcond=None)[0]


def optimize_poses(poses: Dict[int, Sim3], factors: Sequence[Factor],
                   config: Optional[PGOConfig] = None) -> Tuple[Dict[int, Sim3], OptReport]:
    """
    Levenberg-Marquardt over a pose dictionary; returns new poses and the report.

    Raises:
        UnconstrainedVariablesError: When there are no factors at all.
        InvalidInputError: Factors referencing unknown poses, or a bad config.
    """
    config = config or PGOConfig()
    config.validate()
    start = time.perf_counter()
    factors = list(factors)
    if not factors:
        raise UnconstrainedVariablesError(f"{len(poses)} poses but no factors to constrain them")
    for f in factors:
        if f.i not in poses or f.j not in poses:
            raise InvalidInputError(f"factor ({f.i}, {f.j}) references an unknown pose")

    components = connected_components(list(poses), factors)
    anchors = []
    free: List[int] = []
    for comp in components:
        if len(comp) < 2:
            continue
        anchor = config.anchor if config.anchor in comp else comp[0]
        anchors.append(anchor)
        free.extend(n for n in comp if n != anchor)
    index = {n: k for k, n in enumerate(sorted(free))}
    sparse = len(index) > DENSE_LIMIT

    poses = dict(poses)
    delta = config.huber_delta
    cost = total_cost(poses, factors, delta)
    report = OptReport(iterations=0, initial_cost=cost, final_cost=cost, converged=False,
                       cost_trace=[cost], anchors=anchors, n_factors=len(factors), n_poses=len(poses),
                       solver="sparse" if sparse else "dense")
    if not index or cost == 0.0:
        report.converged = True
        report.elapsed = time.perf_counter() - start
        return poses, report

    lam = config.lambda_init
    for it in range(1, config.max_iters + 1):
        report.iterations = it
        H, g = _normal_equations(poses, factors, index, delta, sparse)
        accepted = False
        while lam < 1e16:
            report.damping_trace.append(lam)
            step = _solve(H, g, lam, sparse)
            candidate = dict(poses)
            for n, k in index.items():
                candidate[n] = poses[n].compose(sim3_exp(step[k * TANGENT_DIM:(k + 1) * TANGENT_DIM]))
            new_cost = total_cost(candidate, factors, delta)
            if new_cost < cost:
                accepted = True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            report.converged = True
            break
        decrease = cost - new_cost
        poses, cost = candidate, new_cost
        report.cost_trace.append(cost)
        if decrease <= config.cost_tol * max(cost + decrease, 1e-300) or \
                np.linalg.norm(step) <= config.step_tol or cost <= 1e-30:
            report.converged = True
            break

    report.final_cost = cost
    report.elapsed = time.perf_counter() - start
    logger.debug(f"PGO: {report.iterations} iterations, cost {report.initial_cost:.3e} -> {cost:.3e}, "
                 f"{len(factors)} factors, {len(index)} free poses ({report.solver})")
    return poses, report


def optimize(graph, config: Optional[PGOConfig] = None) -> OptReport:
    """
    Optimise room reference poses in place.

    Accepts a SceneGraph or its RoomPoseGraph view. Rooms without any factor
    keep their pose.
    """
    config = config or PGOConfig()
    view = graph.room_pose_graph_view() if isinstance(graph, SceneGraph) else graph
    factors = build_factors(view, config.mode, config.loop_weight)
    poses, report = optimize_poses(view.poses(), factors, config)
    for rid, pose in poses.items():
        view.set_pose(rid, pose)
    logger.info(f"Optimised {len(view)} rooms with {report.n_factors} factors: cost "
                f"{report.initial_cost:.4g} -> {report.final_cost:.4g} in {report.iterations} iterations "
                f"({report.elapsed * 1000:.1f} ms)")
    return report
