# -*- coding: utf-8 -*-
"""
Similarity alignment between corresponded point sets (Umeyama) and a
point-to-point ICP that refines a similarity with Umeyama updates.
"""
from __future__ import annotations

import logging
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from geometry.pointcloud import PointCloud, Trajectory
from geometry.sim3 import Sim3
from utils.errors import RankDeficiencyError

logger = logging.getLogger(__name__)

Alignable = Union[Trajectory, PointCloud, np.ndarray]


def _as_points(x: Alignable) -> np.ndarray:
    if isinstance(x, Trajectory):
        return x.positions()
    if isinstance(x, PointCloud):
        return x.points
    return np.asarray(x, dtype=float).reshape(-1, 3)


def umeyama_align(src: Alignable, dst: Alignable, with_scale: bool = True) -> Sim3:
    """
    Least-squares similarity T minimising sum ||dst_i - T(src_i)||^2.

    Args:
        src: Source points (index-matched with dst).
        dst: Destination points.
        with_scale: If False the returned scale is fixed to 1.

    Returns:
        The aligning Sim3.

    Raises:
        RankDeficiencyError: Cardinality mismatch, fewer than 3 points, or
            collinear / coincident input.
    """
    x = _as_points(src)
    y = _as_points(dst)
    if x.shape != y.shape:
        raise RankDeficiencyError(f"correspondence mismatch: {x.shape[0]} vs {y.shape[0]} points")
    n = x.shape[0]
    if n < 3:
        raise RankDeficiencyError(f"need at least 3 correspondences, got {n}")

    mean_x = x.mean(axis=0)
    mean_y = y.mean(axis=0)
    xc = x - mean_x
    yc = y - mean_y
    var_x = float(np.mean(np.sum(xc * xc, axis=1)))
    cov = yc.T @ xc / n

    U, d, Vt = np.linalg.svd(cov)
    scale_ref = max(float(d[0]), var_x, 1e-300)
    if var_x <= 1e-18 or d[1] <= 1e-12 * scale_ref:
        raise RankDeficiencyError("degenerate correspondences (collinear or coincident points)")

    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    c = float(np.trace(np.diag(d) @ S) / var_x) if with_scale else 1.0
    t = mean_y - c * (R @ mean_x)
    return Sim3.from_rotation_matrix(R, t, c)


def icp_sim3(src: Alignable, dst: Alignable, iterations: int = 30,
             max_correspondence: Optional[float] = None, with_scale: bool = True,
             initial: Optional[Sim3] = None, tolerance: float = 1e-10) -> Sim3:
    """Point-to-point ICP with similarity updates. Returns the transform mapping src onto dst."""
    x = _as_points(src)
    y = _as_points(dst)
    T = Sim3.identity() if initial is None else initial
    if len(x) < 3 or len(y) < 3:
        return T
    tree = cKDTree(y)
    for it in range(iterations):
        moved = T.act(x)
        dist, idx = tree.query(moved)
        mask = np.ones(len(x), dtype=bool) if max_correspondence is None else dist <= max_correspondence
        if int(mask.sum()) < 3:
            logger.debug(f"ICP stopped at iteration {it}: {int(mask.sum())} correspondences")
            break
        try:
            delta = umeyama_align(moved[mask], y[idx[mask]], with_scale=with_scale)
        except RankDeficiencyError:
            break
        T = delta.compose(T)
        step = (np.linalg.norm(delta.translation) + delta.rotation_angle() + abs(np.log(delta.scale)))
        if step < tolerance:
            break
    return T
