# -*- coding: utf-8 -*-
"""
Metric primitives: chamfer distance and absolute trajectory error.
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from geometry.alignment import umeyama_align
from geometry.pointcloud import PointCloud, Trajectory
from geometry.sim3 import Sim3
from utils.errors import InsufficientOverlapError, InvalidInputError

ALIGNMENT_MODES = ("none", "se3", "sim3")


def nearest_neighbor_distances(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    return cKDTree(reference).query(query)[0]


def brute_force_nn(query: np.ndarray, reference: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Exhaustive nearest-neighbour distances; reference implementation for tests."""
    query = np.asarray(query, float)
    reference = np.asarray(reference, float)
    out = np.empty(len(query))
    for start in range(0, len(query), chunk):
        block = query[start:start + chunk]
        d2 = np.sum((block[:, None, :] - reference[None, :, :]) ** 2, axis=2)
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def chamfer_distance(pred: PointCloud, gt: PointCloud, truncation: Optional[float] = None) -> float:
    """
    Symmetric chamfer distance: 0.5 * (mean NN pred->gt + mean NN gt->pred).

    Args:
        pred: Predicted cloud, already expressed in the ground-truth frame.
        gt: Ground-truth cloud.
        truncation: If set, per-point distances are clamped to this value.
    """
    a = pred.points if isinstance(pred, PointCloud) else np.asarray(pred, float).reshape(-1, 3)
    b = gt.points if isinstance(gt, PointCloud) else np.asarray(gt, float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise InvalidInputError("chamfer distance of an empty point cloud")
    d_ab = nearest_neighbor_distances(a, b)
    d_ba = nearest_neighbor_distances(b, a)
    if truncation is not None:
        d_ab = np.minimum(d_ab, truncation)
        d_ba = np.minimum(d_ba, truncation)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def associate_timestamps(est_times: np.ndarray, gt_times: np.ndarray,
                         max_diff: float = 0.02) -> np.ndarray:
    """
    Match every estimated timestamp to its nearest ground-truth timestamp.

    Pairs farther apart than max_diff are dropped, as are repeated matches of
    the same ground-truth stamp (the closest wins). Returns an (M, 2) array of
    (est index, gt index) sorted by estimate index.
    """
    est_times = np.asarray(est_times, float)
    gt_times = np.asarray(gt_times, float)
    if len(est_times) == 0 or len(gt_times) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pos = np.searchsorted(gt_times, est_times)
    left = np.clip(pos - 1, 0, len(gt_times) - 1)
    right = np.clip(pos, 0, len(gt_times) - 1)
    pick_left = np.abs(est_times - gt_times[left]) <= np.abs(gt_times[right] - est_times)
    nearest = np.where(pick_left, left, right)
    diff = np.abs(est_times - gt_times[nearest])

    best = {}
    for i in np.argsort(diff, kind="stable"):
        if diff[i] > max_diff:
            break
        j = int(nearest[i])
        if j not in best:
            best[j] = int(i)
    pairs = sorted((e, g) for g, e in best.items())
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def align_trajectories(est: Trajectory, gt: Trajectory, alignment: str = "sim3",
                       max_time_diff: float = 0.02) -> Tuple[Sim3, np.ndarray, np.ndarray]:
    """Associate and align. Returns (T aligning est onto gt, aligned est positions, gt positions)."""
    if alignment not in ALIGNMENT_MODES:
        raise InvalidInputError(f"unknown alignment '{alignment}', expected one of {ALIGNMENT_MODES}")
    pairs = associate_timestamps(est.timestamps, gt.timestamps, max_time_diff)
    if len(pairs) < 3:
        raise InsufficientOverlapError(f"only {len(pairs)} timestamp associations within {max_time_diff}s")
    p_est = est.positions()[pairs[:, 0]]
    p_gt = gt.positions()[pairs[:, 1]]
    if alignment == "none":
        T = Sim3.identity()
    else:
        T = umeyama_align(p_est, p_gt, with_scale=(alignment == "sim3"))
    return T, T.act(p_est), p_gt


def ate_rmse(est: Trajectory, gt: Trajectory, alignment: str = "sim3",
             max_time_diff: float = 0.02) -> float:
    """Translation RMSE after the requested alignment."""
    _, aligned, p_gt = align_trajectories(est, gt, alignment, max_time_diff)
    err = aligned - p_gt
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
