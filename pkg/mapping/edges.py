# -*- coding: utf-8 -*-
"""
Room-to-room edges.

A transition edge is estimated from image pairs straddling a room boundary:
for a pair (p, q) with local poses T_ri_p and T_rj_q and a two-view estimate
T_pq, the edge estimate is T_ri_rj = T_ri_p o T~_pq o T_rj_q^-1, where T~_pq
is the two-view estimate re-expressed in the units of the two rooms using the
frames' median depths. Per-pair estimates are kept on the edge and fused into
a consensus by an iterated tangent-space mean with one round of outlier
rejection.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from geometry.sim3 import Sim3, sim3_exp, sim3_log
from mapping.scene_graph import RoomEdge, RoomNode
from utils.errors import BranchAmbiguityError, EdgeEstimationError, InvalidInputError, LookupFailure

logger = logging.getLogger(__name__)

MEAN_MAX_ITERS = 10
MEAN_TOL = 1e-9
OUTLIER_FACTOR = 3.0


@dataclass(frozen=True)
class TransitionPair:
    frame_p: int
    frame_q: int


def _pair_list(self_frames: Sequence[int], side_i: Sequence[int], side_j: Sequence[int],
               k: int) -> List[TransitionPair]:
    pairs: List[TransitionPair] = []
    seen = set()
    for f in self_frames:
        if (f, f) not in seen:
            seen.add((f, f))
            pairs.append(TransitionPair(f, f))
    for p in side_i:
        for q in side_j:
            if p != q and (p, q) not in seen:
                seen.add((p, q))
                pairs.append(TransitionPair(p, q))
    return pairs[:k * k]


def select_transition_pairs(room_i: RoomNode, room_j: RoomNode, k: int = 3) -> List[TransitionPair]:
    """
    Up to k*k pairs from the last k reconstructed frames of room i and the
    first k of room j. Frames reconstructed in both rooms are self-paired first.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    frames_i, frames_j = room_i.frame_ids(), room_j.frame_ids()
    if not frames_i or not frames_j:
        raise InvalidInputError(f"cannot pair empty rooms {room_i.id} and {room_j.id}")
    shared = sorted(set(frames_i) & set(frames_j))[-k:]
    return _pair_list(shared, frames_i[-k:], frames_j[:k], k)


def _time_of(room: RoomNode, frame_id: int) -> float:
    return room.frame_timestamps.get(frame_id, float(frame_id))


def _nearest_in_time(room: RoomNode, other: RoomNode, k: int) -> List[int]:
    other_times = np.array(sorted(_time_of(other, f) for f in other.frame_ids()))
    scored = []
    for f in room.frame_ids():
        t = _time_of(room, f)
        pos = np.searchsorted(other_times, t)
        near = [abs(other_times[c] - t) for c in (pos - 1, pos) if 0 <= c < len(other_times)]
        scored.append((min(near), f))
    return sorted(f for _, f in sorted(scored)[:k])


def select_boundary_pairs(room_a: RoomNode, room_b: RoomNode, k: int = 3) -> List[TransitionPair]:
    """
    Pairs between two rooms that need not be consecutive in the stream.

    Takes the k reconstructed frames of each room closest in time to any
    frame of the other. For consecutive rooms this picks the same frames as
    select_transition_pairs.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if not room_a.frame_ids() or not room_b.frame_ids():
        raise InvalidInputError(f"cannot pair empty rooms {room_a.id} and {room_b.id}")
    near_a = _nearest_in_time(room_a, room_b, k)
    near_b = _nearest_in_time(room_b, room_a, k)
    shared = [f for f in near_a if f in room_b.local_frame_poses]
    return _pair_list(shared, near_a, near_b, k)


def _depth_ratio(room_depth: Optional[float], pair_depth: float) -> float:
    if room_depth is None or room_depth <= 0.0 or pair_depth <= 0.0:
        return 1.0
    return room_depth / pair_depth


def bridge_pair_scale(pose: Sim3, alpha_p: float, alpha_q: float) -> Sim3:
    """S(alpha_p) o pose o S(alpha_q)^-1."""
    return Sim3(pose.rotation, alpha_p * pose.translation, pose.scale * alpha_p / alpha_q)


def estimate_transition_edges(room_i: RoomNode, room_j: RoomNode, pairs: Sequence[TransitionPair],
                              provider, kind: str = "transition") -> RoomEdge:
    """
    One edge estimate per valid pair, fused into the consensus.

    Raises:
        EdgeEstimationError: When no pair yields a valid two-view estimate.
    """
    estimates: List[Sim3] = []
    for pair in pairs:
        p, q = pair.frame_p, pair.frame_q
        if p not in room_i.local_frame_poses or q not in room_j.local_frame_poses:
            raise LookupFailure(f"pair ({p}, {q}) is not reconstructed in rooms ({room_i.id}, {room_j.id})")
        rel = provider.relative_pose(p, q)
        if not rel.valid:
            logger.debug(f"Pair ({p}, {q}) invalid for edge ({room_i.id}, {room_j.id})")
            continue
        alpha_i = _depth_ratio(room_i.frame_depths.get(p), rel.depth_p)
        alpha_j = _depth_ratio(room_j.frame_depths.get(q), rel.depth_q)
        bridged = bridge_pair_scale(rel.pose, alpha_i, alpha_j)
        estimates.append(room_i.local_frame_poses[p].compose(bridged).compose(room_j.local_frame_poses[q].inverse()))
    if not estimates:
        raise EdgeEstimationError(f"no valid pair among {len(pairs)} for rooms ({room_i.id}, {room_j.id})")
    logger.debug(f"Edge ({room_i.id}, {room_j.id}): {len(estimates)}/{len(pairs)} valid pairs")
    return RoomEdge((room_i.id, room_j.id), estimates, aggregate_edge(estimates), kind=kind)


def _tangent_mean(mean: Sim3, estimates: Sequence[Sim3]) -> Sim3:
    for _ in range(MEAN_MAX_ITERS):
        deltas = []
        inv = mean.inverse()
        for e in estimates:
            try:
                deltas.append(sim3_log(inv.compose(e)))
            except BranchAmbiguityError:
                continue
        if not deltas:
            return mean
        step = np.mean(deltas, axis=0)
        mean = mean.compose(sim3_exp(step))
        if np.linalg.norm(step) < MEAN_TOL:
            break
    return mean


def _distances(mean: Sim3, estimates: Sequence[Sim3]) -> np.ndarray:
    inv = mean.inverse()
    out = []
    for e in estimates:
        try:
            out.append(float(np.linalg.norm(sim3_log(inv.compose(e)))))
        except BranchAmbiguityError:
            out.append(np.inf)
    return np.array(out)


def aggregate_edge(estimates: Sequence[Sim3]) -> Sim3:
    """
    Geodesic mean of the estimates, started at the first one.

    Estimates farther than 3x the median tangent distance from the mean are
    dropped once and the mean is recomputed.
    """
    if not estimates:
        raise InvalidInputError("aggregate_edge needs at least one estimate")
    if len(estimates) == 1:
        return estimates[0]
    mean = _tangent_mean(estimates[0], estimates)
    dist = _distances(mean, estimates)
    threshold = max(OUTLIER_FACTOR * float(np.median(dist)), MEAN_TOL)
    inliers = [e for e, d in zip(estimates, dist) if d <= threshold]
    if len(inliers) < len(estimates):
        logger.debug(f"aggregate_edge dropped {len(estimates) - len(inliers)} of {len(estimates)} estimates")
        mean = _tangent_mean(inliers[0], inliers)
    return mean


def chain_overlap_edge(window_a: RoomNode, window_b: RoomNode) -> RoomEdge:
    """
    Edge between two consecutive sliding windows from their shared frames.

    Each shared frame f gives T_a_b = L_a(f) o S(d_a(f) / d_b(f)) o L_b(f)^-1.

    Raises:
        EdgeEstimationError: When the windows share no reconstructed frame.
    """
    shared = sorted(set(window_a.local_frame_poses) & set(window_b.local_frame_poses))
    if not shared:
        raise EdgeEstimationError(f"windows {window_a.id} and {window_b.id} share no reconstructed frame")
    estimates = []
    for f in shared:
        ratio = _depth_ratio(window_a.frame_depths.get(f), window_b.frame_depths.get(f, 0.0))
        estimates.append(window_a.local_frame_poses[f]
                         .compose(Sim3.from_scale(ratio))
                         .compose(window_b.local_frame_poses[f].inverse()))
    return RoomEdge((window_a.id, window_b.id), estimates, aggregate_edge(estimates), kind="transition")
