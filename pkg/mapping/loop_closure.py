# -*- coding: utf-8 -*-
"""
Revisit detection and room merging.

Finalized rooms are stored in a database of frame features. A new room that
shares more than `tau_r` feature pairs with cosine similarity at least
`tau_s` with a stored room is treated as a revisit: both batches are merged
and reconstructed together, every edge to the neighbours of the two rooms is
re-estimated against the merged node, and the graph is rewired only if all
of those edges could be estimated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from geometry.sim3 import Sim3
from mapping.edges import aggregate_edge, chain_overlap_edge, estimate_transition_edges, select_boundary_pairs
from mapping.room_builder import RoomBuilder
from mapping.room_segmenter import FrameRecord
from mapping.scene_graph import RoomEdge, RoomNode, SceneGraph
from reconstruction.provider import ReconstructionProvider, RoomReconstruction
from utils.errors import (ConfigError, EdgeEstimationError, InvalidInputError, LookupFailure,
                          ReconstructionFailedError, StructuralError)

logger = logging.getLogger(__name__)


@dataclass
class LoopClosureConfig:
    tau_s: float = 0.85
    tau_r: int = 10

    def validate(self) -> None:
        if not -1.0 <= self.tau_s <= 1.0:
            raise ConfigError(f"tau_s must lie in [-1, 1], got {self.tau_s}", "loop_closure.tau_s")
        if self.tau_r < 0:
            raise ConfigError(f"tau_r must be >= 0, got {self.tau_r}", "loop_closure.tau_r")


def _unit_rows(features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if features.size and np.any(norms == 0.0):
        raise InvalidInputError("room features contain a zero vector")
    return features / np.where(norms == 0.0, 1.0, norms)


class RoomDatabase:
    """Room id -> matrix of unit frame features (one row per room-labelled frame)."""

    def __init__(self, config: Optional[LoopClosureConfig] = None):
        self.config = config or LoopClosureConfig()
        self.config.validate()
        self.entries: Dict[int, np.ndarray] = {}

    @property
    def tau_s(self) -> float:
        return self.config.tau_s

    @property
    def tau_r(self) -> int:
        return self.config.tau_r

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, room_id: int) -> bool:
        return room_id in self.entries

    def add(self, room: RoomNode) -> None:
        if room.id is None:
            raise InvalidInputError("cannot store a room without an id")
        matrix = room.features_matrix()
        if matrix.size == 0:
            logger.debug(f"Room {room.id} has no features; not stored")
            return
        self.entries[room.id] = _unit_rows(matrix)

    def remove(self, room_id: int) -> None:
        self.entries.pop(room_id, None)

    def pair_count(self, a: np.ndarray, b: np.ndarray) -> int:
        """Number of cross pairs (one row of each) with cosine similarity >= tau_s."""
        a, b = _unit_rows(a), _unit_rows(b)
        if a.size == 0 or b.size == 0:
            return 0
        return int(np.count_nonzero(a @ b.T >= self.tau_s))

    def counts(self, room: RoomNode) -> Dict[int, int]:
        features = room.features_matrix()
        if features.size == 0:
            return {rid: 0 for rid in self.entries}
        return {rid: self.pair_count(features, stored) for rid, stored in sorted(self.entries.items())}

    def snapshot(self) -> Dict[int, np.ndarray]:
        return {rid: m.copy() for rid, m in self.entries.items()}


def query(db: RoomDatabase, new_room: RoomNode) -> Optional[int]:
    """
    Best stored match for `new_room`, or None.

    A stored room qualifies when its pair count exceeds tau_r; the highest
    count wins, ties going to the lower room id.
    """
    best: Optional[Tuple[int, int]] = None
    for rid, count in db.counts(new_room).items():
        if rid == new_room.id or count <= db.tau_r:
            continue
        if best is None or count > best[1]:
            best = (rid, count)
    if best is not None:
        logger.info(f"Room {new_room.id} matches stored room {best[0]} ({best[1]} feature pairs)")
    return None if best is None else best[0]


@dataclass
class MergeCandidate:
    original_rooms: Tuple[int, int]
    merged_node: RoomNode
    reverified_edges: List[RoomEdge] = field(default_factory=list)
    failed_neighbors: List[int] = field(default_factory=list)
    reconstruction: Optional[RoomReconstruction] = None

    @property
    def verified(self) -> bool:
        return not self.failed_neighbors


def _initial_pose(graph: SceneGraph, merged: RoomNode, first_room: RoomNode, edges: List[RoomEdge]) -> Sim3:
    if edges:
        edge = edges[0]
        return graph.rooms[edge.rooms[1]].reference_pose.compose(edge.consensus.inverse())
    try:
        overlap = chain_overlap_edge(first_room, merged)
        return first_room.reference_pose.compose(overlap.consensus)
    except EdgeEstimationError:
        return first_room.reference_pose


def _carried_estimates(graph: SceneGraph, original: RoomNode, merged: RoomNode, k: int) -> List[Sim3]:
    """Estimates of the edges between `original` and room k, re-expressed against the merged node."""
    try:
        # merged room in the original room's frame, from their shared frames
        offset_inv = chain_overlap_edge(original, merged).consensus.inverse()
    except EdgeEstimationError:
        return []
    out: List[Sim3] = []
    for edge in graph.room_edges.values():
        if edge.rooms == (original.id, k):
            estimates = edge.estimates
        elif edge.rooms == (k, original.id):
            estimates = [e.inverse() for e in edge.estimates]
        else:
            continue
        out.extend(offset_inv.compose(e) for e in estimates)
    return out


def merge_rooms(graph: SceneGraph, i: int, j: int, provider: ReconstructionProvider,
                frames: Mapping[int, FrameRecord], batch_size: int = 60, k_pairs: int = 3,
                cloud_voxel: float = 0.02) -> MergeCandidate:
    """
    Reconstruct the union of two rooms' batches and re-estimate their neighbours' edges.

    The merged batch is every frame either room reconstructed. Each re-estimated
    edge also keeps the estimates of the original edges, carried over through the
    frames the merged node shares with the original room. The graph is not
    modified. The merged node takes the id the graph would
    assign next.

    Raises:
        StructuralError: i == j.
        LookupFailure: Unknown room id or a batch frame missing from `frames`.
        ReconstructionFailedError: The merged batch could not be reconstructed.
    """
    if i == j:
        raise StructuralError(f"cannot merge room {i} with itself")
    room_i, room_j = graph.room(i), graph.room(j)
    union_ids = sorted(set(room_i.batch_frame_ids) | set(room_j.batch_frame_ids))
    missing = [f for f in union_ids if f not in frames]
    if missing:
        raise LookupFailure(f"frames {missing[:5]} of rooms ({i}, {j}) are unknown")
    labelled = sorted(set(room_i.room_frame_ids) | set(room_j.room_frame_ids))
    # frames either room already reconstructed; the merge never thins them out
    sent_ids = sorted(set(room_i.local_frame_poses) | set(room_j.local_frame_poses)) or union_ids

    builder = RoomBuilder(provider, batch_size=max(batch_size, len(sent_ids)), cloud_voxel=cloud_voxel)
    merged, reconstruction = builder.build([frames[f] for f in sent_ids], labelled, room_id=graph.next_room_id)
    if not merged.valid:
        raise ReconstructionFailedError(f"merged batch of rooms ({i}, {j}) could not be reconstructed")
    merged.merged_from = [i, j]
    merged.batch_frame_ids = union_ids
    merged.frame_features = {f: frames[f].feature for f in labelled if f in frames}
    merged.frame_timestamps = {f: frames[f].timestamp for f in union_ids}

    neighbors = sorted((set(graph.neighbors(i)) | set(graph.neighbors(j))) - {i, j})
    edges: List[RoomEdge] = []
    failed: List[int] = []
    for k in neighbors:
        room_k = graph.rooms[k]
        try:
            pairs = select_boundary_pairs(merged, room_k, k_pairs)
            edge = estimate_transition_edges(merged, room_k, pairs, provider, kind="loop_closure")
        except (EdgeEstimationError, InvalidInputError, LookupFailure) as e:
            logger.warning(f"Edge from merged room {merged.id} to room {k} could not be re-estimated: {e}")
            failed.append(k)
            continue
        carried = [e for room in (room_i, room_j) for e in _carried_estimates(graph, room, merged, k)]
        if carried:
            edge.estimates.extend(carried)
            edge.consensus = aggregate_edge(edge.estimates)
        edges.append(edge)

    merged.reference_pose = _initial_pose(graph, merged, room_i, edges)
    logger.info(f"Merge candidate {merged.id} from rooms ({i}, {j}): {len(edges)}/{len(neighbors)} "
                f"neighbour edges re-estimated")
    return MergeCandidate((i, j), merged, edges, failed, reconstruction)


def verify_and_apply(graph: SceneGraph, db: RoomDatabase, candidate: MergeCandidate) -> bool:
    """
    Rewire the graph around the merged node if every neighbour edge was re-estimated.

    On rejection neither the graph nor the database is touched.
    """
    i, j = candidate.original_rooms
    if not candidate.verified:
        logger.warning(f"Merge of rooms ({i}, {j}) rejected: neighbours {candidate.failed_neighbors} "
                       f"could not be re-verified")
        return False
    merged = candidate.merged_node
    graph.add_room(merged)
    for rid in (i, j):
        graph.remove_room(rid, reassign_to=merged.id)
        db.remove(rid)
    for edge in candidate.reverified_edges:
        graph.add_room_edge(edge)
    db.add(merged)
    logger.info(f"Merged rooms ({i}, {j}) into room {merged.id} with {len(candidate.reverified_edges)} edges")
    return True
