# -*- coding: utf-8 -*-
"""
Object nodes from multi-view mask tracklets.

Masks are sets of pixel indices on a fixed W x H grid whose pixels index the
rows of each frame's per-frame point set. Tracklets that overlap in image
space on a shared frame are merged, lifted into the room frame through the
frame's local pose, fused by voxel downsampling, and finally fused again in
3D when two lifted objects occupy the same voxels.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from geometry.pointcloud import PointCloud, occupied_voxels, transform_points, voxel_downsample
from geometry.sim3 import Sim3
from mapping.scene_graph import ObjectNode, SceneGraph
from utils.errors import InvalidInputError, LookupFailure

logger = logging.getLogger(__name__)


@dataclass
class ObjectConfig:
    iou_threshold: float = 0.5
    min_views: int = 2
    min_points: int = 50
    voxel_size: float = 0.02
    fuse_threshold: float = 0.25
    fuse_voxel_size: float = 0.1


@dataclass(frozen=True, eq=False)
class MaskObservation:
    frame_id: int
    mask: np.ndarray  # sorted unique pixel indices
    feature: np.ndarray

    def __post_init__(self):
        m = np.unique(np.asarray(self.mask, dtype=np.int64).reshape(-1))
        if m.size == 0:
            raise InvalidInputError(f"empty mask on frame {self.frame_id}")
        f = np.asarray(self.feature, dtype=float).reshape(-1)
        if abs(np.linalg.norm(f) - 1.0) > 1e-6:
            raise InvalidInputError(f"observation feature on frame {self.frame_id} is not unit norm")
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "feature", f)


@dataclass
class MaskTracklet:
    id: int
    observations: List[MaskObservation]
    seed_label: str = ""

    def frame_ids(self) -> List[int]:
        return sorted({o.frame_id for o in self.observations})

    def masks_on(self, frame_id: int) -> List[np.ndarray]:
        return [o.mask for o in self.observations if o.frame_id == frame_id]


@dataclass
class LiftedObject:
    point_cloud: PointCloud  # room frame
    pose: Sim3
    feature: np.ndarray
    support_count: int
    label: str = ""
    source_tracklets: List[int] = field(default_factory=list)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.intersect1d(a, b, assume_unique=True).size
    if inter == 0:
        return 0.0
    return inter / (a.size + b.size - inter)


def _union_groups(n: int, links: List[Tuple[int, int]]) -> np.ndarray:
    if not links:
        return np.arange(n)
    rows, cols = zip(*links)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    return labels


def merge_tracklets(tracklets: Sequence[MaskTracklet], iou_threshold: float = 0.5) -> List[MaskTracklet]:
    """
    Merge tracklets whose masks overlap (IoU >= threshold) on any shared frame.

    The closure is transitive. Each merged tracklet keeps the smallest member
    id and its label; the output is sorted by id, independent of input order.
    """
    ordered = sorted(tracklets, key=lambda t: t.id)
    by_frame: Dict[int, List[Tuple[int, np.ndarray]]] = {}
    for k, t in enumerate(ordered):
        for obs in t.observations:
            by_frame.setdefault(obs.frame_id, []).append((k, obs.mask))

    links = set()
    for entries in by_frame.values():
        for a in range(len(entries)):
            for b in range(a + 1, len(entries)):
                ka, ma = entries[a]
                kb, mb = entries[b]
                if ka != kb and (ka, kb) not in links and mask_iou(ma, mb) >= iou_threshold:
                    links.add((ka, kb))
    groups = _union_groups(len(ordered), sorted(links))

    merged: Dict[int, List[MaskTracklet]] = {}
    for k, t in enumerate(ordered):
        merged.setdefault(int(groups[k]), []).append(t)
    out = []
    for members in merged.values():
        head = members[0]
        observations = sorted((o for t in members for o in t.observations),
                              key=lambda o: (o.frame_id, o.mask[0], o.mask.size))
        out.append(MaskTracklet(id=head.id, observations=observations, seed_label=head.seed_label))
    return sorted(out, key=lambda t: t.id)


def lift_tracklet(tracklet: MaskTracklet, reconstruction, config: Optional[ObjectConfig] = None
                  ) -> Optional[LiftedObject]:
    """
    Lift a tracklet into the room frame of `reconstruction`.

    Observations on frames without per-frame points are skipped. Returns None
    (tracklet rejected) when fewer than `min_views` frames contribute or fewer
    than `min_points` points survive voxel fusion.
    """
    config = config or ObjectConfig()
    chunks = []
    views = set()
    for obs in tracklet.observations:
        frame_points = reconstruction.per_frame_points.get(obs.frame_id)
        frame_pose = reconstruction.frame_poses.get(obs.frame_id)
        if frame_points is None or frame_pose is None:
            continue
        mask = obs.mask[obs.mask < len(frame_points)]
        if mask.size == 0:
            continue
        chunks.append(frame_pose.act(frame_points.points[mask]))
        views.add(obs.frame_id)
    if len(views) < config.min_views:
        logger.debug(f"Tracklet {tracklet.id} rejected: {len(views)} views < {config.min_views}")
        return None
    cloud = voxel_downsample(PointCloud(np.concatenate(chunks)), config.voxel_size)
    if len(cloud) < config.min_points:
        logger.debug(f"Tracklet {tracklet.id} rejected: {len(cloud)} points < {config.min_points}")
        return None
    feature = np.mean([o.feature for o in tracklet.observations], axis=0)
    feature = feature / np.linalg.norm(feature)
    centroid = cloud.centroid()
    return LiftedObject(
        point_cloud=cloud,
        pose=Sim3.from_translation(centroid),
        feature=feature,
        support_count=len(views),
        label=tracklet.seed_label,
        source_tracklets=[tracklet.id],
    )


def voxel_iou(a: PointCloud, b: PointCloud, voxel_size: float) -> float:
    va = occupied_voxels(a.points, voxel_size)
    vb = occupied_voxels(b.points, voxel_size)
    union = len(va | vb)
    return len(va & vb) / union if union else 0.0


def fuse_overlapping_objects(lifted: Sequence[LiftedObject], overlap_threshold: float = 0.25,
                             voxel_size: float = 0.1, fuse_voxel: float = 0.02) -> List[LiftedObject]:
    """Fuse lifted objects whose occupied-voxel sets overlap with IoU above the threshold."""
    lifted = list(lifted)
    links = []
    for a in range(len(lifted)):
        for b in range(a + 1, len(lifted)):
            if voxel_iou(lifted[a].point_cloud, lifted[b].point_cloud, voxel_size) > overlap_threshold:
                links.append((a, b))
    if not links:
        return lifted
    groups = _union_groups(len(lifted), links)
    fused: Dict[int, List[LiftedObject]] = {}
    for k, obj in enumerate(lifted):
        fused.setdefault(int(groups[k]), []).append(obj)
    out = []
    for members in fused.values():
        if len(members) == 1:
            out.append(members[0])
            continue
        cloud = voxel_downsample(PointCloud.concatenate([m.point_cloud for m in members]), fuse_voxel)
        weights = np.array([m.support_count for m in members], dtype=float)
        feature = np.sum([w * m.feature for w, m in zip(weights, members)], axis=0)
        out.append(LiftedObject(
            point_cloud=cloud,
            pose=Sim3.from_translation(cloud.centroid()),
            feature=feature / np.linalg.norm(feature),
            support_count=int(weights.sum()),
            label=members[0].label,
            source_tracklets=sorted(t for m in members for t in m.source_tracklets),
        ))
        logger.debug(f"Fused {len(members)} lifted objects from tracklets {out[-1].source_tracklets}")
    return out


def populate_room(graph: SceneGraph, room_id: int, tracklets: Sequence[MaskTracklet], reconstruction,
                  config: Optional[ObjectConfig] = None) -> List[int]:
    """Create one object node (and containment edge) per accepted object of a room."""
    config = config or ObjectConfig()
    if room_id not in graph.rooms:
        raise LookupFailure(f"unknown room {room_id}")
    if not tracklets:
        return []
    merged = merge_tracklets(tracklets, config.iou_threshold)
    lifted = [obj for obj in (lift_tracklet(t, reconstruction, config) for t in merged) if obj is not None]
    lifted = fuse_overlapping_objects(lifted, config.fuse_threshold, config.fuse_voxel_size, config.voxel_size)
    ids = []
    for obj in lifted:
        to_object_frame = obj.pose.inverse()
        node = ObjectNode(
            parent_room=room_id,
            pose=obj.pose,
            point_cloud=transform_points(to_object_frame, obj.point_cloud),
            feature=obj.feature,
            label=obj.label,
            support_count=obj.support_count,
        )
        ids.append(graph.add_object(room_id, node))
    logger.info(f"Room {room_id}: {len(tracklets)} tracklets -> {len(merged)} merged -> {len(ids)} objects")
    return ids


# --- tracklet files ---

def rle_encode(mask: np.ndarray) -> List[List[int]]:
    """Run-length encode sorted pixel indices as [start, length] runs."""
    m = np.unique(np.asarray(mask, dtype=np.int64))
    if m.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(m) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [m.size]])
    return [[int(m[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs: Sequence[Sequence[int]]) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, s + n, dtype=np.int64) for s, n in runs])


def write_tracklets(path: Path, tracklets: Sequence[MaskTracklet], width: int, height: int) -> None:
    doc = {
        "width": int(width),
        "height": int(height),
        "tracklets": [
            {
                "id": t.id,
                "seed_label": t.seed_label,
                "observations": [
                    {"frame_id": int(o.frame_id), "mask": rle_encode(o.mask),
                     "feature": [float(v) for v in o.feature]}
                    for o in t.observations
                ],
            }
            for t in tracklets
        ],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def read_tracklets(path: Path) -> Tuple[List[MaskTracklet], int, int]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    width, height = int(doc["width"]), int(doc["height"])
    tracklets = []
    for td in doc["tracklets"]:
        observations = []
        for od in td["observations"]:
            mask = rle_decode(od["mask"])
            if mask.size and (mask.min() < 0 or mask.max() >= width * height):
                raise InvalidInputError(f"tracklet {td['id']}: mask outside the {width}x{height} grid")
            observations.append(MaskObservation(int(od["frame_id"]), mask, np.asarray(od["feature"], float)))
        tracklets.append(MaskTracklet(int(td["id"]), observations, td.get("seed_label", "")))
    return tracklets, width, height
