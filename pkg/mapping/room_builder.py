# -*- coding: utf-8 -*-
"""
Room node construction.

Turns a finalized batch (or a raw window of frames) into a RoomNode by
reconstructing it through the provider, and keeps the reconstruction of
every room so later stages (object lifting, merges) can reuse it without a
second provider call.
"""
from __future__ import annotations

import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geometry.pointcloud import PointCloud, voxel_downsample
from geometry.sim3 import Sim3
from mapping.room_segmenter import FrameRecord
from mapping.scene_graph import RoomNode
from reconstruction.provider import ReconstructionProvider, RoomReconstruction, reconstruct_with_retry
from utils.errors import InvalidInputError, ReconstructionFailedError

logger = logging.getLogger(__name__)


def room_cloud(reconstruction: RoomReconstruction, frame_ids: Sequence[int], voxel_size: float) -> PointCloud:
    """
    Voxel-downsampled union of the given frames' points in the batch frame.

    Falls back to the provider's batch cloud when none of the frames carries
    per-frame points.
    """
    chunks = [reconstruction.frame_poses[f].act(reconstruction.per_frame_points[f].points)
              for f in frame_ids
              if f in reconstruction.per_frame_points and f in reconstruction.frame_poses
              and not reconstruction.per_frame_points[f].is_empty()]
    if not chunks:
        return reconstruction.points
    return voxel_downsample(PointCloud(np.concatenate(chunks)), voxel_size)


class RoomBuilder:
    """
    Builds room nodes from frame batches through a reconstruction provider.

    Attributes:
        provider: Source of batch reconstructions.
        batch_size: Frames sent per provider call (batches are subsampled to it).
        cloud_voxel: Voxel edge for room clouds, in batch units.
        reconstructions: Room id -> reconstruction of every valid room built so far.
        failed_rooms: Ids of rooms whose batch could not be reconstructed.
        provider_seconds: Wall time spent inside provider calls.
    """

    def __init__(self, provider: ReconstructionProvider, batch_size: int = 60, cloud_voxel: float = 0.02):
        if batch_size < 2:
            raise InvalidInputError(f"batch_size must be >= 2, got {batch_size}")
        self.provider = provider
        self.batch_size = batch_size
        self.cloud_voxel = cloud_voxel
        self.reconstructions: Dict[int, RoomReconstruction] = {}
        self.failed_rooms: List[int] = []
        self.provider_seconds = 0.0

    def build(self, frames: Sequence[FrameRecord], room_frame_ids: Optional[Sequence[int]] = None,
              room_id: Optional[int] = None) -> Tuple[RoomNode, Optional[RoomReconstruction]]:
        """
        Reconstruct `frames` and wrap the result in a RoomNode.

        Returns the node and the reconstruction behind it (None for invalid nodes).

        `room_frame_ids` are the frames labelled as this room; only they
        contribute features and cloud points. A reconstruction failure after
        the retry yields an invalid node (no poses, empty cloud) instead of
        raising.
        """
        if not frames:
            raise InvalidInputError("cannot build a room from an empty batch")
        frames = list(frames)
        batch_ids = [f.id for f in frames]
        labelled = list(room_frame_ids) if room_frame_ids is not None else batch_ids
        by_id = {f.id: f for f in frames}

        start = time.perf_counter()
        try:
            reconstruction, sent = reconstruct_with_retry(self.provider, frames, self.batch_size)
        except (ReconstructionFailedError, InvalidInputError) as e:
            self.provider_seconds += time.perf_counter() - start
            logger.warning(f"Batch starting at frame {batch_ids[0]} could not be reconstructed: {e}")
            node = RoomNode(
                reference_pose=Sim3.identity(),
                local_frame_poses={},
                point_cloud=PointCloud.empty(),
                frame_features={f: by_id[f].feature for f in labelled if f in by_id},
                id=room_id,
                batch_frame_ids=batch_ids,
                frame_timestamps={f.id: f.timestamp for f in frames},
                valid=False,
                room_frame_ids=labelled,
            )
            return node, None
        self.provider_seconds += time.perf_counter() - start

        labelled_set = set(labelled)
        cloud_frames = [f for f in reconstruction.frame_ids() if f in labelled_set]
        node = RoomNode(
            reference_pose=Sim3.identity(),
            local_frame_poses=dict(reconstruction.frame_poses),
            point_cloud=room_cloud(reconstruction, cloud_frames, self.cloud_voxel),
            frame_features={f: by_id[f].feature for f in labelled if f in by_id},
            id=room_id,
            anchor_id=reconstruction.anchor_id,
            batch_frame_ids=batch_ids,
            frame_timestamps={f.id: f.timestamp for f in frames},
            frame_depths=dict(reconstruction.frame_depths),
            room_frame_ids=labelled,
        )
        logger.debug(f"Built room from {len(frames)} frames ({len(sent)} reconstructed, "
                     f"{len(node.point_cloud)} cloud points)")
        return node, reconstruction

    def register(self, node: RoomNode, reconstruction: Optional[RoomReconstruction] = None) -> None:
        """Remember a node's reconstruction (or its failure) under the node's id."""
        if not node.valid:
            self.failed_rooms.append(node.id)
            return
        if reconstruction is not None:
            self.reconstructions[node.id] = reconstruction

    def forget(self, room_id: int) -> None:
        self.reconstructions.pop(room_id, None)
