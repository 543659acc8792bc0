# -*- coding: utf-8 -*-
"""
Reconstruction provider interface.

A provider turns a batch of frames into per-frame poses and points in a
batch-local frame anchored at the first frame, and estimates the relative
pose of two frames. The synthetic oracle and the replay reader implement it;
an adapter around a learned feed-forward model would too.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from geometry.pointcloud import PointCloud
from geometry.sim3 import Sim3
from mapping.room_segmenter import FrameRecord, subsample_batch
from utils.errors import InvalidInputError, ReconstructionFailedError

logger = logging.getLogger(__name__)

ANCHOR_TOL = 1e-12


def median_depth(cloud: PointCloud) -> float:
    """Median camera distance of a camera-frame point set (0.0 when empty)."""
    if cloud.is_empty():
        return 0.0
    return float(np.median(np.linalg.norm(cloud.points, axis=1)))


@dataclass(frozen=True, eq=False)
class RoomReconstruction:
    """Provider output for one batch. `frame_poses` map camera frame to batch frame."""
    frame_poses: Dict[int, Sim3]
    points: PointCloud
    per_frame_points: Dict[int, PointCloud] = field(default_factory=dict)
    anchor_id: Optional[int] = None
    frame_depths: Dict[int, float] = field(default_factory=dict)
    gauge: Optional[Sim3] = None

    def __post_init__(self):
        if not self.frame_poses:
            raise InvalidInputError("reconstruction has no frame poses")
        anchor = min(self.frame_poses) if self.anchor_id is None else self.anchor_id
        object.__setattr__(self, "anchor_id", anchor)
        if anchor not in self.frame_poses:
            raise InvalidInputError(f"anchor frame {anchor} has no pose")
        if not self.frame_poses[anchor].allclose(Sim3.identity(), atol=ANCHOR_TOL):
            raise InvalidInputError(f"anchor frame {anchor} pose is not identity")
        if not self.frame_depths and self.per_frame_points:
            object.__setattr__(self, "frame_depths",
                               {fid: median_depth(c) for fid, c in self.per_frame_points.items()})

    def frame_ids(self) -> List[int]:
        return sorted(self.frame_poses)


@dataclass(frozen=True)
class RelativePoseEstimate:
    """Two-view estimate. `depth_p`/`depth_q` are median depths in the pair's units."""
    pose: Sim3
    valid: bool
    confidence: float
    depth_p: float = 0.0
    depth_q: float = 0.0

    def __post_init__(self):
        if self.valid and not (0.0 < self.confidence <= 1.0):
            raise InvalidInputError("valid relative pose needs confidence in (0, 1]")

    @classmethod
    def invalid(cls) -> "RelativePoseEstimate":
        return cls(pose=Sim3.identity(), valid=False, confidence=0.0)


@runtime_checkable
class ReconstructionProvider(Protocol):
    def reconstruct_batch(self, frames: Sequence[FrameRecord]) -> RoomReconstruction:
        ...

    def relative_pose(self, frame_p: int, frame_q: int) -> RelativePoseEstimate:
        ...


def reconstruct_batch(provider: ReconstructionProvider, frames: Sequence[FrameRecord]) -> RoomReconstruction:
    if len(frames) < 2:
        raise InvalidInputError(f"a batch needs at least 2 frames, got {len(frames)}")
    return provider.reconstruct_batch(frames)


def relative_pose(provider: ReconstructionProvider, frame_p: int, frame_q: int) -> RelativePoseEstimate:
    return provider.relative_pose(frame_p, frame_q)


def reconstruct_with_retry(provider: ReconstructionProvider, batch: Sequence[FrameRecord],
                           batch_size: int) -> Tuple[RoomReconstruction, List[FrameRecord]]:
    """
    Subsample and reconstruct a batch, retrying once with a shifted stride.

    Returns the reconstruction and the frames that were sent to the provider.

    Raises:
        ReconstructionFailedError: When both attempts fail.
    """
    first = subsample_batch(batch, batch_size)
    try:
        return reconstruct_batch(provider, first), first
    except ReconstructionFailedError as e:
        logger.warning(f"Reconstruction of batch starting at frame {batch[0].id} failed ({e}); retrying")

    second = subsample_batch(batch, batch_size, phase=0.5)
    if [f.id for f in second] == [f.id for f in first]:
        # nothing to shift: drop one interior frame so the request differs
        second = subsample_batch(batch, max(2, len(first) - 1))
    if len(second) < 2 or [f.id for f in second] == [f.id for f in first]:
        raise ReconstructionFailedError(f"no alternative subsample for batch starting at frame {batch[0].id}")
    return reconstruct_batch(provider, second), second
