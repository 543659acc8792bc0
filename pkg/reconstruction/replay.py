# -*- coding: utf-8 -*-
"""
Replay provider: serves reconstructions produced offline.

Directory layout::

    <root>/batch_<anchor id>/poses.tum        local frame poses (timestamp column = frame id)
    <root>/batch_<anchor id>/points.ply       batch cloud in the local frame
    <root>/batch_<anchor id>/frames/<id>.ply  optional per-frame camera-frame points
    <root>/pairs.txt                          p q tx ty tz qx qy qz qw s depth_p depth_q confidence

A batch request is served by the stored batch whose anchor is the request's
first frame. Pairs not listed (in either direction) are reported invalid.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from geometry.file_io import FLOAT_FMT, read_ply, read_tum, write_ply, write_tum
from geometry.pointcloud import Trajectory
from geometry.sim3 import Sim3
from mapping.room_segmenter import FrameRecord
from reconstruction.provider import RelativePoseEstimate, RoomReconstruction
from utils.errors import InvalidInputError, LookupFailure, ReconstructionFailedError

logger = logging.getLogger(__name__)

PAIR_COLUMNS = ["p", "q", "tx", "ty", "tz", "qx", "qy", "qz", "qw", "s", "depth_p", "depth_q", "confidence"]


def batch_dir(root: Path, anchor_id: int) -> Path:
    return Path(root) / f"batch_{anchor_id}"


class ReplayProvider:
    """ReconstructionProvider reading precomputed batches and pairs from a directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise LookupFailure(f"replay directory not found: {self.root}")
        self._pairs = self._load_pairs(self.root / "pairs.txt")
        logger.info(f"Replay provider at {self.root}: {len(self.anchors())} batches, {len(self._pairs)} pairs")

    def anchors(self) -> list:
        out = []
        for d in self.root.glob("batch_*"):
            suffix = d.name.split("_", 1)[1]
            if d.is_dir() and suffix.isdigit():
                out.append(int(suffix))
        return sorted(out)

    @staticmethod
    def _load_pairs(path: Path) -> Dict[Tuple[int, int], RelativePoseEstimate]:
        if not path.is_file():
            return {}
        try:
            df = pd.read_csv(path, sep=r"\s+", comment="#", header=None, names=PAIR_COLUMNS)
        except pd.errors.EmptyDataError:
            return {}
        if df.isna().any().any():
            raise InvalidInputError(f"{path}: every pair line needs {len(PAIR_COLUMNS)} columns")
        pairs = {}
        for row in df.itertuples(index=False):
            pose = Sim3(np.array([row.qw, row.qx, row.qy, row.qz]), [row.tx, row.ty, row.tz], row.s)
            pairs[(int(row.p), int(row.q))] = RelativePoseEstimate(
                pose=pose, valid=True, confidence=float(row.confidence),
                depth_p=float(row.depth_p), depth_q=float(row.depth_q))
        return pairs

    def reconstruct_batch(self, frames: Sequence[FrameRecord]) -> RoomReconstruction:
        if len(frames) < 2:
            raise InvalidInputError(f"a batch needs at least 2 frames, got {len(frames)}")
        wanted = sorted({f.id for f in frames})
        directory = batch_dir(self.root, wanted[0])
        poses_path = directory / "poses.tum"
        if not poses_path.is_file():
            raise ReconstructionFailedError(f"no stored reconstruction for batch anchored at frame {wanted[0]}")
        stored = read_tum(poses_path)
        stored_poses = {int(round(ts)): pose for ts, pose in zip(stored.timestamps, stored.poses)}
        poses = {fid: stored_poses[fid] for fid in wanted if fid in stored_poses}
        if len(poses) < 2 or wanted[0] not in poses:
            raise ReconstructionFailedError(f"stored batch {directory.name} does not cover the request")

        per_frame = {}
        for fid in poses:
            frame_path = directory / "frames" / f"{fid}.ply"
            if frame_path.is_file():
                per_frame[fid] = read_ply(frame_path)
        points_path = directory / "points.ply"
        if not points_path.is_file():
            raise ReconstructionFailedError(f"{directory.name} lacks points.ply")
        try:
            return RoomReconstruction(frame_poses=poses, points=read_ply(points_path),
                                      per_frame_points=per_frame, anchor_id=wanted[0])
        except InvalidInputError as e:
            raise ReconstructionFailedError(f"{directory.name}: {e}") from None

    def relative_pose(self, frame_p: int, frame_q: int) -> RelativePoseEstimate:
        est = self._pairs.get((frame_p, frame_q))
        if est is not None:
            return est
        est = self._pairs.get((frame_q, frame_p))
        if est is not None:
            return RelativePoseEstimate(pose=est.pose.inverse(), valid=True, confidence=est.confidence,
                                        depth_p=est.depth_q, depth_q=est.depth_p)
        return RelativePoseEstimate.invalid()


def write_replay_batch(root: Path, reconstruction: RoomReconstruction, with_frames: bool = True) -> Path:
    """Store one reconstruction in the replay layout; returns its directory."""
    directory = batch_dir(root, reconstruction.anchor_id)
    ids = reconstruction.frame_ids()
    trajectory = Trajectory(np.array(ids, dtype=float), tuple(reconstruction.frame_poses[f] for f in ids))
    write_tum(directory / "poses.tum", trajectory, header=f"batch anchored at frame {reconstruction.anchor_id}")
    write_ply(directory / "points.ply", reconstruction.points)
    if with_frames:
        for fid, cloud in reconstruction.per_frame_points.items():
            write_ply(directory / "frames" / f"{fid}.ply", cloud)
    return directory


def write_replay_pairs(root: Path, pairs: Mapping[Tuple[int, int], RelativePoseEstimate]) -> Path:
    """Store the valid pair estimates as pairs.txt."""
    rows = []
    for (p, q), est in sorted(pairs.items()):
        if not est.valid:
            continue
        w, x, y, z = est.pose.rotation
        rows.append([p, q, *est.pose.translation, x, y, z, w, est.pose.scale,
                     est.depth_p, est.depth_q, est.confidence])
    path = Path(root) / "pairs.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.array(rows, dtype=float).reshape(-1, len(PAIR_COLUMNS))
    np.savetxt(path, data, fmt=["%d", "%d"] + [FLOAT_FMT] * (len(PAIR_COLUMNS) - 2),
               header=" ".join(PAIR_COLUMNS), comments="# ")
    return path
