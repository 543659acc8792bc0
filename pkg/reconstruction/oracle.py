# -*- coding: utf-8 -*-
"""
Synthetic reconstruction oracle.

Answers provider requests from simulator ground truth. Each batch lives in
its own gauge G = S(s) o gt_anchor^-1: the anchor frame sits at identity and
every distance is multiplied by a per-batch scale s drawn from the noise
model, which is what makes transition edges and Sim(3) optimisation
non-trivial. Randomness is keyed by the request so identical requests give
bit-identical answers whatever the call order.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Optional, Sequence as Seq, Tuple

import numpy as np

from geometry.pointcloud import PointCloud, voxel_downsample
from geometry.sim3 import Sim3, sim3_exp
from mapping.room_segmenter import FrameRecord
from reconstruction.provider import RelativePoseEstimate, RoomReconstruction, median_depth
from simulation.sequence import Sequence
from simulation.world import World
from utils.errors import ConfigError, InvalidInputError, LookupFailure, ReconstructionFailedError

logger = logging.getLogger(__name__)

BATCH_REQUEST = 0
PAIR_REQUEST = 1


@dataclass
class OracleNoiseModel:
    pose_rot_sigma: float = 0.005
    pose_trans_sigma: float = 0.01
    point_sigma: float = 0.002
    batch_scale_range: Tuple[float, float] = (0.8, 1.25)
    pair_failure_rate: float = 0.05
    batch_failure_rate: float = 0.0
    cross_room_noise_factor: float = 5.0
    cloud_voxel: float = 0.02
    rng_seed: int = 0

    def validate(self) -> None:
        s_min, s_max = self.batch_scale_range
        if not 0.0 < s_min <= s_max:
            raise ConfigError(f"invalid batch scale range ({s_min}, {s_max})", "oracle.batch_scale_range")
        for name in ("pose_rot_sigma", "pose_trans_sigma", "point_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError("noise sigmas must be >= 0", f"oracle.{name}")
        for name in ("pair_failure_rate", "batch_failure_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("failure rates must lie in [0, 1]", f"oracle.{name}")
        if self.cross_room_noise_factor < 0 or self.cloud_voxel <= 0:
            raise ConfigError("cross_room_noise_factor must be >= 0 and cloud_voxel > 0", "oracle")

    @classmethod
    def noiseless(cls, rng_seed: int = 0) -> "OracleNoiseModel":
        return cls(pose_rot_sigma=0.0, pose_trans_sigma=0.0, point_sigma=0.0, batch_scale_range=(1.0, 1.0),
                   pair_failure_rate=0.0, batch_failure_rate=0.0, rng_seed=rng_seed)


def _pose_noise(rng: np.random.Generator, rot_sigma: float, trans_sigma: float) -> Optional[Sim3]:
    if rot_sigma == 0.0 and trans_sigma == 0.0:
        return None
    xi = np.concatenate([rng.normal(scale=trans_sigma, size=3), rng.normal(scale=rot_sigma, size=3), [0.0]])
    return sim3_exp(xi)


class SyntheticOracle:
    """ReconstructionProvider backed by a simulated world and sequence."""

    def __init__(self, world: World, sequence: Sequence, noise: Optional[OracleNoiseModel] = None):
        self.world = world
        self.sequence = sequence
        self.noise = noise or OracleNoiseModel()
        self.noise.validate()
        self._gt = sequence.gt_poses()
        self._rooms = {f.id: f.gt_room for f in sequence.frames}
        self._camera_points = {fid: self._gt[fid].inverse().act(world.surface_points[pix])
                               for fid, pix in sequence.observations.items()}
        self._depths = {fid: median_depth(PointCloud(pts)) for fid, pts in self._camera_points.items()}

    def _rng(self, kind: int, frame_ids: Seq[int]) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.noise.rng_seed), kind, *map(int, frame_ids)]))

    def _draw_scale(self, rng: np.random.Generator) -> float:
        s_min, s_max = self.noise.batch_scale_range
        return float(s_min) if s_min == s_max else float(np.exp(rng.uniform(np.log(s_min), np.log(s_max))))

    def _check_known(self, frame_id: int) -> None:
        if frame_id not in self._gt:
            raise LookupFailure(f"frame {frame_id} is not part of the simulated sequence")

    def dominant_room(self, frame_ids: Seq[int]) -> Optional[int]:
        rooms = Counter(self._rooms[f] for f in frame_ids if self._rooms[f] is not None)
        if not rooms:
            return None
        best = max(rooms.values())
        return min(r for r, c in rooms.items() if c == best)

    def frame_depth(self, frame_id: int) -> float:
        """Median ground-truth camera distance of a frame's observed samples, in meters."""
        self._check_known(frame_id)
        return self._depths[frame_id]

    def reconstruct_batch(self, frames: Seq[FrameRecord]) -> RoomReconstruction:
        if len(frames) < 2:
            raise InvalidInputError(f"a batch needs at least 2 frames, got {len(frames)}")
        ids = sorted({f.id for f in frames})
        for fid in ids:
            self._check_known(fid)
        noise = self.noise
        rng = self._rng(BATCH_REQUEST, ids)
        if noise.batch_failure_rate > 0.0 and rng.random() < noise.batch_failure_rate:
            raise ReconstructionFailedError(f"simulated provider failure for batch anchored at frame {ids[0]}")

        s = self._draw_scale(rng)
        anchor = ids[0]
        gauge = Sim3.from_scale(s).compose(self._gt[anchor].inverse())
        descale = Sim3.from_scale(1.0 / s)
        dominant = self.dominant_room(ids)

        poses: Dict[int, Sim3] = {}
        per_frame: Dict[int, PointCloud] = {}
        for fid in ids:
            pose = gauge.compose(self._gt[fid]).compose(descale)
            if fid == anchor:
                pose = Sim3.identity()
            else:
                room = self._rooms[fid]
                factor = noise.cross_room_noise_factor if (room is not None and dominant is not None
                                                           and room != dominant) else 1.0
                delta = _pose_noise(rng, factor * noise.pose_rot_sigma, factor * noise.pose_trans_sigma * s)
                if delta is not None:
                    pose = pose.compose(delta)
            poses[fid] = pose
            pts = s * self._camera_points[fid]
            if noise.point_sigma > 0.0:
                pts = pts + rng.normal(scale=noise.point_sigma * s, size=pts.shape)
            per_frame[fid] = PointCloud(pts)

        cloud = voxel_downsample(
            PointCloud(np.concatenate([poses[f].act(per_frame[f].points) for f in ids])),
            noise.cloud_voxel * s,
        )
        logger.debug(f"Oracle batch at frame {anchor}: {len(ids)} frames, scale {s:.4f}, "
                     f"dominant room {dominant}, {len(cloud)} points")
        return RoomReconstruction(frame_poses=poses, points=cloud, per_frame_points=per_frame,
                                  anchor_id=anchor, gauge=gauge)

    def relative_pose(self, frame_p: int, frame_q: int) -> RelativePoseEstimate:
        self._check_known(frame_p)
        self._check_known(frame_q)
        noise = self.noise
        gt_p, gt_q = self._gt[frame_p], self._gt[frame_q]
        view_range = self.sequence.spec.view_range
        if not self.world.covisible(gt_p.translation, gt_q.translation, view_range):
            return RelativePoseEstimate.invalid()
        rng = self._rng(PAIR_REQUEST, (frame_p, frame_q))
        if noise.pair_failure_rate > 0.0 and rng.random() < noise.pair_failure_rate:
            return RelativePoseEstimate.invalid()
        s = self._draw_scale(rng)
        pose = Sim3.from_scale(s).compose(gt_p.inverse()).compose(gt_q).compose(Sim3.from_scale(1.0 / s))
        if frame_p == frame_q:
            pose = Sim3.identity()
        delta = _pose_noise(rng, noise.pose_rot_sigma, noise.pose_trans_sigma * s)
        if delta is not None:
            pose = pose.compose(delta)
        dist = float(np.linalg.norm(gt_p.translation[:2] - gt_q.translation[:2]))
        return RelativePoseEstimate(
            pose=pose,
            valid=True,
            confidence=float(np.exp(-dist / view_range)),
            depth_p=s * self._depths[frame_p],
            depth_q=s * self._depths[frame_q],
        )
