# -*- coding: utf-8 -*-
"""
Point clouds and trajectories.

Both are immutable value types backed by numpy arrays. Labels on a point
cloud are integer room or object ids; negative labels mark points that belong
to no room (corridor surfaces in the simulator).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from geometry.sim3 import Sim3
from utils.errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise InvalidInputError(
                    f"label count {lab.shape[0]} does not match point count {pts.shape[0]}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @classmethod
    def empty(cls, labelled: bool = False) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64) if labelled else None)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def is_empty(self) -> bool:
        return len(self) == 0

    def with_labels(self, labels) -> "PointCloud":
        if np.isscalar(labels):
            labels = np.full(len(self), int(labels), dtype=np.int64)
        return PointCloud(self.points, labels)

    def subset(self, index) -> "PointCloud":
        labels = None if self.labels is None else self.labels[index]
        return PointCloud(self.points[index], labels)

    def centroid(self) -> np.ndarray:
        if self.is_empty():
            raise InvalidInputError("centroid of an empty point cloud")
        return self.points.mean(axis=0)

    def equals(self, other: "PointCloud", atol: float = 0.0) -> bool:
        if len(self) != len(other) or self.has_labels != other.has_labels:
            return False
        if self.has_labels and not np.array_equal(self.labels, other.labels):
            return False
        return bool(np.allclose(self.points, other.points, atol=atol, rtol=0.0))

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if c is not None]
        if not clouds:
            return PointCloud.empty()
        pts = np.concatenate([c.points for c in clouds], axis=0)
        if all(c.has_labels for c in clouds):
            return PointCloud(pts, np.concatenate([c.labels for c in clouds]))
        return PointCloud(pts)


def transform_points(T: Sim3, cloud: PointCloud) -> PointCloud:
    """Map every point through T; labels are carried over unchanged."""
    if cloud.is_empty():
        return cloud
    return PointCloud(T.act(cloud.points), cloud.labels)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace the points of each occupied voxel by their mean.

    Labels are resolved by majority vote inside the voxel, ties going to the
    smaller label. Output voxels are ordered by their integer grid key.
    """
    if voxel_size <= 0:
        raise InvalidInputError(f"voxel size must be positive, got {voxel_size}")
    if cloud.is_empty():
        return cloud
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n_vox = counts.shape[0]
    sums = np.zeros((n_vox, 3))
    np.add.at(sums, inverse, cloud.points)
    means = sums / counts[:, None]
    if not cloud.has_labels:
        return PointCloud(means)

    pairs = np.stack([inverse, cloud.labels], axis=1)
    uniq_pairs, pair_counts = np.unique(pairs, axis=0, return_counts=True)
    # rows sorted by voxel, then descending count, then ascending label
    order = np.lexsort((uniq_pairs[:, 1], -pair_counts, uniq_pairs[:, 0]))
    ranked = uniq_pairs[order]
    first = np.ones(len(ranked), dtype=bool)
    first[1:] = ranked[1:, 0] != ranked[:-1, 0]
    labels = np.empty(n_vox, dtype=np.int64)
    labels[ranked[first, 0]] = ranked[first, 1]
    return PointCloud(means, labels)


def occupied_voxels(points: np.ndarray, voxel_size: float) -> set:
    keys = np.floor(np.asarray(points, float) / voxel_size).astype(np.int64)
    return set(map(tuple, keys.tolist()))


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        poses = tuple(self.poses)
        if ts.shape[0] != len(poses):
            raise InvalidInputError(f"{ts.shape[0]} timestamps for {len(poses)} poses")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise InvalidInputError("trajectory timestamps must be strictly increasing")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]) -> "Trajectory":
        pairs = sorted(pairs, key=lambda p: p[0])
        return cls(np.array([p[0] for p in pairs], dtype=float), tuple(p[1] for p in pairs))

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.translation for p in self.poses])

    def transformed(self, T: Sim3) -> "Trajectory":
        """Left-multiply every pose by T."""
        return Trajectory(self.timestamps, tuple(T.compose(p) for p in self.poses))

    def subset(self, index: List[int]) -> "Trajectory":
        return Trajectory(self.timestamps[index], tuple(self.poses[i] for i in index))
