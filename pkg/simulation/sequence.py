# -*- coding: utf-8 -*-
"""
Agent trajectories and frame streams through a synthetic world.

The agent loops once around each visited room on an inset rectangle that
starts and ends below the door, then walks the connector to the next room.
Every frame carries a ground-truth pose, a noisy semantic feature, the
surface samples it observes (one per pixel of a fixed grid) and, for room
frames, the object masks that seed the tracklets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from geometry.pointcloud import Trajectory
from geometry.sim3 import Sim3
from mapping.objects import MaskObservation, MaskTracklet
from mapping.room_segmenter import FrameRecord
from simulation.world import World
from utils.errors import ConfigError, LookupFailure

logger = logging.getLogger(__name__)

CONNECTOR_VIEW_RADIUS = 3.0


@dataclass
class SequenceSpec:
    visit_order: Tuple[int, ...] = (0, 1, 2, 3, 4)
    frames_per_room: int = 80
    frames_per_connector: int = 8
    feature_noise: float = 0.05
    object_feature_noise: float = 0.05
    rng_seed: int = 0
    frame_rate: float = 10.0
    tracklet_length: int = 10
    image_width: int = 40
    image_height: int = 30
    camera_height: float = 1.5
    path_inset: float = 0.8
    view_range: float = 6.0

    @property
    def pixel_count(self) -> int:
        return self.image_width * self.image_height

    def validate(self, world: Optional[World] = None) -> None:
        if len(self.visit_order) < 1:
            raise ConfigError("visit order is empty", "simulation.sequence.visit_order")
        if self.frames_per_room < 2:
            raise ConfigError("at least 2 frames per room", "simulation.sequence.frames_per_room")
        if self.frames_per_connector < 1:
            raise ConfigError("at least 1 frame per connector", "simulation.sequence.frames_per_connector")
        if self.feature_noise < 0 or self.object_feature_noise < 0:
            raise ConfigError("feature noise must be >= 0", "simulation.sequence.feature_noise")
        if self.frame_rate <= 0:
            raise ConfigError("frame rate must be positive", "simulation.sequence.frame_rate")
        if self.tracklet_length < 2:
            raise ConfigError("tracklets need at least 2 frames", "simulation.sequence.tracklet_length")
        if self.image_width < 1 or self.image_height < 1:
            raise ConfigError("empty image grid", "simulation.sequence.image_width")
        for a, b in zip(self.visit_order, self.visit_order[1:]):
            if a == b:
                raise ConfigError(f"visit order repeats room {a} back to back", "simulation.sequence.visit_order")
        if world is None:
            return
        known = set(world.room_ids())
        for rid in self.visit_order:
            if rid not in known:
                raise ConfigError(f"visit order names unknown room {rid}", "simulation.sequence.visit_order")
        for a, b in zip(self.visit_order, self.visit_order[1:]):
            if world.connector_between(a, b) is None:
                raise ConfigError(f"rooms {a} and {b} are not connected", "simulation.sequence.visit_order")
        for rid in set(self.visit_order):
            room = world.room(rid)
            if min(room.x_max - room.x_min, room.y_max - room.y_min) <= 2 * self.path_inset:
                raise ConfigError(f"room {rid} is too small for path inset {self.path_inset}",
                                  "simulation.sequence.path_inset")


@dataclass
class Sequence:
    spec: SequenceSpec
    frames: List[FrameRecord]
    ground_truth: Trajectory
    observations: Dict[int, np.ndarray]  # frame id -> surface-sample index per pixel
    tracklets: List[MaskTracklet]
    tracklet_objects: Dict[int, int]  # tracklet id -> world object id
    traversals: int
    frame_visits: Dict[int, int] = field(default_factory=dict)  # frame id -> visit index, -1 on connectors
    _index: Dict[int, FrameRecord] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {f.id: f for f in self.frames}

    def frame(self, frame_id: int) -> FrameRecord:
        try:
            return self._index[frame_id]
        except KeyError:
            raise LookupFailure(f"unknown frame {frame_id}") from None

    def frame_ids(self) -> List[int]:
        return [f.id for f in self.frames]

    def gt_poses(self) -> Dict[int, Sim3]:
        return {f.id: f.gt_pose for f in self.frames}

    def room_frames(self, visit: int) -> List[int]:
        return [fid for fid, v in self.frame_visits.items() if v == visit]


def camera_pose(position: np.ndarray, yaw: float) -> Sim3:
    """Camera looking along `yaw` (z forward, y down) at `position`."""
    forward = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    return Sim3.from_rotation_matrix(np.column_stack([right, down, forward]), position)


def _sample_polyline(waypoints: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """n points at arc-length fractions (k + 0.5) / n with the heading of their segment."""
    seg = np.diff(waypoints, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    keep = lengths > 1e-12
    seg, lengths, starts = seg[keep], lengths[keep], waypoints[:-1][keep]
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    arc = (np.arange(n) + 0.5) / n * cum[-1]
    k = np.clip(np.searchsorted(cum, arc, side="right") - 1, 0, len(seg) - 1)
    u = (arc - cum[k]) / lengths[k]
    xy = starts[k] + u[:, None] * seg[k]
    yaw = np.arctan2(seg[k, 1], seg[k, 0])
    return xy, yaw


def room_loop(world: World, room_id: int, inset: float) -> np.ndarray:
    """Closed inset-rectangle loop starting and ending below the door."""
    r = world.room(room_id)
    x0, x1 = r.x_min + inset, r.x_max - inset
    y0, y1 = r.y_min + inset, r.y_max - inset
    entry = [float(np.clip(r.door_x, x0, x1)), y0]
    return np.array([entry, [x1, y0], [x1, y1], [x0, y1], [x0, y0], entry])


def _noisy_unit(rng: np.random.Generator, base: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return base / np.linalg.norm(base)
    v = base + rng.normal(scale=sigma / np.sqrt(base.size), size=base.size)
    return v / np.linalg.norm(v)


def _fill_pixels(rng: np.random.Generator, n_pixels: int, object_points: List[np.ndarray],
                 background: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Place object samples at a random cyclic offset and fill the rest with background samples."""
    pixels = np.full(n_pixels, -1, dtype=np.int64)
    masks = []
    offset = int(rng.integers(n_pixels))
    cursor = 0
    for pts in object_points:
        take = min(len(pts), n_pixels - cursor)
        if take <= 0:
            masks.append(np.zeros(0, dtype=np.int64))
            continue
        where = (offset + cursor + np.arange(take)) % n_pixels
        pixels[where] = pts[:take]
        masks.append(np.sort(where))
        cursor += take
    free = np.flatnonzero(pixels < 0)
    if free.size:
        replace = background.size < free.size
        pixels[free] = rng.choice(background, size=free.size, replace=replace)
    return pixels, masks


def generate_sequence(world: World, spec: Optional[SequenceSpec] = None) -> Sequence:
    """
    Walk the visit order through `world`.

    Room frames carry their room id as gt_room; connector frames carry None.
    Frame ids and timestamps increase by one frame period per frame.

    Raises:
        ConfigError: Unknown or unconnected rooms in the visit order, or an
            invalid spec.
    """
    spec = spec or SequenceSpec()
    spec.validate(world)
    rng = np.random.default_rng(np.random.SeedSequence([int(world.seed), int(spec.rng_seed), 11]))
    bank = world.feature_bank
    n_pixels = spec.pixel_count
    corridor_idx = world.corridor_indices()
    corridor_xy = world.surface_points[corridor_idx, :2]

    frames: List[FrameRecord] = []
    observations: Dict[int, np.ndarray] = {}
    frame_visits: Dict[int, int] = {}
    tracklets: List[MaskTracklet] = []
    tracklet_objects: Dict[int, int] = {}
    traversals = 0

    def emit(xy, yaw, feature, gt_room, pixels, visit) -> int:
        fid = len(frames)
        pose = camera_pose(np.array([xy[0], xy[1], spec.camera_height]), float(yaw))
        frames.append(FrameRecord(id=fid, timestamp=fid / spec.frame_rate, feature=feature,
                                  gt_pose=pose, gt_room=gt_room))
        observations[fid] = pixels
        frame_visits[fid] = visit
        return fid

    for visit, room_id in enumerate(spec.visit_order):
        objects = world.objects_in(room_id)
        object_points = [world.object_indices(o.id) for o in objects]
        background = world.background_indices(room_id)
        xy, yaw = _sample_polyline(room_loop(world, room_id, spec.path_inset), spec.frames_per_room)
        visit_frames: List[int] = []
        visit_masks: List[List[np.ndarray]] = []
        for k in range(spec.frames_per_room):
            feature = _noisy_unit(rng, bank.room_embeddings[room_id], spec.feature_noise)
            pixels, masks = _fill_pixels(rng, n_pixels, object_points, background)
            visit_frames.append(emit(xy[k], yaw[k], feature, room_id, pixels, visit))
            visit_masks.append(masks)

        for slot, obj in enumerate(objects):
            step = spec.tracklet_length - 1
            for start in range(0, len(visit_frames) - 1, step):
                chunk = range(start, min(start + spec.tracklet_length, len(visit_frames)))
                obs = [MaskObservation(visit_frames[k], visit_masks[k][slot],
                                       _noisy_unit(rng, obj.feature, spec.object_feature_noise))
                       for k in chunk if visit_masks[k][slot].size]
                if len(obs) < 2:
                    continue
                tid = len(tracklets)
                tracklets.append(MaskTracklet(id=tid, observations=obs, seed_label=obj.label))
                tracklet_objects[tid] = obj.id

        if visit + 1 == len(spec.visit_order):
            break
        connector = world.connector_between(room_id, spec.visit_order[visit + 1])
        doors = connector.waypoints[[0, -1]]
        xy, yaw = _sample_polyline(connector.waypoints, spec.frames_per_connector)
        for k in range(spec.frames_per_connector):
            near_door = np.min(np.linalg.norm(doors - xy[k], axis=1)) < world.config.door_width
            cue = bank.transition_cues["doorway" if near_door else "corridor"]
            feature = _noisy_unit(rng, cue, spec.feature_noise)
            dist = np.linalg.norm(corridor_xy - xy[k], axis=1)
            visible = corridor_idx[dist <= CONNECTOR_VIEW_RADIUS]
            if visible.size == 0:
                visible = corridor_idx[np.argsort(dist)[:n_pixels]]
            pixels, _ = _fill_pixels(rng, n_pixels, [], visible)
            emit(xy[k], yaw[k], feature, None, pixels, -1)
        traversals += 1

    ground_truth = Trajectory(np.array([f.timestamp for f in frames]), tuple(f.gt_pose for f in frames))
    logger.info(f"Generated sequence of {len(frames)} frames over visits {list(spec.visit_order)} "
                f"({traversals} connector traversals, {len(tracklets)} tracklets)")
    return Sequence(
        spec=spec,
        frames=frames,
        ground_truth=ground_truth,
        observations=observations,
        tracklets=tracklets,
        tracklet_objects=tracklet_objects,
        traversals=traversals,
        frame_visits=frame_visits,
    )


def sequence_spec_from_dict(data: dict) -> SequenceSpec:
    fields = dict(data)
    if "visit_order" in fields:
        fields["visit_order"] = tuple(int(v) for v in fields["visit_order"])
    return SequenceSpec(**fields)
