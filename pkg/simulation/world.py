# -*- coding: utf-8 -*-
"""
Synthetic indoor worlds.

Rectangular rooms line the north side of a straight east-west corridor. Each
room has one door in its corridor-facing wall and is separated from its
neighbours by a thin wall gap. Every pair of rooms is linked by a connector
polyline: door -> corridor centre line -> door. Surfaces (floors, walls,
corridor) and box objects are sampled into a labelled point cloud that backs
the oracle provider and every ground-truth metric.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from geometry.pointcloud import PointCloud
from mapping.room_segmenter import CueSet
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

CORRIDOR_LABEL = -1
LATTICE_STEPS = 5
TRANSITION_TYPES = ("doorway", "corridor")
OBJECT_LABELS = ("chair", "table", "cabinet", "lamp", "plant", "sofa", "shelf", "box")


@dataclass
class WorldConfig:
    n_rooms: int = 5
    room_width_range: Tuple[float, float] = (3.5, 5.0)
    room_depth_range: Tuple[float, float] = (3.5, 5.0)
    wall_height: float = 2.5
    corridor_half_width: float = 1.0
    wall_thickness: float = 0.3
    door_width: float = 1.0
    point_density: float = 400.0
    max_spine_length: float = 120.0
    objects_per_room: Tuple[int, int] = (2, 6)
    object_size_range: Tuple[float, float] = (0.3, 0.8)
    feature_dim: int = 32
    room_types: Tuple[str, ...] = ("office", "kitchen", "bedroom", "bathroom", "living room", "storage")

    def validate(self) -> None:
        if self.n_rooms < 2:
            raise ConfigError(f"at least 2 rooms required, got {self.n_rooms}", "simulation.world.n_rooms")
        for name in ("room_width_range", "room_depth_range", "object_size_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"invalid range ({lo}, {hi})", f"simulation.world.{name}")
        lo, hi = self.objects_per_room
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid range ({lo}, {hi})", "simulation.world.objects_per_room")
        if self.point_density <= 0 or self.wall_height <= 0:
            raise ConfigError("point_density and wall_height must be positive", "simulation.world")
        if self.room_width_range[0] < self.door_width + 2 * self.wall_thickness:
            raise ConfigError("rooms narrower than their door", "simulation.world.room_width_range")
        if self.feature_dim < len(self.room_types) + len(TRANSITION_TYPES):
            raise ConfigError("feature_dim too small for the cue set", "simulation.world.feature_dim")


@dataclass(frozen=True)
class Room:
    id: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    room_type: str
    door_x: float

    def contains(self, xy, margin: float = 0.0) -> bool:
        x, y = float(xy[0]), float(xy[1])
        return (self.x_min + margin <= x <= self.x_max - margin
                and self.y_min + margin <= y <= self.y_max - margin)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2])


@dataclass(frozen=True)
class Connector:
    id: int
    rooms: Tuple[int, int]
    waypoints: np.ndarray  # (K, 2) polyline door -> corridor -> door

    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


@dataclass(frozen=True)
class BoxObject:
    id: int
    room_id: int
    center: np.ndarray
    extent: np.ndarray
    feature: np.ndarray
    label: str

    def contains(self, point, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(np.asarray(point) - self.center) <= self.extent / 2 + tol))


@dataclass(frozen=True)
class FeatureBank:
    dim: int
    room_type_cues: Dict[str, np.ndarray]
    transition_cues: Dict[str, np.ndarray]
    room_embeddings: Dict[int, np.ndarray]

    def cue_set(self) -> CueSet:
        return CueSet(
            transition_cues=tuple((k, v) for k, v in self.transition_cues.items()),
            room_cues=tuple((k, v) for k, v in self.room_type_cues.items()),
        )


@dataclass
class World:
    config: WorldConfig
    seed: int
    rooms: List[Room]
    connectors: List[Connector]
    objects: List[BoxObject]
    corridor: Tuple[float, float, float, float]  # x_min, x_max, y_min, y_max
    feature_bank: FeatureBank
    surface_points: np.ndarray  # (N, 3)
    surface_rooms: np.ndarray  # (N,) room id or CORRIDOR_LABEL
    surface_objects: np.ndarray  # (N,) object id or -1
    wall_segments: np.ndarray  # (M, 4) x0 y0 x1 y1
    _room_index: Dict[int, Room] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._room_index = {r.id: r for r in self.rooms}

    # --- lookups ---
    def room(self, room_id: int) -> Room:
        return self._room_index[room_id]

    def room_ids(self) -> List[int]:
        return [r.id for r in self.rooms]

    def room_at(self, xy) -> Optional[int]:
        for r in self.rooms:
            if r.contains(xy):
                return r.id
        return None

    def connector_between(self, a: int, b: int) -> Optional[Connector]:
        for c in self.connectors:
            if c.rooms == (a, b):
                return c
            if c.rooms == (b, a):
                return Connector(c.id, (a, b), c.waypoints[::-1].copy())
        return None

    def objects_in(self, room_id: int) -> List[BoxObject]:
        return [o for o in self.objects if o.room_id == room_id]

    def background_indices(self, room_id: int) -> np.ndarray:
        return np.flatnonzero((self.surface_rooms == room_id) & (self.surface_objects < 0))

    def corridor_indices(self) -> np.ndarray:
        return np.flatnonzero(self.surface_rooms == CORRIDOR_LABEL)

    def object_indices(self, object_id: int) -> np.ndarray:
        return np.flatnonzero(self.surface_objects == object_id)

    def labelled_cloud(self) -> PointCloud:
        """Every surface sample labelled with its room id (corridor: -1)."""
        return PointCloud(self.surface_points, self.surface_rooms)

    def room_cloud(self, room_id: int) -> PointCloud:
        mask = self.surface_rooms == room_id
        return PointCloud(self.surface_points[mask], self.surface_rooms[mask])

    # --- visibility ---
    def segment_crosses_wall(self, p, q) -> bool:
        """True when the 2D segment p-q properly intersects any wall segment."""
        p = np.asarray(p, float)[:2]
        q = np.asarray(q, float)[:2]
        a = self.wall_segments[:, :2]
        b = self.wall_segments[:, 2:]

        def cross(o, u, v):
            return (u[..., 0] - o[..., 0]) * (v[..., 1] - o[..., 1]) - (u[..., 1] - o[..., 1]) * (v[..., 0] - o[..., 0])

        d1 = cross(a, b, p[None, :])
        d2 = cross(a, b, q[None, :])
        d3 = cross(p[None, :], q[None, :], a)
        d4 = cross(p[None, :], q[None, :], b)
        hits = (d1 * d2 < 0) & (d3 * d4 < 0)
        return bool(np.any(hits))

    def covisible(self, p, q, max_range: float = 6.0) -> bool:
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        if np.linalg.norm(p[:2] - q[:2]) > max_range:
            return False
        return not self.segment_crosses_wall(p, q)

    # --- serialisation ---
    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "seed": int(self.seed),
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
            "rooms": [asdict(r) for r in self.rooms],
            "connectors": [{"id": c.id, "rooms": list(c.rooms), "waypoints": c.waypoints.tolist()}
                           for c in self.connectors],
            "objects": [{"id": o.id, "room_id": o.room_id, "center": o.center.tolist(),
                         "extent": o.extent.tolist(), "label": o.label} for o in self.objects],
            "corridor": list(self.corridor),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


def world_config_from_dict(data: dict) -> WorldConfig:
    fields = dict(data)
    for k in ("room_width_range", "room_depth_range", "objects_per_room", "object_size_range", "room_types"):
        if k in fields:
            fields[k] = tuple(fields[k])
    return WorldConfig(**fields)


# --- generation ---

def _grid(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = max(1, int(np.floor((hi - lo) / spacing)))
    return lo + spacing * (0.5 + np.arange(n)) * ((hi - lo) / (n * spacing))


def _sample_floor(x0, x1, y0, y1, spacing) -> np.ndarray:
    xs, ys = np.meshgrid(_grid(x0, x1, spacing), _grid(y0, y1, spacing), indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])


def _sample_wall(p0, p1, height, spacing, gap: Optional[Tuple[float, float, float]] = None) -> np.ndarray:
    """Vertical wall from p0 to p1 (2D). `gap` = (s_lo, s_hi, z_hi) leaves an opening in arc length."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    length = float(np.linalg.norm(p1 - p0))
    s, z = np.meshgrid(_grid(0.0, length, spacing), _grid(0.0, height, spacing), indexing="ij")
    s, z = s.ravel(), z.ravel()
    if gap is not None:
        keep = ~((s >= gap[0]) & (s <= gap[1]) & (z <= gap[2]))
        s, z = s[keep], z[keep]
    direction = (p1 - p0) / length
    xy = p0[None, :] + s[:, None] * direction[None, :]
    return np.column_stack([xy, z])


def box_lattice(center: np.ndarray, extent: np.ndarray, steps: int = LATTICE_STEPS) -> np.ndarray:
    """Surface nodes of a steps^3 lattice spanning the box; symmetric about the centre."""
    ticks = np.linspace(-0.5, 0.5, steps)
    gx, gy, gz = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    on_surface = np.any(np.isclose(np.abs(grid), 0.5), axis=1)
    return center[None, :] + grid[on_surface] * extent[None, :]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _feature_bank(rng: np.random.Generator, config: WorldConfig, room_types: List[str]) -> FeatureBank:
    dim = config.feature_dim
    n_cues = len(config.room_types) + len(TRANSITION_TYPES)
    n_needed = n_cues + config.n_rooms
    q, _ = np.linalg.qr(rng.normal(size=(dim, min(n_needed, dim))))
    basis = q.T  # orthonormal rows
    type_cues = {t: basis[k].copy() for k, t in enumerate(config.room_types)}
    transition = {t: basis[len(config.room_types) + k].copy() for k, t in enumerate(TRANSITION_TYPES)}
    cue_basis = basis[:n_cues]
    embeddings = {}
    for rid in range(config.n_rooms):
        if n_cues + rid < basis.shape[0]:
            unique = basis[n_cues + rid]
        else:
            # more rooms than free dimensions: random direction outside the cue span
            v = rng.normal(size=dim)
            v -= cue_basis.T @ (cue_basis @ v)
            unique = _unit(v)
        embeddings[rid] = _unit(type_cues[room_types[rid]] + unique)
    return FeatureBank(dim=dim, room_type_cues=type_cues, transition_cues=transition, room_embeddings=embeddings)


def _place_objects(rng: np.random.Generator, config: WorldConfig, room: Room, next_id: int,
                   dim: int) -> List[BoxObject]:
    lo, hi = config.objects_per_room
    count = int(rng.integers(lo, hi + 1))
    placed: List[BoxObject] = []
    margin = config.wall_thickness + 0.2
    for _ in range(count):
        for _attempt in range(100):
            extent = rng.uniform(*config.object_size_range, size=3)
            cx = rng.uniform(room.x_min + margin + extent[0] / 2, room.x_max - margin - extent[0] / 2)
            cy = rng.uniform(room.y_min + margin + extent[1] / 2, room.y_max - margin - extent[1] / 2)
            center = np.array([cx, cy, extent[2] / 2])
            clear = all(np.any(np.abs(center[:2] - o.center[:2]) > (extent[:2] + o.extent[:2]) / 2 + 0.1)
                        for o in placed)
            if clear:
                placed.append(BoxObject(
                    id=next_id + len(placed), room_id=room.id, center=center, extent=extent,
                    feature=_unit(rng.normal(size=dim)),
                    label=OBJECT_LABELS[int(rng.integers(len(OBJECT_LABELS)))],
                ))
                break
    return placed


def generate_world(config: Optional[WorldConfig] = None, seed: int = 0) -> World:
    """
    Build a deterministic world on a corridor spine.

    Raises:
        ConfigError: Fewer than 2 rooms, invalid ranges, or rooms that do not
            fit on the spine.
    """
    config = config or WorldConfig()
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    c = config.corridor_half_width
    gap = config.wall_thickness
    spacing = 1.0 / np.sqrt(config.point_density)

    widths = rng.uniform(*config.room_width_range, size=config.n_rooms)
    depths = rng.uniform(*config.room_depth_range, size=config.n_rooms)
    spine = float(np.sum(widths) + gap * (config.n_rooms - 1))
    if spine > config.max_spine_length:
        raise ConfigError(f"rooms need a {spine:.2f} m spine, limit is {config.max_spine_length} m",
                          "simulation.world.max_spine_length")

    type_order = rng.permutation(len(config.room_types))
    room_types = [config.room_types[type_order[k % len(type_order)]] for k in range(config.n_rooms)]

    rooms: List[Room] = []
    x = 0.0
    for rid in range(config.n_rooms):
        w, d = float(widths[rid]), float(depths[rid])
        half_door = config.door_width / 2
        door_x = float(rng.uniform(x + gap + half_door, x + w - gap - half_door))
        rooms.append(Room(rid, x, x + w, c + gap, c + gap + d, room_types[rid], door_x))
        x += w + gap
    corridor = (-1.0, x - gap + 1.0, -c, c)

    connectors = []
    for cid, (a, b) in enumerate(combinations(range(config.n_rooms), 2)):
        ra, rb = rooms[a], rooms[b]
        door_y = c + gap / 2
        waypoints = np.array([[ra.door_x, door_y], [ra.door_x, 0.0], [rb.door_x, 0.0], [rb.door_x, door_y]])
        connectors.append(Connector(cid, (a, b), waypoints))

    objects: List[BoxObject] = []
    for room in rooms:
        objects.extend(_place_objects(rng, config, room, len(objects), config.feature_dim))
    bank = _feature_bank(rng, config, room_types)

    pts, room_lab, obj_lab = [], [], []

    def add(points, room_id, object_id=-1):
        pts.append(points)
        room_lab.append(np.full(len(points), room_id, dtype=np.int64))
        obj_lab.append(np.full(len(points), object_id, dtype=np.int64))

    h = config.wall_height
    segments = []
    for room in rooms:
        add(_sample_floor(room.x_min, room.x_max, room.y_min, room.y_max, spacing), room.id)
        sw, se = (room.x_min, room.y_min), (room.x_max, room.y_min)
        nw, ne = (room.x_min, room.y_max), (room.x_max, room.y_max)
        door_lo = room.door_x - config.door_width / 2 - room.x_min
        door_hi = room.door_x + config.door_width / 2 - room.x_min
        add(_sample_wall(sw, se, h, spacing, gap=(door_lo, door_hi, 2.0)), room.id)
        add(_sample_wall(se, ne, h, spacing), room.id)
        add(_sample_wall(ne, nw, h, spacing), room.id)
        add(_sample_wall(nw, sw, h, spacing), room.id)
        segments += [
            [sw[0], sw[1], room.door_x - config.door_width / 2, sw[1]],
            [room.door_x + config.door_width / 2, se[1], se[0], se[1]],
            [se[0], se[1], ne[0], ne[1]],
            [ne[0], ne[1], nw[0], nw[1]],
            [nw[0], nw[1], sw[0], sw[1]],
        ]

    cx0, cx1, cy0, cy1 = corridor
    add(_sample_floor(cx0, cx1, cy0, cy1, spacing), CORRIDOR_LABEL)
    add(_sample_wall((cx0, cy0), (cx1, cy0), h, spacing), CORRIDOR_LABEL)
    segments.append([cx0, cy0, cx1, cy0])
    # north corridor wall, interrupted by every door
    edges_x = [cx0]
    for room in rooms:
        edges_x += [room.door_x - config.door_width / 2, room.door_x + config.door_width / 2]
    edges_x.append(cx1)
    for k in range(0, len(edges_x), 2):
        x0, x1 = edges_x[k], edges_x[k + 1]
        if x1 - x0 > spacing:
            add(_sample_wall((x0, cy1), (x1, cy1), h, spacing), CORRIDOR_LABEL)
            segments.append([x0, cy1, x1, cy1])
    segments.append([cx0, cy0, cx0, cy1])
    segments.append([cx1, cy0, cx1, cy1])

    for obj in objects:
        add(box_lattice(obj.center, obj.extent), obj.room_id, obj.id)

    world = World(
        config=config,
        seed=int(seed),
        rooms=rooms,
        connectors=connectors,
        objects=objects,
        corridor=corridor,
        feature_bank=bank,
        surface_points=np.concatenate(pts),
        surface_rooms=np.concatenate(room_lab),
        surface_objects=np.concatenate(obj_lab),
        wall_segments=np.array(segments, dtype=float),
    )
    logger.info(f"Generated world seed={seed}: {len(rooms)} rooms, {len(objects)} objects, "
                f"{len(world.surface_points)} surface samples")
    return world
