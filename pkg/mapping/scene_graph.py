# -*- coding: utf-8 -*-
"""
Hierarchical scene graph: room nodes, object nodes, room-to-room edges and
room-to-object containment edges.

The room layer (rooms plus room edges) is the variable set of global pose
optimisation and is exposed through `RoomPoseGraph`, a live view that writes
optimised reference poses back into the graph. Object poses are stored
relative to their parent room, so they follow any change of the room pose.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from geometry.file_io import read_ply, write_ply
from geometry.pointcloud import PointCloud
from geometry.sim3 import Sim3
from utils.errors import (InvalidInputError, LookupFailure, SceneGraphParseError,
                          StructuralError)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EDGE_KINDS = ("transition", "loop_closure")
ANCHOR_TOL = 1e-9


@dataclass
class RoomNode:
    """A finalized room: reference pose, per-frame local poses and the room cloud."""
    reference_pose: Sim3
    local_frame_poses: Dict[int, Sim3]
    point_cloud: PointCloud
    frame_features: Dict[int, np.ndarray] = field(default_factory=dict)
    finalized: bool = True
    id: Optional[int] = None
    anchor_id: Optional[int] = None
    batch_frame_ids: List[int] = field(default_factory=list)
    frame_timestamps: Dict[int, float] = field(default_factory=dict)
    frame_depths: Dict[int, float] = field(default_factory=dict)
    valid: bool = True
    merged_from: List[int] = field(default_factory=list)
    room_frame_ids: List[int] = field(default_factory=list)  # frames labelled as this room

    def __post_init__(self):
        if self.anchor_id is None and self.local_frame_poses:
            self.anchor_id = min(self.local_frame_poses)

    def frame_ids(self) -> List[int]:
        """Reconstructed frames in stream order."""
        return sorted(self.local_frame_poses)

    def features_matrix(self) -> np.ndarray:
        if not self.frame_features:
            return np.zeros((0, 0))
        return np.stack([self.frame_features[k] for k in sorted(self.frame_features)])

    def time_span(self) -> Tuple[float, float]:
        times = [self.frame_timestamps[f] for f in self.frame_ids() if f in self.frame_timestamps]
        if not times:
            return (0.0, 0.0)
        return (min(times), max(times))


@dataclass
class ObjectNode:
    parent_room: int
    pose: Sim3
    point_cloud: PointCloud
    feature: np.ndarray
    label: str = ""
    support_count: int = 0
    id: Optional[int] = None

    def __post_init__(self):
        f = np.asarray(self.feature, dtype=float).reshape(-1)
        if f.size == 0 or abs(np.linalg.norm(f) - 1.0) > 1e-6:
            raise InvalidInputError("object feature must be a unit vector")
        self.feature = f


@dataclass
class RoomEdge:
    rooms: Tuple[int, int]
    estimates: List[Sim3]
    consensus: Sim3
    kind: str = "transition"
    information: np.ndarray = field(default_factory=lambda: np.eye(7))

    def __post_init__(self):
        i, j = self.rooms
        self.rooms = (int(i), int(j))
        if self.rooms[0] == self.rooms[1]:
            raise StructuralError(f"room edge endpoints must differ, got {self.rooms}")
        if not self.estimates:
            raise StructuralError(f"room edge {self.rooms} has no estimates")
        if self.kind not in EDGE_KINDS:
            raise StructuralError(f"unknown edge kind '{self.kind}'")
        info = np.asarray(self.information, dtype=float)
        if info.shape != (7, 7):
            raise StructuralError(f"information must be 7x7, got {info.shape}")
        self.information = info

    def reversed(self) -> "RoomEdge":
        return RoomEdge((self.rooms[1], self.rooms[0]),
                        [e.inverse() for e in self.estimates],
                        self.consensus.inverse(), self.kind, self.information.copy())


class SceneGraph:
    """Rooms, objects and their edges. Single writer; use copy() for snapshots."""

    def __init__(self):
        self.rooms: Dict[int, RoomNode] = {}
        self.objects: Dict[int, ObjectNode] = {}
        self.room_edges: Dict[int, RoomEdge] = {}
        self.object_edges: Set[Tuple[int, int]] = set()
        self._next_room = 0
        self._next_object = 0
        self._next_edge = 0

    # --- ids ---
    @property
    def next_room_id(self) -> int:
        """Id the next add_room call will assign (does not reserve it)."""
        return self._next_room

    def _sync_counters(self):
        retired = [r for room in self.rooms.values() for r in room.merged_from]
        self._next_room = max([-1, *self.rooms.keys(), *retired]) + 1
        self._next_object = max([-1, *self.objects.keys()]) + 1
        self._next_edge = max([-1, *self.room_edges.keys()]) + 1

    # --- mutation ---
    def add_room(self, node: RoomNode) -> int:
        if node.id is None:
            node.id = self._next_room
        elif node.id in self.rooms:
            raise StructuralError(f"duplicate room id {node.id}")
        if node.valid and node.anchor_id is not None:
            anchor = node.local_frame_poses.get(node.anchor_id)
            if anchor is None:
                raise StructuralError(f"room {node.id}: anchor frame {node.anchor_id} has no local pose")
            if not anchor.allclose(Sim3.identity(), atol=ANCHOR_TOL):
                raise StructuralError(f"room {node.id}: anchor frame pose is not identity")
        self.rooms[node.id] = node
        self._next_room = max(self._next_room, node.id + 1)
        logger.debug(f"Added room {node.id} with {len(node.local_frame_poses)} frames")
        return node.id

    def add_object(self, room_id: int, node: ObjectNode) -> int:
        if room_id not in self.rooms:
            raise StructuralError(f"cannot add object to missing room {room_id}")
        if node.id is None:
            node.id = self._next_object
        elif node.id in self.objects:
            raise StructuralError(f"duplicate object id {node.id}")
        node.parent_room = room_id
        self.objects[node.id] = node
        self.object_edges.add((room_id, node.id))
        self._next_object = max(self._next_object, node.id + 1)
        return node.id

    def add_room_edge(self, edge: RoomEdge, edge_id: Optional[int] = None) -> int:
        for r in edge.rooms:
            if r not in self.rooms:
                raise StructuralError(f"room edge {edge.rooms} references missing room {r}")
        if edge_id is None:
            edge_id = self._next_edge
        elif edge_id in self.room_edges:
            raise StructuralError(f"duplicate edge id {edge_id}")
        self.room_edges[edge_id] = edge
        self._next_edge = max(self._next_edge, edge_id + 1)
        return edge_id

    def remove_room(self, room_id: int, reassign_to: Optional[int] = None) -> None:
        """
        Delete a room with its incident room edges.

        Children are re-parented to `reassign_to` (their poses re-expressed so
        their world poses are unchanged) or removed when no target is given.
        """
        if room_id not in self.rooms:
            raise LookupFailure(f"unknown room {room_id}")
        if reassign_to is not None and (reassign_to not in self.rooms or reassign_to == room_id):
            raise StructuralError(f"cannot reassign children of room {room_id} to {reassign_to}")

        children = sorted(oid for rid, oid in self.object_edges if rid == room_id)
        if reassign_to is not None:
            old_pose = self.rooms[room_id].reference_pose
            new_pose_inv = self.rooms[reassign_to].reference_pose.inverse()
            for oid in children:
                obj = self.objects[oid]
                obj.pose = new_pose_inv.compose(old_pose).compose(obj.pose)
                obj.parent_room = reassign_to
                self.object_edges.discard((room_id, oid))
                self.object_edges.add((reassign_to, oid))
        else:
            for oid in children:
                self.object_edges.discard((room_id, oid))
                del self.objects[oid]

        for eid in [eid for eid, e in self.room_edges.items() if room_id in e.rooms]:
            del self.room_edges[eid]
        del self.rooms[room_id]

    # --- queries ---
    def room(self, room_id: int) -> RoomNode:
        try:
            return self.rooms[room_id]
        except KeyError:
            raise LookupFailure(f"unknown room {room_id}") from None

    def edges_of(self, room_id: int) -> List[Tuple[int, RoomEdge]]:
        return [(eid, e) for eid, e in sorted(self.room_edges.items()) if room_id in e.rooms]

    def neighbors(self, room_id: int) -> List[int]:
        out = set()
        for _, e in self.edges_of(room_id):
            out.add(e.rooms[1] if e.rooms[0] == room_id else e.rooms[0])
        return sorted(out)

    def objects_of(self, room_id: int) -> List[int]:
        return sorted(oid for rid, oid in self.object_edges if rid == room_id)

    def world_pose_of_object(self, object_id: int) -> Sim3:
        obj = self.objects.get(object_id)
        if obj is None:
            raise LookupFailure(f"unknown object {object_id}")
        return self.room(obj.parent_room).reference_pose.compose(obj.pose)

    def room_pose_graph_view(self) -> "RoomPoseGraph":
        return RoomPoseGraph(self)

    def copy(self) -> "SceneGraph":
        return copy.deepcopy(self)

    def summary(self) -> Dict[str, int]:
        return {
            "rooms": len(self.rooms),
            "objects": len(self.objects),
            "room_edges": len(self.room_edges),
            "loop_closure_edges": sum(1 for e in self.room_edges.values() if e.kind == "loop_closure"),
        }


def world_pose_of_object(graph: SceneGraph, object_id: int) -> Sim3:
    return graph.world_pose_of_object(object_id)


def room_pose_graph_view(graph: SceneGraph) -> "RoomPoseGraph":
    return graph.room_pose_graph_view()


class RoomPoseGraph:
    """Live view of the room layer. Pose writes go straight to the parent graph."""

    def __init__(self, graph: SceneGraph):
        self._graph = graph

    @property
    def node_ids(self) -> List[int]:
        return sorted(self._graph.rooms)

    @property
    def edges(self) -> List[Tuple[int, RoomEdge]]:
        return sorted(self._graph.room_edges.items())

    def __len__(self) -> int:
        return len(self._graph.rooms)

    def get_pose(self, room_id: int) -> Sim3:
        return self._graph.room(room_id).reference_pose

    def set_pose(self, room_id: int, pose: Sim3) -> None:
        self._graph.room(room_id).reference_pose = pose

    def poses(self) -> Dict[int, Sim3]:
        return {rid: self._graph.rooms[rid].reference_pose for rid in self.node_ids}


# --- serialisation ---

def _floats(values) -> List[float]:
    return [float(v) for v in np.asarray(values, dtype=float).reshape(-1)]


def room_cloud_ref(room_id: int) -> str:
    return f"clouds/room_{room_id}.ply"


def object_cloud_ref(object_id: int) -> str:
    return f"clouds/object_{object_id}.ply"


def _room_to_dict(room: RoomNode) -> dict:
    return {
        "id": room.id,
        "reference_pose": room.reference_pose.to_dict(),
        "anchor_id": room.anchor_id,
        "finalized": room.finalized,
        "valid": room.valid,
        "merged_from": list(room.merged_from),
        "batch_frame_ids": [int(f) for f in room.batch_frame_ids],
        "room_frame_ids": [int(f) for f in room.room_frame_ids],
        "frames": [
            {
                "id": int(fid),
                "pose": room.local_frame_poses[fid].to_dict(),
                "timestamp": float(room.frame_timestamps[fid]) if fid in room.frame_timestamps else None,
                "depth": float(room.frame_depths[fid]) if fid in room.frame_depths else None,
            }
            for fid in room.frame_ids()
        ],
        "frame_features": [
            {"id": int(fid), "feature": _floats(room.frame_features[fid])}
            for fid in sorted(room.frame_features)
        ],
        "point_cloud": room_cloud_ref(room.id),
    }


def _object_to_dict(obj: ObjectNode) -> dict:
    return {
        "id": obj.id,
        "parent_room": obj.parent_room,
        "pose": obj.pose.to_dict(),
        "feature": _floats(obj.feature),
        "label": obj.label,
        "support_count": int(obj.support_count),
        "point_cloud": object_cloud_ref(obj.id),
    }


def _edge_to_dict(edge_id: int, edge: RoomEdge) -> dict:
    return {
        "id": edge_id,
        "rooms": [edge.rooms[0], edge.rooms[1]],
        "kind": edge.kind,
        "estimates": [e.to_dict() for e in edge.estimates],
        "consensus": edge.consensus.to_dict(),
        "information": [_floats(row) for row in edge.information],
    }


def serialize(graph: SceneGraph) -> bytes:
    """JSON document of the graph; point clouds are referenced by relative PLY path."""
    doc = {
        "version": SCHEMA_VERSION,
        "rooms": [_room_to_dict(graph.rooms[k]) for k in sorted(graph.rooms)],
        "objects": [_object_to_dict(graph.objects[k]) for k in sorted(graph.objects)],
        "room_edges": [_edge_to_dict(k, graph.room_edges[k]) for k in sorted(graph.room_edges)],
        "object_edges": [[r, o] for r, o in sorted(graph.object_edges)],
    }
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False).encode("utf-8")


class _DocReader:
    """Typed accessors that report the JSON path of whatever is wrong."""

    @staticmethod
    def get(obj, key, path: str, kind=None):
        if not isinstance(obj, dict):
            raise SceneGraphParseError(path, "expected an object")
        if key not in obj:
            raise SceneGraphParseError(f"{path}.{key}" if path else key, "missing field")
        value = obj[key]
        sub = f"{path}.{key}" if path else key
        if kind is not None and not _DocReader.is_kind(value, kind):
            raise SceneGraphParseError(sub, f"expected {kind.__name__ if isinstance(kind, type) else kind}")
        return value

    @staticmethod
    def is_kind(value, kind) -> bool:
        if kind is float:
            return isinstance(value, (int, float)) and not isinstance(value, bool)
        if kind is int:
            return isinstance(value, int) and not isinstance(value, bool)
        return isinstance(value, kind)

    @staticmethod
    def vector(value, path: str, length: Optional[int] = None) -> np.ndarray:
        if not isinstance(value, list) or not all(_DocReader.is_kind(v, float) for v in value):
            raise SceneGraphParseError(path, "expected a list of numbers")
        if length is not None and len(value) != length:
            raise SceneGraphParseError(path, f"expected {length} numbers, got {len(value)}")
        return np.asarray(value, dtype=float)

    @staticmethod
    def pose(value, path: str) -> Sim3:
        q = _DocReader.vector(_DocReader.get(value, "q", path), f"{path}.q", 4)
        t = _DocReader.vector(_DocReader.get(value, "t", path), f"{path}.t", 3)
        s = _DocReader.get(value, "s", path, float)
        try:
            return Sim3(q, t, float(s))
        except InvalidInputError as e:
            raise SceneGraphParseError(path, str(e)) from None


def _load_cloud(base_dir: Optional[Path], ref: str, path: str) -> PointCloud:
    if base_dir is None:
        return PointCloud.empty()
    cloud_path = Path(base_dir) / ref
    if not cloud_path.is_file():
        raise SceneGraphParseError(path, f"referenced cloud '{ref}' not found")
    try:
        return read_ply(cloud_path)
    except (InvalidInputError, ValueError) as e:
        raise SceneGraphParseError(path, f"unreadable cloud '{ref}': {e}") from None


def deserialize(data: bytes, base_dir: Optional[Path] = None) -> SceneGraph:
    """
    Parse a scene graph document.

    Clouds are loaded from `base_dir` when given, otherwise left empty.

    Raises:
        SceneGraphParseError: With the JSON path of the first offending value.
            No partially built graph is ever returned.
    """
    r = _DocReader
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SceneGraphParseError("$", f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SceneGraphParseError("$", "expected an object at top level")
    version = r.get(doc, "version", "", int)
    if version != SCHEMA_VERSION:
        raise SceneGraphParseError("version", f"unsupported schema version {version}")

    graph = SceneGraph()
    for i, rd in enumerate(r.get(doc, "rooms", "", list)):
        p = f"rooms[{i}]"
        poses, times, depths = {}, {}, {}
        for k, fd in enumerate(r.get(rd, "frames", p, list)):
            fp = f"{p}.frames[{k}]"
            fid = r.get(fd, "id", fp, int)
            poses[fid] = r.pose(r.get(fd, "pose", fp), f"{fp}.pose")
            ts = r.get(fd, "timestamp", fp)
            if ts is not None:
                times[fid] = float(ts)
            depth = r.get(fd, "depth", fp)
            if depth is not None:
                depths[fid] = float(depth)
        features = {}
        for k, fd in enumerate(r.get(rd, "frame_features", p, list)):
            fp = f"{p}.frame_features[{k}]"
            features[r.get(fd, "id", fp, int)] = r.vector(r.get(fd, "feature", fp), f"{fp}.feature")
        anchor = r.get(rd, "anchor_id", p)
        node = RoomNode(
            reference_pose=r.pose(r.get(rd, "reference_pose", p), f"{p}.reference_pose"),
            local_frame_poses=poses,
            point_cloud=_load_cloud(base_dir, r.get(rd, "point_cloud", p, str), f"{p}.point_cloud"),
            frame_features=features,
            finalized=r.get(rd, "finalized", p, bool),
            id=r.get(rd, "id", p, int),
            anchor_id=None if anchor is None else int(anchor),
            batch_frame_ids=[int(f) for f in r.get(rd, "batch_frame_ids", p, list)],
            frame_timestamps=times,
            frame_depths=depths,
            valid=r.get(rd, "valid", p, bool),
            merged_from=[int(f) for f in r.get(rd, "merged_from", p, list)],
            room_frame_ids=[int(f) for f in r.get(rd, "room_frame_ids", p, list)],
        )
        try:
            graph.add_room(node)
        except StructuralError as e:
            raise SceneGraphParseError(p, str(e)) from None

    for i, od in enumerate(r.get(doc, "objects", "", list)):
        p = f"objects[{i}]"
        try:
            node = ObjectNode(
                parent_room=r.get(od, "parent_room", p, int),
                pose=r.pose(r.get(od, "pose", p), f"{p}.pose"),
                point_cloud=_load_cloud(base_dir, r.get(od, "point_cloud", p, str), f"{p}.point_cloud"),
                feature=r.vector(r.get(od, "feature", p), f"{p}.feature"),
                label=r.get(od, "label", p, str),
                support_count=r.get(od, "support_count", p, int),
                id=r.get(od, "id", p, int),
            )
            graph.add_object(node.parent_room, node)
        except (StructuralError, InvalidInputError) as e:
            raise SceneGraphParseError(p, str(e)) from None

    for i, ed in enumerate(r.get(doc, "room_edges", "", list)):
        p = f"room_edges[{i}]"
        rooms = r.get(ed, "rooms", p, list)
        if len(rooms) != 2 or not all(r.is_kind(x, int) for x in rooms):
            raise SceneGraphParseError(f"{p}.rooms", "expected two room ids")
        info_rows = r.get(ed, "information", p, list)
        info = np.array([r.vector(row, f"{p}.information[{k}]", 7) for k, row in enumerate(info_rows)])
        try:
            edge = RoomEdge(
                rooms=(rooms[0], rooms[1]),
                estimates=[r.pose(e, f"{p}.estimates[{k}]") for k, e in enumerate(r.get(ed, "estimates", p, list))],
                consensus=r.pose(r.get(ed, "consensus", p), f"{p}.consensus"),
                kind=r.get(ed, "kind", p, str),
                information=info,
            )
            graph.add_room_edge(edge, r.get(ed, "id", p, int))
        except StructuralError as e:
            raise SceneGraphParseError(p, str(e)) from None

    declared = set()
    for i, pair in enumerate(r.get(doc, "object_edges", "", list)):
        if not isinstance(pair, list) or len(pair) != 2:
            raise SceneGraphParseError(f"object_edges[{i}]", "expected [room id, object id]")
        declared.add((pair[0], pair[1]))
    if declared != graph.object_edges:
        raise SceneGraphParseError("object_edges", "does not match the objects' parent rooms")

    graph._sync_counters()
    return graph


def save_scene_graph(graph: SceneGraph, out_dir: Path) -> Path:
    """Write scene_graph.json and the referenced PLY clouds under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rid, room in graph.rooms.items():
        write_ply(out_dir / room_cloud_ref(rid), room.point_cloud)
    for oid, obj in graph.objects.items():
        write_ply(out_dir / object_cloud_ref(oid), obj.point_cloud)
    doc_path = out_dir / "scene_graph.json"
    doc_path.write_bytes(serialize(graph))
    logger.info(f"Saved scene graph ({len(graph.rooms)} rooms, {len(graph.objects)} objects) to {doc_path}")
    return doc_path


def load_scene_graph(path: Path) -> SceneGraph:
    path = Path(path)
    if path.is_dir():
        path = path / "scene_graph.json"
    if not path.is_file():
        raise LookupFailure(f"scene graph document not found: {path}")
    return deserialize(path.read_bytes(), base_dir=path.parent)
