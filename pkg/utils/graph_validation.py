# -*- coding: utf-8 -*-
"""
Scene Graph Validation Utilities

Referential-integrity checks over a scene graph (and optionally the
loop-closure room database): edges reference live rooms, each object hangs
off exactly one live room, edge consensus scales are positive and database
entries point at live rooms.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from geometry.sim3 import Sim3
from mapping.scene_graph import SceneGraph

logger = logging.getLogger(__name__)


@dataclass
class ValidationResult:
    """Results from a validation check."""
    passed: bool
    message: str
    details: Optional[Dict[str, Any]] = None

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}: {self.message}"


class SceneGraphValidator:
    """Validates scene graph structure."""

    def __init__(self, graph: SceneGraph, database=None):
        self.graph = graph
        self.database = database
        self.results: List[ValidationResult] = []

    def reset_results(self):
        self.results = []

    def _record(self, passed: bool, message: str, details: Optional[Dict[str, Any]] = None) -> ValidationResult:
        res = ValidationResult(passed, message, details)
        self.results.append(res)
        return res

    def get_summary(self) -> Dict[str, Any]:
        total = len(self.results)
        passed = sum(1 for r in self.results if r.passed)
        return {
            "total": total,
            "passed": passed,
            "failed": total - passed,
            "pass_rate": (passed / total * 100) if total > 0 else 0,
        }

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def validate_room_edges(self) -> ValidationResult:
        dangling = sorted(eid for eid, e in self.graph.room_edges.items()
                          if any(r not in self.graph.rooms for r in e.rooms))
        if dangling:
            return self._record(False, "Room edges reference missing rooms", {"edges": dangling})
        return self._record(True, f"All {len(self.graph.room_edges)} room edges reference live rooms")

    def validate_object_parents(self) -> ValidationResult:
        parents: Dict[int, List[int]] = {}
        for rid, oid in self.graph.object_edges:
            parents.setdefault(oid, []).append(rid)
        problems = {}
        for oid, obj in self.graph.objects.items():
            rooms = parents.get(oid, [])
            if len(rooms) != 1 or rooms[0] not in self.graph.rooms or rooms[0] != obj.parent_room:
                problems[oid] = rooms
        orphans = sorted(oid for oid in parents if oid not in self.graph.objects)
        if problems or orphans:
            return self._record(False, "Objects without exactly one live parent room",
                                {"objects": problems, "edges_to_missing_objects": orphans})
        return self._record(True, f"All {len(self.graph.objects)} objects have one live parent room")

    def validate_edge_scales(self) -> ValidationResult:
        bad = sorted(eid for eid, e in self.graph.room_edges.items()
                     if not (np.isfinite(e.consensus.scale) and e.consensus.scale > 0))
        if bad:
            return self._record(False, "Room edges with non-positive consensus scale", {"edges": bad})
        return self._record(True, "All room edge consensus scales are positive")

    def validate_anchor_frames(self, atol: float = 1e-9) -> ValidationResult:
        bad = []
        for rid, room in self.graph.rooms.items():
            if not room.valid:
                continue
            pose = room.local_frame_poses.get(room.anchor_id)
            if pose is None or not pose.allclose(Sim3.identity(), atol=atol):
                bad.append(rid)
        if bad:
            return self._record(False, "Rooms whose anchor frame is not at identity", {"rooms": bad})
        return self._record(True, "All valid rooms are anchored at identity")

    def validate_database(self) -> ValidationResult:
        if self.database is None:
            return self._record(True, "No room database to check")
        stale = sorted(rid for rid in self.database.entries if rid not in self.graph.rooms)
        if stale:
            return self._record(False, "Room database references removed rooms", {"rooms": stale})
        return self._record(True, f"All {len(self.database.entries)} database entries reference live rooms")


def validate_scene_graph(graph: SceneGraph, database=None) -> SceneGraphValidator:
    """Run every check; returns the validator holding the results."""
    validator = SceneGraphValidator(graph, database)
    validator.validate_room_edges()
    validator.validate_object_parents()
    validator.validate_edge_scales()
    validator.validate_anchor_frames()
    validator.validate_database()
    summary = validator.get_summary()
    log = logger.info if summary["failed"] == 0 else logger.warning
    log(f"Scene graph validation: {summary['passed']}/{summary['total']} checks passed")
    for res in validator.results:
        if not res.passed:
            logger.warning(f"  {res}")
    return validator
