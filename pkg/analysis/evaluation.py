# -*- coding: utf-8 -*-
"""
Run Evaluation

Metrics for a finished pipeline run against simulator ground truth:

- ATE (translation RMSE) under each alignment mode.
- Per-room chamfer distance after a global Sim(3) alignment taken from the
  trajectory, refined per room with Sim(3) ICP. Rooms without a valid
  reconstruction are reported as "X".
- Room segmentation precision/recall by max-overlap of labelled points.

Missing ground-truth pieces drop the affected metric and add a note to the
report instead of failing.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from tabulate import tabulate

from geometry.alignment import icp_sim3
from geometry.metrics import ALIGNMENT_MODES, align_trajectories, ate_rmse, chamfer_distance
from geometry.pointcloud import PointCloud, Trajectory, transform_points
from geometry.sim3 import Sim3
from utils.errors import ConfigError, InsufficientOverlapError, InvalidInputError

logger = logging.getLogger(__name__)

INVALID_MARK = "X"


@dataclass
class EvaluationConfig:
    alignments: Tuple[str, ...] = ALIGNMENT_MODES
    max_time_diff: float = 0.02
    match_radius: float = 0.1
    chamfer_truncation: Optional[float] = None
    icp_iterations: int = 30
    icp_max_points: int = 5000
    icp_max_correspondence: float = 0.1

    def validate(self) -> None:
        unknown = [a for a in self.alignments if a not in ALIGNMENT_MODES]
        if unknown:
            raise ConfigError(f"unknown alignment modes {unknown}", "evaluation.alignments")
        if self.match_radius <= 0 or self.max_time_diff <= 0:
            raise ConfigError("match_radius and max_time_diff must be positive", "evaluation")
        if self.icp_max_points < 3:
            raise ConfigError("icp_max_points must be >= 3", "evaluation.icp_max_points")


@dataclass
class GroundTruth:
    """Reference data for a run; any field may be missing."""
    trajectory: Optional[Trajectory] = None
    cloud: Optional[PointCloud] = None  # labelled with room ids, corridor < 0
    n_objects: Optional[int] = None


@dataclass
class RunReport:
    ate_m: Dict[str, float] = field(default_factory=dict)
    per_room_chamfer: Dict[int, Optional[float]] = field(default_factory=dict)
    room_precision: Optional[float] = None
    room_recall: Optional[float] = None
    stage_timings: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    room_mapping: Dict[int, int] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("room_precision", "room_recall"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")
        if any(t < 0 for t in self.stage_timings.values()):
            raise InvalidInputError("stage timings must be >= 0")

    @property
    def mean_chamfer(self) -> Optional[float]:
        values = [v for v in self.per_room_chamfer.values() if v is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["per_room_chamfer"] = {str(k): (INVALID_MARK if v is None else v)
                                   for k, v in sorted(self.per_room_chamfer.items())}
        doc["room_mapping"] = {str(k): v for k, v in sorted(self.room_mapping.items())}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "RunReport":
        return cls(
            ate_m={k: float(v) for k, v in doc.get("ate_m", {}).items()},
            per_room_chamfer={int(k): (None if v == INVALID_MARK else float(v))
                              for k, v in doc.get("per_room_chamfer", {}).items()},
            room_precision=doc.get("room_precision"),
            room_recall=doc.get("room_recall"),
            stage_timings={k: float(v) for k, v in doc.get("stage_timings", {}).items()},
            counts={k: int(v) for k, v in doc.get("counts", {}).items()},
            room_mapping={int(k): int(v) for k, v in doc.get("room_mapping", {}).items()},
            notes=list(doc.get("notes", [])),
        )

    def room_rows(self) -> pd.DataFrame:
        """One row per predicted room, for spreadsheet comparison."""
        rows = [{
            "room_id": rid,
            "gt_room": self.room_mapping.get(rid),
            "chamfer_m": INVALID_MARK if value is None else value,
        } for rid, value in sorted(self.per_room_chamfer.items())]
        return pd.DataFrame(rows, columns=["room_id", "gt_room", "chamfer_m"])

    def to_csv(self) -> str:
        return self.room_rows().to_csv(index=False)

    def table(self) -> str:
        """Human-readable summary."""
        fmt = lambda v: "-" if v is None else f"{v:.4f}"
        summary = [[f"ATE ({mode})", f"{value:.6f} m"] for mode, value in sorted(self.ate_m.items())]
        summary += [["room precision", fmt(self.room_precision)], ["room recall", fmt(self.room_recall)]]
        summary += [["mean chamfer", fmt(self.mean_chamfer)]]
        summary += [[k, v] for k, v in sorted(self.counts.items())]
        summary += [[f"time {k}", f"{v:.3f} s"] for k, v in self.stage_timings.items()]
        parts = [tabulate(summary, headers=["metric", "value"], tablefmt="github")]
        if self.per_room_chamfer:
            parts.append(tabulate(self.room_rows().values.tolist(),
                                  headers=["room", "gt room", "chamfer (m)"], tablefmt="github"))
        if self.notes:
            parts.append("\n".join(f"note: {n}" for n in self.notes))
        return "\n\n".join(parts)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path


def _room_points(cloud: PointCloud) -> PointCloud:
    if not cloud.has_labels:
        raise InvalidInputError("room segmentation needs labelled clouds")
    return cloud.subset(cloud.labels >= 0)


def _max_overlap(labels_a: np.ndarray, labels_b: np.ndarray) -> Tuple[float, Dict[int, int]]:
    """Mean over labels of A of the largest fraction shared with one label of B, and the argmax map."""
    table = pd.crosstab(labels_a, labels_b)
    fractions = table.max(axis=1) / table.sum(axis=1)
    best = table.idxmax(axis=1)
    return float(fractions.mean()), {int(a): int(b) for a, b in best.items()}


def _matched_labels(query: PointCloud, reference: PointCloud, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    dist, idx = cKDTree(reference.points).query(query.points, distance_upper_bound=radius)
    hit = np.isfinite(dist)
    return query.labels[hit], reference.labels[idx[hit]]


def room_segmentation_pr(predicted: PointCloud, gt: PointCloud, radius: float = 0.1) -> Tuple[float, float]:
    """
    Precision and recall of a room labelling.

    Precision averages, over predicted rooms, the largest fraction of a room's
    matched points that fall in a single ground-truth room (points matched by
    nearest neighbour within `radius`). Recall is the same quantity with the
    roles swapped. Negative labels are ignored.

    Raises:
        InsufficientOverlapError: No point matches in one of the directions.
    """
    pred = _room_points(predicted)
    ref = _room_points(gt)
    if pred.is_empty() or ref.is_empty():
        raise InsufficientOverlapError("no room-labelled points to compare")
    pred_lab, gt_lab = _matched_labels(pred, ref, radius)
    gt_back, pred_back = _matched_labels(ref, pred, radius)
    if pred_lab.size == 0 or gt_back.size == 0:
        raise InsufficientOverlapError(f"no points matched within {radius} m")
    precision, _ = _max_overlap(pred_lab, gt_lab)
    recall, _ = _max_overlap(gt_back, pred_back)
    return precision, recall


def room_correspondence(predicted: PointCloud, gt: PointCloud, radius: float = 0.1) -> Dict[int, int]:
    """Predicted room -> ground-truth room holding most of its matched points."""
    pred, ref = _room_points(predicted), _room_points(gt)
    if pred.is_empty() or ref.is_empty():
        return {}
    pred_lab, gt_lab = _matched_labels(pred, ref, radius)
    if pred_lab.size == 0:
        return {}
    return _max_overlap(pred_lab, gt_lab)[1]


def _subsample(cloud: PointCloud, max_points: int) -> PointCloud:
    if len(cloud) <= max_points:
        return cloud
    return cloud.subset(np.linspace(0, len(cloud) - 1, max_points).astype(int))


def world_room_clouds(graph, alignment: Sim3 = None) -> Dict[int, Optional[PointCloud]]:
    """Room clouds in the world frame (optionally re-aligned), labelled by room id; None for invalid rooms."""
    alignment = alignment or Sim3.identity()
    out: Dict[int, Optional[PointCloud]] = {}
    for rid, room in sorted(graph.rooms.items()):
        if not room.valid or room.point_cloud.is_empty():
            out[rid] = None
            continue
        world = transform_points(alignment.compose(room.reference_pose), room.point_cloud)
        out[rid] = PointCloud(world.points, np.full(len(world), rid, dtype=np.int64))
    return out


def per_room_chamfer(room_clouds: Dict[int, Optional[PointCloud]], gt: PointCloud, mapping: Dict[int, int],
                     config: EvaluationConfig, notes: Optional[List[str]] = None) -> Dict[int, Optional[float]]:
    """Chamfer of each room against its ground-truth room after per-room Sim(3) ICP."""
    notes = notes if notes is not None else []
    out: Dict[int, Optional[float]] = {}
    for rid, cloud in room_clouds.items():
        if cloud is None:
            out[rid] = None
            continue
        gt_room = mapping.get(rid)
        if gt_room is None:
            notes.append(f"room {rid} has no ground-truth counterpart")
            out[rid] = None
            continue
        target = gt.subset(gt.labels == gt_room)
        T = icp_sim3(_subsample(cloud, config.icp_max_points), target, iterations=config.icp_iterations,
                     max_correspondence=config.icp_max_correspondence)
        out[rid] = chamfer_distance(transform_points(T, cloud), target, config.chamfer_truncation)
    return out


def evaluate_run(result, ground_truth: GroundTruth, config: Optional[EvaluationConfig] = None) -> RunReport:
    """
    Assemble the report for a pipeline result.

    `result` needs `graph`, `trajectory`, `stage_timings` and `counts`
    attributes (a PipelineResult or a run loaded from disk).
    """
    config = config or EvaluationConfig()
    config.validate()
    notes: List[str] = []
    report = RunReport(stage_timings=dict(result.stage_timings), counts=dict(result.counts), notes=notes)
    if ground_truth.n_objects is not None:
        report.counts["gt_objects"] = int(ground_truth.n_objects)

    alignment = Sim3.identity()
    est = result.trajectory
    if ground_truth.trajectory is None or est is None or len(est) == 0:
        notes.append("ATE omitted: trajectory or ground truth missing")
    else:
        for mode in config.alignments:
            try:
                report.ate_m[mode] = ate_rmse(est, ground_truth.trajectory, mode, config.max_time_diff)
            except (InsufficientOverlapError, InvalidInputError) as e:
                notes.append(f"ATE ({mode}) omitted: {e}")
        try:
            alignment, _, _ = align_trajectories(est, ground_truth.trajectory, "sim3", config.max_time_diff)
        except (InsufficientOverlapError, InvalidInputError) as e:
            notes.append(f"global alignment unavailable: {e}")

    room_clouds = world_room_clouds(result.graph, alignment)
    gt_cloud = ground_truth.cloud
    if gt_cloud is None or not gt_cloud.has_labels:
        notes.append("room metrics omitted: labelled ground-truth cloud missing")
        report.per_room_chamfer = {rid: None for rid, c in room_clouds.items() if c is None}
    else:
        valid = [c for c in room_clouds.values() if c is not None]
        if valid:
            predicted = PointCloud.concatenate(valid)
            try:
                report.room_precision, report.room_recall = room_segmentation_pr(
                    predicted, gt_cloud, config.match_radius)
            except InsufficientOverlapError as e:
                notes.append(f"room precision/recall omitted: {e}")
            report.room_mapping = room_correspondence(predicted, gt_cloud, config.match_radius)
        report.per_room_chamfer = per_room_chamfer(room_clouds, gt_cloud, report.room_mapping, config, notes)

    for note in notes:
        logger.warning(note)
    logger.info(f"Evaluation: ATE {report.ate_m}, P/R {report.room_precision}/{report.room_recall}")
    return report
