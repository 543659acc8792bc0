"""
Tests for run evaluation: room precision/recall, per-room chamfer, and the
report format.
"""

import json
from types import SimpleNamespace

import numpy as np
import pytest

from analysis.evaluation import (INVALID_MARK, EvaluationConfig, GroundTruth, RunReport, evaluate_run,
                                 room_correspondence, room_segmentation_pr, world_room_clouds)
from geometry.pointcloud import PointCloud, Trajectory
from geometry.sim3 import Sim3
from mapping.scene_graph import RoomNode, SceneGraph
from utils.errors import ConfigError, InsufficientOverlapError, InvalidInputError


def _grid():
    ticks = 0.5 * np.arange(6)
    gx, gy, gz = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def _gt_cloud() -> PointCloud:
    """Two ground-truth rooms split at x = 1.25, plus corridor points."""
    pts = _grid()
    labels = np.where(pts[:, 0] < 1.25, 0, 1)
    corridor = np.array([[10.0, 0.0, 0.0], [11.0, 0.0, 0.0]])
    return PointCloud(np.vstack([pts, corridor]), np.concatenate([labels, [-1, -1]]))


def _gt_trajectory() -> Trajectory:
    positions = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]
    return Trajectory(np.arange(5, dtype=float), tuple(Sim3.from_translation(p) for p in positions))


def _result(graph, trajectory):
    return SimpleNamespace(graph=graph, trajectory=trajectory, stage_timings={"total": 1.5}, counts={"rooms": 2})


def _exact_graph() -> SceneGraph:
    gt = _gt_cloud()
    graph = SceneGraph()
    for rid in (0, 1):
        room_points = gt.points[gt.labels == rid]
        graph.add_room(RoomNode(reference_pose=Sim3.identity(), local_frame_poses={10 * rid: Sim3.identity()},
                                point_cloud=PointCloud(room_points)))
    return graph


@pytest.mark.unit
class TestRoomSegmentation:
    """Max-overlap precision and recall."""

    def test_perfect_labelling(self):
        gt = _gt_cloud()
        predicted = gt.subset(gt.labels >= 0).with_labels(gt.labels[gt.labels >= 0] + 5)
        assert room_segmentation_pr(predicted, gt) == (1.0, 1.0)
        assert room_correspondence(predicted, gt) == {5: 0, 6: 1}

    def test_merged_rooms_lower_precision(self):
        gt = _gt_cloud()
        predicted = PointCloud(_grid(), np.full(len(_grid()), 7))
        precision, recall = room_segmentation_pr(predicted, gt)
        assert precision == pytest.approx(0.5)
        assert recall == pytest.approx(1.0)

    def test_split_room_lowers_recall(self):
        gt = _gt_cloud()
        pts = _grid()
        labels = np.where(pts[:, 0] < 1.25, np.where(pts[:, 1] < 1.25, 0, 1), 2)
        precision, recall = room_segmentation_pr(PointCloud(pts, labels), gt)
        assert precision == pytest.approx(1.0)
        assert recall == pytest.approx(0.75)

    def test_no_matches_within_radius(self):
        gt = _gt_cloud()
        far = PointCloud(_grid() + 100.0, np.zeros(len(_grid())))
        with pytest.raises(InsufficientOverlapError):
            room_segmentation_pr(far, gt)

    def test_unlabelled_cloud_rejected(self):
        with pytest.raises(InvalidInputError):
            room_segmentation_pr(PointCloud(_grid()), _gt_cloud())


@pytest.mark.unit
class TestRunReport:

    def test_invalid_rooms_marked(self):
        report = RunReport(per_room_chamfer={0: 0.01, 3: None}, room_precision=0.9, room_recall=1.0)
        doc = report.to_dict()
        assert doc["per_room_chamfer"] == {"0": 0.01, "3": INVALID_MARK}
        back = RunReport.from_dict(doc)
        assert back.per_room_chamfer == {0: 0.01, 3: None}
        assert back.mean_chamfer == pytest.approx(0.01)
        assert INVALID_MARK in report.to_csv()
        assert INVALID_MARK in report.table()

    def test_fraction_out_of_range(self):
        with pytest.raises(InvalidInputError):
            RunReport(room_precision=1.2)
        with pytest.raises(InvalidInputError):
            RunReport(stage_timings={"edges": -0.1})

    def test_save(self, tmp_path):
        report = RunReport(ate_m={"sim3": 0.02}, notes=["something omitted"])
        path = report.save(tmp_path / "out" / "report.json")
        assert path.is_file()
        assert RunReport.from_dict(json.loads(path.read_text())).ate_m == {"sim3": 0.02}

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            EvaluationConfig(alignments=("affine",)).validate()
        with pytest.raises(ConfigError):
            EvaluationConfig(match_radius=0.0).validate()


@pytest.mark.unit
class TestEvaluateRun:

    def test_exact_run(self):
        report = evaluate_run(_result(_exact_graph(), _gt_trajectory()),
                              GroundTruth(trajectory=_gt_trajectory(), cloud=_gt_cloud(), n_objects=3))
        for mode in ("none", "se3", "sim3"):
            assert report.ate_m[mode] == pytest.approx(0.0, abs=1e-9)
        assert (report.room_precision, report.room_recall) == (1.0, 1.0)
        assert report.room_mapping == {0: 0, 1: 1}
        assert report.per_room_chamfer[0] == pytest.approx(0.0, abs=1e-9)
        assert report.per_room_chamfer[1] == pytest.approx(0.0, abs=1e-9)
        assert report.counts["gt_objects"] == 3
        assert report.notes == []

    def test_missing_ground_truth_adds_notes(self):
        graph = _exact_graph()
        graph.room(1).valid = False
        report = evaluate_run(_result(graph, Trajectory((), ())), GroundTruth())
        assert report.ate_m == {}
        assert report.per_room_chamfer == {1: None}
        assert any("ATE omitted" in n for n in report.notes)
        assert any("room metrics omitted" in n for n in report.notes)

    def test_world_room_clouds_labelled_by_room(self):
        graph = _exact_graph()
        graph.room(0).reference_pose = Sim3.from_translation([1.0, 0.0, 0.0])
        clouds = world_room_clouds(graph)
        assert set(clouds) == {0, 1}
        assert np.all(clouds[0].labels == 0)
        assert np.allclose(clouds[0].points, graph.room(0).point_cloud.points + [1.0, 0.0, 0.0])
