"""
Tests for transition pair selection, per-pair edge estimates and their
consensus.
"""

import numpy as np
import pytest

from geometry.pointcloud import PointCloud
from geometry.sim3 import Sim3, random_sim3, sim3_exp
from mapping.edges import (TransitionPair, aggregate_edge, bridge_pair_scale, chain_overlap_edge,
                           estimate_transition_edges, select_boundary_pairs, select_transition_pairs)
from mapping.scene_graph import RoomNode
from reconstruction.oracle import OracleNoiseModel, SyntheticOracle
from reconstruction.provider import RelativePoseEstimate
from utils.errors import EdgeEstimationError, InvalidInputError, LookupFailure


def _line_room(room_id: int, frame_ids) -> RoomNode:
    return RoomNode(reference_pose=Sim3.identity(),
                    local_frame_poses={f: Sim3.from_translation([0.1 * f, 0.0, 0.0]) for f in frame_ids},
                    point_cloud=PointCloud.empty(), id=room_id,
                    frame_timestamps={f: f / 10.0 for f in frame_ids})


def _room_from(rec, room_id: int) -> RoomNode:
    return RoomNode(reference_pose=Sim3.identity(), local_frame_poses=dict(rec.frame_poses),
                    point_cloud=rec.points, id=room_id, frame_depths=dict(rec.frame_depths))


class NoPairs:
    def relative_pose(self, frame_p, frame_q):
        return RelativePoseEstimate.invalid()


@pytest.fixture
def scaled_rooms(noiseless_world):
    """Two overlapping batches reconstructed in gauges of different scale, without pose noise."""
    _, world, sequence = noiseless_world
    noise = OracleNoiseModel(pose_rot_sigma=0.0, pose_trans_sigma=0.0, point_sigma=0.0,
                             batch_scale_range=(0.7, 1.4), pair_failure_rate=0.0, rng_seed=3)
    oracle = SyntheticOracle(world, sequence, noise)
    rec_a = oracle.reconstruct_batch(sequence.frames[0:20])
    rec_b = oracle.reconstruct_batch(sequence.frames[15:35])
    expected = rec_a.gauge.compose(rec_b.gauge.inverse())
    return oracle, _room_from(rec_a, 0), _room_from(rec_b, 1), expected


@pytest.mark.unit
class TestPairSelection:

    def test_boundary_frames_of_consecutive_rooms(self):
        pairs = select_transition_pairs(_line_room(0, range(10)), _line_room(1, range(10, 20)), k=3)
        assert len(pairs) == 9
        assert pairs[0] == TransitionPair(7, 10)
        assert {p.frame_p for p in pairs} == {7, 8, 9}
        assert {p.frame_q for p in pairs} == {10, 11, 12}

    def test_shared_frames_are_self_paired_first(self):
        pairs = select_transition_pairs(_line_room(0, range(10)), _line_room(1, range(8, 20)), k=2)
        assert pairs[:2] == [TransitionPair(8, 8), TransitionPair(9, 9)]
        assert len(pairs) == 4

    def test_k_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            select_transition_pairs(_line_room(0, [1]), _line_room(1, [2]), k=0)
        with pytest.raises(InvalidInputError):
            select_boundary_pairs(_line_room(0, [1]), _line_room(1, [2]), k=0)

    def test_boundary_pairs_of_distant_rooms(self):
        pairs = select_boundary_pairs(_line_room(0, range(10)), _line_room(3, range(30, 40)), k=3)
        assert {p.frame_p for p in pairs} == {7, 8, 9}
        assert {p.frame_q for p in pairs} == {30, 31, 32}

    def test_boundary_pairs_match_transition_pairs_for_consecutive_rooms(self):
        a, b = _line_room(0, range(10)), _line_room(1, range(10, 20))
        assert set(select_boundary_pairs(a, b, 3)) == set(select_transition_pairs(a, b, 3))


@pytest.mark.unit
class TestEdgeEstimates:
    """Per-pair estimates recover the exact gauge difference without noise."""

    def test_bridge_scale(self):
        pose = Sim3.from_rotvec([0.0, 0.2, 0.0], [1.0, 2.0, 3.0], 1.5)
        expected = Sim3.from_scale(2.0).compose(pose).compose(Sim3.from_scale(4.0).inverse())
        assert bridge_pair_scale(pose, 2.0, 4.0).allclose(expected, atol=1e-12)

    def test_transition_edge_recovers_gauge_difference(self, scaled_rooms):
        oracle, room_a, room_b, expected = scaled_rooms
        pairs = select_transition_pairs(room_a, room_b, k=3)
        edge = estimate_transition_edges(room_a, room_b, pairs, oracle)
        assert edge.rooms == (0, 1)
        assert len(edge.estimates) == len(pairs)
        for est in edge.estimates:
            assert est.allclose(expected, atol=1e-8)
        assert edge.consensus.allclose(expected, atol=1e-8)

    def test_chain_overlap_edge(self, scaled_rooms):
        _, room_a, room_b, expected = scaled_rooms
        edge = chain_overlap_edge(room_a, room_b)
        assert len(edge.estimates) == 5
        assert edge.consensus.allclose(expected, atol=1e-8)

    def test_chain_without_shared_frames(self):
        with pytest.raises(EdgeEstimationError):
            chain_overlap_edge(_line_room(0, range(5)), _line_room(1, range(5, 10)))

    def test_no_valid_pair(self):
        a, b = _line_room(0, range(5)), _line_room(1, range(5, 10))
        with pytest.raises(EdgeEstimationError):
            estimate_transition_edges(a, b, select_transition_pairs(a, b), NoPairs())

    def test_pair_outside_rooms(self):
        a, b = _line_room(0, range(5)), _line_room(1, range(5, 10))
        with pytest.raises(LookupFailure):
            estimate_transition_edges(a, b, [TransitionPair(42, 5)], NoPairs())


@pytest.mark.unit
class TestAggregation:

    def test_single_estimate_returned(self, rng):
        T = random_sim3(rng)
        assert aggregate_edge([T]) is T

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            aggregate_edge([])

    def test_symmetric_perturbations_average_out(self, rng):
        T = random_sim3(rng)
        deltas = [1e-3 * rng.normal(size=7) for _ in range(3)]
        estimates = [T.compose(sim3_exp(d)) for d in deltas] + [T.compose(sim3_exp(-d)) for d in deltas]
        assert aggregate_edge(estimates).allclose(T, atol=1e-6)

    def test_outlier_rejected(self, rng):
        T = random_sim3(rng)
        deltas = [1e-3 * rng.normal(size=7) for _ in range(3)]
        estimates = [T.compose(sim3_exp(d)) for d in deltas] + [T.compose(sim3_exp(-d)) for d in deltas]
        outlier = T.compose(sim3_exp(np.array([2.0, -1.0, 0.5, 0.3, 0.0, 0.0, 0.2])))
        with_outlier = aggregate_edge(estimates + [outlier])
        assert with_outlier.allclose(T, atol=1e-6)
