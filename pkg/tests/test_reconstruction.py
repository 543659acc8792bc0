"""
Tests for reconstruction providers: the synthetic oracle, the replay reader
and the retrying batch reconstruction.
"""

import numpy as np
import pytest

from geometry.pointcloud import PointCloud
from geometry.sim3 import Sim3
from mapping.room_segmenter import FrameRecord
from reconstruction.oracle import OracleNoiseModel, SyntheticOracle
from reconstruction.provider import RelativePoseEstimate, RoomReconstruction, reconstruct_with_retry
from reconstruction.replay import ReplayProvider, write_replay_batch, write_replay_pairs
from utils.errors import ConfigError, InvalidInputError, LookupFailure, ReconstructionFailedError


def scaled_exact_noise(scale: float) -> OracleNoiseModel:
    """Exact geometry in a gauge of fixed scale."""
    return OracleNoiseModel(pose_rot_sigma=0.0, pose_trans_sigma=0.0, point_sigma=0.0,
                            batch_scale_range=(scale, scale), pair_failure_rate=0.0)


class FlakyProvider:
    """Fails the first `failures` batch requests, then answers with identity-anchored poses."""

    def __init__(self, failures: int):
        self.failures = failures
        self.requests = []

    def reconstruct_batch(self, frames):
        self.requests.append([f.id for f in frames])
        if len(self.requests) <= self.failures:
            raise ReconstructionFailedError("simulated failure")
        poses = {f.id: Sim3.from_translation([f.id - frames[0].id, 0.0, 0.0]) for f in frames}
        return RoomReconstruction(frame_poses=poses, points=PointCloud(np.zeros((1, 3))))

    def relative_pose(self, frame_p, frame_q):
        return RelativePoseEstimate.invalid()


def _frames(n: int):
    return [FrameRecord(id=k, timestamp=k / 10.0, feature=np.array([1.0, 0.0])) for k in range(n)]


@pytest.mark.unit
class TestProviderTypes:

    def test_anchor_must_be_identity(self):
        with pytest.raises(InvalidInputError):
            RoomReconstruction(frame_poses={3: Sim3.from_translation([1.0, 0.0, 0.0]), 4: Sim3.identity()},
                               points=PointCloud.empty())

    def test_depths_from_per_frame_points(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 3.0], [0.0, 0.0, 2.0]]))
        rec = RoomReconstruction(frame_poses={0: Sim3.identity()}, points=cloud, per_frame_points={0: cloud})
        assert rec.frame_depths == {0: 2.0}
        assert rec.anchor_id == 0

    def test_valid_estimate_needs_confidence(self):
        with pytest.raises(InvalidInputError):
            RelativePoseEstimate(pose=Sim3.identity(), valid=True, confidence=0.0)
        assert not RelativePoseEstimate.invalid().valid

    def test_noise_model_validation(self):
        with pytest.raises(ConfigError):
            OracleNoiseModel(batch_scale_range=(0.0, 1.0)).validate()
        with pytest.raises(ConfigError):
            OracleNoiseModel(pair_failure_rate=1.5).validate()


@pytest.mark.unit
class TestRetry:

    def test_second_attempt_uses_shifted_stride(self):
        provider = FlakyProvider(failures=1)
        rec, used = reconstruct_with_retry(provider, _frames(10), batch_size=4)
        assert provider.requests == [[0, 3, 6, 9], [0, 4, 8, 9]]
        assert [f.id for f in used] == [0, 4, 8, 9]
        assert rec.anchor_id == 0

    def test_short_batch_retries_with_one_frame_fewer(self):
        provider = FlakyProvider(failures=1)
        _, used = reconstruct_with_retry(provider, _frames(3), batch_size=10)
        assert provider.requests[0] == [0, 1, 2]
        assert [f.id for f in used] == [0, 2]

    def test_both_attempts_fail(self):
        with pytest.raises(ReconstructionFailedError):
            reconstruct_with_retry(FlakyProvider(failures=2), _frames(10), batch_size=4)

    def test_no_alternative_for_two_frames(self):
        with pytest.raises(ReconstructionFailedError):
            reconstruct_with_retry(FlakyProvider(failures=1), _frames(2), batch_size=4)


@pytest.mark.unit
class TestSyntheticOracle:
    """Gauge, determinism and pair validity of the simulated provider."""

    def test_noiseless_batch_matches_ground_truth(self, noiseless_world):
        config, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, OracleNoiseModel.noiseless())
        frames = sequence.frames[:20]
        rec = oracle.reconstruct_batch(frames)
        gt = sequence.gt_poses()
        anchor = frames[0].id
        assert rec.anchor_id == anchor
        assert rec.frame_poses[anchor].allclose(Sim3.identity(), atol=0.0)
        for f in frames[1:]:
            expected = gt[anchor].inverse().compose(gt[f.id])
            assert rec.frame_poses[f.id].allclose(expected, atol=1e-9)

    def test_gauge_scale_multiplies_distances(self, noiseless_world):
        _, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, scaled_exact_noise(2.0))
        frames = sequence.frames[:10]
        rec = oracle.reconstruct_batch(frames)
        gt = sequence.gt_poses()
        for f in frames[1:]:
            true_rel = gt[frames[0].id].inverse().compose(gt[f.id])
            assert np.allclose(rec.frame_poses[f.id].translation, 2.0 * true_rel.translation, atol=1e-9)
            assert rec.frame_poses[f.id].scale == pytest.approx(1.0)
        assert rec.frame_depths[frames[0].id] == pytest.approx(2.0 * oracle.frame_depth(frames[0].id))

    def test_requests_are_deterministic(self, noiseless_world):
        _, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, OracleNoiseModel(pair_failure_rate=0.0, rng_seed=7))
        frames = sequence.frames[40:60]
        a = oracle.reconstruct_batch(frames)
        b = oracle.reconstruct_batch(list(reversed(frames)))
        for fid in a.frame_poses:
            assert a.frame_poses[fid].allclose(b.frame_poses[fid], atol=0.0)
        p, q = frames[3].id, frames[5].id
        assert oracle.relative_pose(p, q).pose.allclose(oracle.relative_pose(p, q).pose, atol=0.0)

    def test_self_pair_is_identity(self, noiseless_world):
        _, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, OracleNoiseModel.noiseless())
        est = oracle.relative_pose(5, 5)
        assert est.valid
        assert est.pose.allclose(Sim3.identity(), atol=1e-12)
        assert est.confidence == pytest.approx(1.0)

    def test_distant_rooms_are_not_covisible(self, noiseless_world):
        _, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, OracleNoiseModel.noiseless())
        first = next(f for f in sequence.frames if f.gt_room == 0)
        last = next(f for f in reversed(sequence.frames) if f.gt_room == 4)
        assert not oracle.relative_pose(first.id, last.id).valid

    def test_unknown_frame(self, noiseless_world):
        _, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, OracleNoiseModel.noiseless())
        with pytest.raises(LookupFailure):
            oracle.relative_pose(0, 10 ** 6)

    def test_single_frame_batch_rejected(self, noiseless_world):
        _, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, OracleNoiseModel.noiseless())
        with pytest.raises(InvalidInputError):
            oracle.reconstruct_batch(sequence.frames[:1])

    def test_certain_batch_failure(self, noiseless_world):
        _, world, sequence = noiseless_world
        noise = OracleNoiseModel.noiseless()
        noise.batch_failure_rate = 1.0
        oracle = SyntheticOracle(world, sequence, noise)
        with pytest.raises(ReconstructionFailedError):
            reconstruct_with_retry(oracle, sequence.frames[:30], batch_size=10)


@pytest.mark.unit
class TestReplayProvider:

    def test_missing_directory(self, tmp_path):
        with pytest.raises(LookupFailure):
            ReplayProvider(tmp_path / "absent")

    def test_batch_roundtrip(self, noiseless_world, tmp_path):
        _, world, sequence = noiseless_world
        oracle = SyntheticOracle(world, sequence, scaled_exact_noise(1.5))
        frames = sequence.frames[:15]
        rec = oracle.reconstruct_batch(frames)
        write_replay_batch(tmp_path, rec)

        replay = ReplayProvider(tmp_path)
        assert replay.anchors() == [frames[0].id]
        back = replay.reconstruct_batch(frames)
        assert back.frame_ids() == rec.frame_ids()
        for fid in rec.frame_ids():
            assert back.frame_poses[fid].allclose(rec.frame_poses[fid], atol=1e-9)
            assert back.frame_depths[fid] == pytest.approx(rec.frame_depths[fid])
        assert len(back.points) == len(rec.points)

    def test_unknown_batch_fails(self, tmp_path):
        replay = ReplayProvider(tmp_path)
        with pytest.raises(ReconstructionFailedError):
            replay.reconstruct_batch(_frames(3))

    def test_pairs_served_in_both_directions(self, tmp_path):
        pose = Sim3.from_rotvec([0.0, 0.0, 0.3], [1.0, 2.0, 0.0], 1.2)
        est = RelativePoseEstimate(pose=pose, valid=True, confidence=0.5, depth_p=2.0, depth_q=3.0)
        write_replay_pairs(tmp_path, {(4, 9): est, (1, 2): RelativePoseEstimate.invalid()})
        replay = ReplayProvider(tmp_path)

        forward = replay.relative_pose(4, 9)
        assert forward.pose.allclose(pose, atol=1e-12)
        assert forward.confidence == 0.5
        backward = replay.relative_pose(9, 4)
        assert backward.pose.allclose(pose.inverse(), atol=1e-12)
        assert (backward.depth_p, backward.depth_q) == (3.0, 2.0)
        assert not replay.relative_pose(1, 2).valid
