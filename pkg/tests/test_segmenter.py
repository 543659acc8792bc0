"""
Tests for frame scoring, the hysteresis room segmenter and feature files.
"""

import numpy as np
import pytest

from mapping.room_segmenter import (CueSet, FrameRecord, HysteresisState, SegmenterConfig, flush, read_cues,
                                    read_features, score_frame, segment_stream, step, subsample_batch,
                                    write_cues, write_features)
from mapping.pipeline import simulate
from utils.errors import InvalidInputError, StreamOrderError

from conftest import make_config

E_TRANSITION = np.array([1.0, 0.0])
E_ROOM = np.array([0.0, 1.0])


@pytest.fixture
def cues() -> CueSet:
    return CueSet(transition_cues=(("doorway", E_TRANSITION),), room_cues=(("office", E_ROOM),))


class FrameStream:
    """Builds frames with consecutive ids from a string of 'r' (room) and 't' (transition) markers."""

    def __init__(self):
        self.next_id = 0

    def make(self, pattern: str):
        frames = []
        for ch in pattern:
            feature = E_TRANSITION if ch == "t" else E_ROOM
            frames.append(FrameRecord(id=self.next_id, timestamp=self.next_id / 10.0, feature=feature))
            self.next_id += 1
        return frames


def _feed(state, frames, cues):
    events = []
    for f in frames:
        event = step(state, f, cues)
        if event is not None:
            events.append((f.id, event))
    return events


@pytest.mark.unit
class TestScoring:
    """Cue similarity labels and margins."""

    def test_margins_of_pure_frames(self, cues):
        s = FrameStream()
        transition, room = s.make("tr")
        assert score_frame(transition, cues).margin == pytest.approx(1.0)
        assert score_frame(transition, cues).label == "doorway"
        assert score_frame(room, cues).margin == pytest.approx(-1.0)
        assert score_frame(room, cues).label == "office"

    def test_raw_vector_is_normalised(self, cues):
        score = score_frame(np.array([3.0, 3.0]), cues)
        assert score.margin == pytest.approx(0.0)
        assert score.frame_id == -1

    def test_zero_vector_rejected(self, cues):
        with pytest.raises(InvalidInputError):
            score_frame(np.zeros(2), cues)

    def test_frame_feature_must_be_unit(self):
        with pytest.raises(InvalidInputError):
            FrameRecord(id=0, timestamp=0.0, feature=np.array([2.0, 0.0]))

    def test_cue_set_needs_both_groups(self):
        with pytest.raises(InvalidInputError):
            score_frame(E_ROOM, CueSet(transition_cues=(), room_cues=(("office", E_ROOM),)))


@pytest.mark.unit
class TestHysteresis:
    """Confidence accumulation, triggering, re-arming and forced finalization."""

    def test_default_config_values(self):
        cfg = SegmenterConfig()
        assert (cfg.increment, cfg.decay, cfg.trigger_threshold, cfg.c_max) == (1.0, 0.5, 4.0, 8.0)
        assert (cfg.overlap_count, cfg.min_batch_size, cfg.max_batch_size, cfg.release_count) == (5, 20, 240, 0)

    def test_trigger_after_four_transition_frames(self, cues):
        s = FrameStream()
        state = HysteresisState()
        events = _feed(state, s.make("r" * 20 + "tttt"), cues)
        assert len(events) == 1
        frame_id, event = events[0]
        assert frame_id == 23
        assert not event.forced and not event.final
        assert event.frame_ids() == list(range(24))
        assert [f.id for f in event.overlap_frames] == [19, 20, 21, 22, 23]
        assert event.room_frame_ids() == list(range(20))

    def test_confidence_resets_and_detector_disarms(self, cues):
        s = FrameStream()
        state = HysteresisState(config=SegmenterConfig(release_count=3))
        _feed(state, s.make("r" * 20 + "tttt"), cues)
        assert state.confidence == 0.0
        assert not state.armed
        # positive frames while disarmed leave confidence untouched
        _feed(state, s.make("tttttt"), cues)
        assert state.confidence == 0.0
        _feed(state, s.make("rrr"), cues)
        assert state.armed

    def test_default_keeps_accumulating_after_transition(self, cues):
        s = FrameStream()
        state = HysteresisState()
        _feed(state, s.make("r" * 20 + "tttt"), cues)
        assert state.confidence == 0.0
        assert state.armed
        _feed(state, s.make("t"), cues)
        assert state.confidence == SegmenterConfig().increment

    def test_carried_frames_not_counted_towards_min_batch(self, cues):
        s = FrameStream()
        state = HysteresisState()
        _feed(state, s.make("r" * 20 + "tttt"), cues)
        # 15 fresh frames plus 5 carried: confidence is high enough but the batch is not
        assert _feed(state, s.make("r" * 11 + "tttt"), cues) == []
        events = _feed(state, s.make("ttttt"), cues)
        assert [frame_id for frame_id, _ in events] == [43]
        assert events[0][1].carried == 5

    def test_next_batch_starts_with_carried_frames(self, cues):
        s = FrameStream()
        state = HysteresisState()
        _feed(state, s.make("r" * 20 + "tttt"), cues)
        events = _feed(state, s.make("r" * 20 + "tttt"), cues)
        assert len(events) == 1
        event = events[0][1]
        assert event.carried == 5
        assert event.frame_ids()[:5] == [19, 20, 21, 22, 23]
        assert event.room_frame_ids() == list(range(24, 44))

    def test_no_trigger_below_min_batch(self, cues):
        s = FrameStream()
        state = HysteresisState()
        assert _feed(state, s.make("tttttt"), cues) == []
        assert state.confidence == 6.0

    def test_confidence_capped(self, cues):
        s = FrameStream()
        state = HysteresisState()
        _feed(state, s.make("t" * 12), cues)
        assert state.confidence == 8.0

    def test_decay_on_room_frames(self, cues):
        s = FrameStream()
        state = HysteresisState()
        _feed(state, s.make("ttt" + "r"), cues)
        assert state.confidence == 2.5

    def test_forced_at_max_batch(self, cues):
        s = FrameStream()
        state = HysteresisState(config=SegmenterConfig(max_batch_size=30))
        events = _feed(state, s.make("r" * 30), cues)
        assert len(events) == 1
        frame_id, event = events[0]
        assert frame_id == 29 and event.forced
        assert len(event.batch) == 30

    def test_out_of_order_frame_rejected(self, cues):
        state = HysteresisState()
        step(state, FrameRecord(5, 0.5, E_ROOM), cues)
        with pytest.raises(StreamOrderError):
            step(state, FrameRecord(5, 0.6, E_ROOM), cues)
        with pytest.raises(StreamOrderError):
            step(state, FrameRecord(3, 0.7, E_ROOM), cues)

    def test_flush(self, cues):
        s = FrameStream()
        state = HysteresisState()
        _feed(state, s.make("r" * 20 + "tttt"), cues)
        assert flush(state) is None
        _feed(state, s.make("rrrr"), cues)
        tail = flush(state)
        assert tail.final and not tail.forced
        assert tail.overlap_frames == ()
        assert tail.frame_ids() == list(range(19, 28))
        assert tail.room_frame_ids() == [24, 25, 26, 27]

    def test_invalid_config_rejected(self):
        with pytest.raises(InvalidInputError):
            SegmenterConfig(trigger_threshold=10.0).validate()
        with pytest.raises(InvalidInputError):
            SegmenterConfig(overlap_count=20).validate()
        with pytest.raises(InvalidInputError):
            HysteresisState(config=SegmenterConfig(min_batch_size=1))


@pytest.mark.unit
class TestSubsampling:

    def test_keeps_first_and_last(self):
        assert subsample_batch(list(range(10)), 4) == [0, 3, 6, 9]

    def test_phase_shifts_interior(self):
        assert subsample_batch(list(range(10)), 4, phase=0.5) == [0, 4, 8, 9]

    def test_short_batch_unchanged(self):
        assert subsample_batch([1, 2, 3], 10) == [1, 2, 3]

    def test_invalid_arguments(self):
        with pytest.raises(InvalidInputError):
            subsample_batch([], 4)
        with pytest.raises(InvalidInputError):
            subsample_batch([1, 2, 3], 1)
        with pytest.raises(InvalidInputError):
            subsample_batch([1, 2, 3], 2, phase=1.0)


@pytest.mark.unit
class TestSegmentStream:

    def test_synthetic_stream(self, cues):
        s = FrameStream()
        frames = s.make("r" * 30 + "tttttt" + "r" * 30 + "tttttt" + "r" * 30)
        result = segment_stream(frames, cues)
        assert result.transition_count == 2
        assert len(result.batches) == 3
        assert result.batches[-1].final
        assert len(result.scores) == len(frames)

    def test_noiseless_world_transitions_match_traversals(self, noiseless_world):
        config, world, sequence = noiseless_world
        result = segment_stream(sequence.frames, world.feature_bank.cue_set(), config.segmenter)
        assert result.transition_count == sequence.traversals == 4
        assert len(result.batches) == 5


def _connector_runs(sequence):
    """(first, last) stream positions of each maximal run of connector frames."""
    runs, start = [], None
    for k, f in enumerate(sequence.frames):
        if f.gt_room is None and start is None:
            start = k
        elif f.gt_room is not None and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, len(sequence.frames) - 1))
    return runs


def _match_transitions(result, sequence, window):
    """(traversals detected, false positives); a detection counts within `window` frames after its connector."""
    position = {f.id: k for k, f in enumerate(sequence.frames)}
    runs = _connector_runs(sequence)
    matched, false_positives = set(), 0
    for batch in result.batches:
        if batch.final or batch.forced:
            continue
        at = position[batch.batch[-1].id]
        hit = next((r for r, (first, last) in enumerate(runs) if first <= at <= last + window), None)
        if hit is None or hit in matched:
            false_positives += 1
        else:
            matched.add(hit)
    return len(matched), false_positives


@pytest.mark.slow
class TestNoisyTransitions:
    """Feature noise of 0.3 over 50 seeded worlds."""

    def test_detection_rate_and_false_positives(self):
        detected = expected = false_positives = 0
        for seed in range(50):
            config = make_config(seed=seed)
            config.simulation.sequence.feature_noise = 0.3
            config.simulation.sequence.rng_seed = seed
            world, sequence = simulate(config)
            result = segment_stream(sequence.frames, world.feature_bank.cue_set(), config.segmenter)
            hits, fp = _match_transitions(result, sequence, config.segmenter.min_batch_size)
            detected += hits
            expected += sequence.traversals
            false_positives += fp
        assert expected == 200
        assert detected >= 0.95 * expected
        assert false_positives == 0


@pytest.mark.unit
class TestFeatureFiles:

    def test_feature_roundtrip(self, tmp_path):
        s = FrameStream()
        frames = s.make("rtrt")
        sidecar = write_features(tmp_path / "frames.bin", frames)
        assert sidecar.name == "frames.bin.json"
        back = read_features(tmp_path / "frames.bin")
        assert [f.id for f in back] == [0, 1, 2, 3]
        assert [f.timestamp for f in back] == pytest.approx([0.0, 0.1, 0.2, 0.3])
        assert np.allclose(back[1].feature, E_TRANSITION)

    def test_truncated_feature_file(self, tmp_path):
        s = FrameStream()
        write_features(tmp_path / "frames.bin", s.make("rr"))
        data = (tmp_path / "frames.bin").read_bytes()
        (tmp_path / "frames.bin").write_bytes(data[:-4])
        with pytest.raises(InvalidInputError):
            read_features(tmp_path / "frames.bin")

    def test_cue_roundtrip(self, tmp_path, cues):
        back = read_cues(write_cues(tmp_path / "cues.json", cues))
        assert back.labels == ["doorway", "office"]
        assert np.allclose(back.matrix(), cues.matrix())

    def test_malformed_cue_file(self, tmp_path):
        (tmp_path / "cues.json").write_text('{"room_cues": []}')
        with pytest.raises(InvalidInputError):
            read_cues(tmp_path / "cues.json")
