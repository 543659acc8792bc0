# -*- coding: utf-8 -*-
"""
Room segmentation of a frame stream.

Each frame is scored against transition cues (doorway, corridor) and room
cues; a hysteresis accumulator turns the per-frame margins into room
transitions. Finalized batches carry their last `overlap_count` frames into
the next batch so consecutive rooms share frames for edge estimation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from geometry.sim3 import Sim3
from utils.errors import InvalidInputError, StreamOrderError

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FrameRecord:
    id: int
    timestamp: float
    feature: np.ndarray
    gt_pose: Optional[Sim3] = None
    gt_room: Optional[int] = None

    def __post_init__(self):
        f = np.array(self.feature, dtype=float).reshape(-1)
        n = np.linalg.norm(f)
        if f.size == 0 or abs(n - 1.0) > UNIT_TOL:
            raise InvalidInputError(f"frame {self.id}: feature must be unit norm (got {n:.6g})")
        f.setflags(write=False)
        object.__setattr__(self, "feature", f)


@dataclass(frozen=True)
class CueSet:
    """Labelled unit embeddings. Transition cues come first in tie-breaking order."""
    transition_cues: Tuple[Tuple[str, np.ndarray], ...]
    room_cues: Tuple[Tuple[str, np.ndarray], ...]

    def __post_init__(self):
        for group in ("transition_cues", "room_cues"):
            cues = tuple((str(lbl), np.asarray(emb, dtype=float).reshape(-1)) for lbl, emb in getattr(self, group))
            for lbl, emb in cues:
                if abs(np.linalg.norm(emb) - 1.0) > UNIT_TOL:
                    raise InvalidInputError(f"cue '{lbl}' is not unit norm")
            object.__setattr__(self, group, cues)

    @property
    def labels(self) -> List[str]:
        return [lbl for lbl, _ in self.transition_cues] + [lbl for lbl, _ in self.room_cues]

    def matrix(self) -> np.ndarray:
        return np.stack([emb for _, emb in self.transition_cues] + [emb for _, emb in self.room_cues])

    def is_transition(self, label: str) -> bool:
        return label in {lbl for lbl, _ in self.transition_cues}


@dataclass(frozen=True)
class FrameScore:
    frame_id: int
    label: str
    margin: float


@dataclass
class SegmenterConfig:
    increment: float = 1.0
    decay: float = 0.5
    trigger_threshold: float = 4.0
    c_max: float = 8.0
    overlap_count: int = 5
    min_batch_size: int = 20
    max_batch_size: int = 240
    release_count: int = 0

    def validate(self) -> None:
        if self.increment <= 0 or self.decay < 0:
            raise InvalidInputError("segmenter increment must be > 0 and decay >= 0")
        if not 0 < self.trigger_threshold <= self.c_max:
            raise InvalidInputError("segmenter trigger_threshold must lie in (0, c_max]")
        if self.overlap_count < 0 or self.release_count < 0:
            raise InvalidInputError("segmenter overlap_count and release_count must be >= 0")
        if not 2 <= self.min_batch_size <= self.max_batch_size:
            raise InvalidInputError("segmenter requires 2 <= min_batch_size <= max_batch_size")
        if self.overlap_count >= self.min_batch_size:
            raise InvalidInputError("segmenter overlap_count must be smaller than min_batch_size")


@dataclass(frozen=True)
class RoomFinalized:
    batch: Tuple[FrameRecord, ...]
    overlap_frames: Tuple[FrameRecord, ...]
    margins: Tuple[float, ...]
    forced: bool = False
    final: bool = False
    carried: int = 0  # leading frames carried over from the previous batch

    def frame_ids(self) -> List[int]:
        return [f.id for f in self.batch]

    def room_frame_ids(self) -> List[int]:
        """
        Frames labelled as this room's interior (non-positive margin).

        Carried-over frames belong to the previous room and are excluded. A
        batch with no interior-labelled frame falls back to its own frames.
        """
        own = list(zip(self.batch, self.margins))[self.carried:]
        interior = [f.id for f, m in own if m <= 0.0]
        if interior:
            return interior
        return [f.id for f, _ in own] or self.frame_ids()


@dataclass
class HysteresisState:
    config: SegmenterConfig = field(default_factory=SegmenterConfig)
    confidence: float = 0.0
    current_batch: List[FrameRecord] = field(default_factory=list)
    current_margins: List[float] = field(default_factory=list)
    last_frame_id: Optional[int] = None
    armed: bool = True
    release_run: int = 0
    fresh_frames: int = 0
    carried: int = 0

    def __post_init__(self):
        self.config.validate()


def score_frame(frame: Union[FrameRecord, np.ndarray], cues: CueSet) -> FrameScore:
    """
    Label a frame by its most similar cue.

    margin = best transition-cue similarity - best room-cue similarity.
    """
    if not cues.transition_cues or not cues.room_cues:
        raise InvalidInputError("cue set needs at least one transition cue and one room cue")
    feature = frame.feature if isinstance(frame, FrameRecord) else np.asarray(frame, dtype=float).reshape(-1)
    norm = np.linalg.norm(feature)
    if norm == 0.0 or not np.isfinite(norm):
        raise InvalidInputError("cannot score a zero feature vector")
    sims = cues.matrix() @ (feature / norm)
    n_trans = len(cues.transition_cues)
    best = int(np.argmax(sims))
    margin = float(np.max(sims[:n_trans]) - np.max(sims[n_trans:]))
    frame_id = frame.id if isinstance(frame, FrameRecord) else -1
    return FrameScore(frame_id=frame_id, label=cues.labels[best], margin=margin)


def _emit(state: HysteresisState, forced: bool, final: bool = False) -> RoomFinalized:
    cfg = state.config
    overlap_n = 0 if final else min(cfg.overlap_count, len(state.current_batch))
    overlap = tuple(state.current_batch[len(state.current_batch) - overlap_n:])
    event = RoomFinalized(
        batch=tuple(state.current_batch),
        overlap_frames=overlap,
        margins=tuple(state.current_margins),
        forced=forced,
        final=final,
        carried=state.carried,
    )
    state.carried = overlap_n
    state.current_batch = list(overlap)
    state.current_margins = state.current_margins[len(state.current_margins) - overlap_n:] if overlap_n else []
    state.confidence = 0.0
    state.fresh_frames = 0
    return event


def step(state: HysteresisState, frame: FrameRecord, cues: CueSet,
         score: Optional[FrameScore] = None) -> Optional[RoomFinalized]:
    """Advance the hysteresis by one frame; returns a RoomFinalized event or None."""
    if state.last_frame_id is not None and frame.id <= state.last_frame_id:
        raise StreamOrderError(f"frame id {frame.id} after {state.last_frame_id}")
    state.last_frame_id = frame.id
    cfg = state.config
    if score is None:
        score = score_frame(frame, cues)

    if score.margin > 0.0:
        # with release_count > 0, no evidence accumulates until the release run re-arms the detector
        if state.armed:
            state.confidence = min(cfg.c_max, state.confidence + cfg.increment)
        state.release_run = 0
    else:
        state.confidence = max(0.0, state.confidence - cfg.decay)
        state.release_run = state.release_run + 1 if score.margin < 0.0 else 0
        if not state.armed and state.release_run >= cfg.release_count:
            state.armed = True

    state.current_batch.append(frame)
    state.current_margins.append(score.margin)
    state.fresh_frames += 1
    size = len(state.current_batch)

    # carried overlap frames do not count towards min_batch_size
    if state.armed and state.confidence >= cfg.trigger_threshold and state.fresh_frames >= cfg.min_batch_size:
        state.armed = cfg.release_count == 0
        state.release_run = 0
        logger.debug(f"Room transition detected at frame {frame.id} (batch of {size})")
        return _emit(state, forced=False)
    if size >= cfg.max_batch_size:
        logger.info(f"Forced room finalization at frame {frame.id}: batch reached {size} frames")
        return _emit(state, forced=True)
    return None


def flush(state: HysteresisState) -> Optional[RoomFinalized]:
    """Emit the frames accumulated since the last finalization at stream end."""
    if state.fresh_frames == 0 or not state.current_batch:
        return None
    return _emit(state, forced=False, final=True)


def subsample_batch(batch: Sequence, target_count: int, phase: float = 0.0) -> list:
    """
    Uniform-stride subsample keeping the first and last elements.

    `phase` in [0, 1) shifts the interior samples by that fraction of the stride,
    giving a disjoint-as-possible alternative selection for retries.
    """
    n = len(batch)
    if n == 0:
        raise InvalidInputError("cannot subsample an empty batch")
    if target_count < 2:
        raise InvalidInputError(f"target_count must be >= 2, got {target_count}")
    if not 0.0 <= phase < 1.0:
        raise InvalidInputError(f"phase must lie in [0, 1), got {phase}")
    if n <= target_count:
        return list(batch)
    stride = (n - 1) / (target_count - 1)
    interior = np.linspace(0.0, n - 1.0, target_count)[1:-1] + phase * stride
    idx = np.unique(np.concatenate([[0], np.rint(interior).astype(int), [n - 1]]))
    return [batch[i] for i in idx]


@dataclass
class SegmentationResult:
    batches: List[RoomFinalized]
    scores: List[FrameScore]

    @property
    def transition_count(self) -> int:
        return sum(1 for b in self.batches if not b.final and not b.forced)


def segment_stream(frames: Sequence[FrameRecord], cues: CueSet,
                   config: Optional[SegmenterConfig] = None) -> SegmentationResult:
    state = HysteresisState(config=config or SegmenterConfig())
    batches: List[RoomFinalized] = []
    scores: List[FrameScore] = []
    for frame in frames:
        score = score_frame(frame, cues)
        scores.append(score)
        event = step(state, frame, cues, score=score)
        if event is not None:
            batches.append(event)
    tail = flush(state)
    if tail is not None:
        batches.append(tail)
    return SegmentationResult(batches=batches, scores=scores)


# --- feature matrix files ---

def write_features(path: Path, frames: Sequence[FrameRecord]) -> Path:
    """
    Write frame features as a row-major float32 matrix with a JSON sidecar.

    The sidecar (`<path>.json`) lists frame ids, timestamps, dimension and,
    when present, ground-truth room labels.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not frames:
        raise InvalidInputError("no frames to write")
    matrix = np.stack([f.feature for f in frames]).astype("<f4")
    path.write_bytes(np.ascontiguousarray(matrix).tobytes(order="C"))
    sidecar = {
        "dimension": int(matrix.shape[1]),
        "count": int(matrix.shape[0]),
        "dtype": "float32",
        "frame_ids": [int(f.id) for f in frames],
        "timestamps": [float(f.timestamp) for f in frames],
    }
    if any(f.gt_room is not None for f in frames):
        sidecar["gt_rooms"] = [None if f.gt_room is None else int(f.gt_room) for f in frames]
    sidecar_path = path.with_name(path.name + ".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=1), encoding="utf-8")
    return sidecar_path


def read_features(path: Path, gt_poses: Optional[Dict[int, Sim3]] = None) -> List[FrameRecord]:
    path = Path(path)
    sidecar_path = path.with_name(path.name + ".json")
    if not path.is_file() or not sidecar_path.is_file():
        raise InvalidInputError(f"feature file or sidecar missing: {path}")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    dim = int(meta["dimension"])
    ids = [int(i) for i in meta["frame_ids"]]
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != dim * len(ids):
        raise InvalidInputError(f"{path}: expected {len(ids)}x{dim} floats, found {raw.size}")
    matrix = raw.reshape(len(ids), dim).astype(float)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidInputError(f"{path}: zero feature vector")
    matrix = matrix / norms
    times = meta.get("timestamps") or [float(i) for i in ids]
    rooms = meta.get("gt_rooms") or [None] * len(ids)
    gt_poses = gt_poses or {}
    return [FrameRecord(id=fid, timestamp=float(ts), feature=matrix[k], gt_pose=gt_poses.get(fid), gt_room=room)
            for k, (fid, ts, room) in enumerate(zip(ids, times, rooms))]


def write_cues(path: Path, cues: CueSet) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "transition_cues": [{"label": lbl, "embedding": [float(v) for v in emb]} for lbl, emb in cues.transition_cues],
        "room_cues": [{"label": lbl, "embedding": [float(v) for v in emb]} for lbl, emb in cues.room_cues],
    }
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return path


def read_cues(path: Path) -> CueSet:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"cue file missing: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return CueSet(
            transition_cues=tuple((c["label"], c["embedding"]) for c in doc["transition_cues"]),
            room_cues=tuple((c["label"], c["embedding"]) for c in doc["room_cues"]),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"{path}: malformed cue file ({e})") from None
