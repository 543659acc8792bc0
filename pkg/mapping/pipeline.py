# -*- coding: utf-8 -*-
"""
Room-level mapping pipeline.

Stage order per finalized room: segment -> reconstruct batch -> transition
edge to the previous room -> loop-closure query and merge. After the stream
ends, objects are lifted into their rooms and the room layer is optimised
once (or additionally after every accepted merge when configured). The full
trajectory is assembled from the optimised room poses and each room's local
frame poses.

The `sliding_window` mode is the ablation baseline: fixed windows of
`batch_size` raw frames overlapping by `segmenter.overlap_count` frames,
chained through their shared frames, without loop closure.
"""
from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from analysis.evaluation import EvaluationConfig, GroundTruth
from geometry.file_io import read_ply, read_tum, write_ply, write_tum
from geometry.pointcloud import Trajectory, transform_points
from mapping.edges import (chain_overlap_edge, estimate_transition_edges, select_boundary_pairs,
                           select_transition_pairs)
from mapping.loop_closure import LoopClosureConfig, RoomDatabase, merge_rooms, query, verify_and_apply
from mapping.objects import MaskTracklet, ObjectConfig, populate_room, read_tracklets, write_tracklets
from mapping.room_builder import RoomBuilder
from mapping.room_segmenter import (CueSet, FrameRecord, HysteresisState, RoomFinalized, SegmenterConfig,
                                    flush, read_cues, read_features, step, write_cues,
                                    write_features)
from mapping.scene_graph import RoomNode, SceneGraph, load_scene_graph, save_scene_graph
from optimization.pgo import OptReport, PGOConfig, optimize
from reconstruction.oracle import OracleNoiseModel, SyntheticOracle
from reconstruction.provider import ReconstructionProvider, RoomReconstruction
from reconstruction.replay import ReplayProvider
from simulation.sequence import Sequence as SimSequence
from simulation.sequence import SequenceSpec, generate_sequence, sequence_spec_from_dict
from simulation.world import World, WorldConfig, generate_world, world_config_from_dict
from utils.config_utils import load_typed_config
from utils.errors import (ConfigError, EdgeEstimationError, InvalidInputError, LookupFailure,
                          ReconstructionFailedError, UnconstrainedVariablesError)

logger = logging.getLogger(__name__)

MODES = ("room_based", "sliding_window")
PROVIDERS = ("oracle", "replay")

FRAMES_FILE = "frames.bin"
CUES_FILE = "cues.json"
GT_TRAJECTORY_FILE = "groundtruth.tum"
GT_CLOUD_FILE = "gt_cloud.ply"
TRACKLETS_FILE = "tracklets.json"
WORLD_FILE = "world.json"
REPLAY_DIR = "replay"

SCENE_GRAPH_FILE = "scene_graph.json"
TRAJECTORY_FILE = "trajectory.tum"
ASSIGNMENTS_FILE = "frame_assignments.parquet"
RUN_META_FILE = "run_meta.json"


@dataclass
class EdgeConfig:
    k_pairs: int = 3


@dataclass
class SimulationConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    sequence: SequenceSpec = field(default_factory=SequenceSpec)


@dataclass
class PipelineConfig:
    mode: str = "room_based"
    batch_size: int = 60
    seed: int = 0
    provider: str = "oracle"
    enable_loop_closure: bool = True
    enable_objects: bool = True
    enable_optimization: bool = True
    optimize_after_loop_closure: bool = False
    cloud_voxel: float = 0.02
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    oracle: OracleNoiseModel = field(default_factory=OracleNoiseModel)
    edges: EdgeConfig = field(default_factory=EdgeConfig)
    loop_closure: LoopClosureConfig = field(default_factory=LoopClosureConfig)
    pgo: PGOConfig = field(default_factory=PGOConfig)
    objects: ObjectConfig = field(default_factory=ObjectConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'", "mode")
        if self.provider not in PROVIDERS:
            raise ConfigError(f"provider must be one of {PROVIDERS}, got '{self.provider}'", "provider")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}", "batch_size")
        if self.cloud_voxel <= 0:
            raise ConfigError("cloud_voxel must be positive", "cloud_voxel")
        if self.edges.k_pairs < 1:
            raise ConfigError("k_pairs must be >= 1", "edges.k_pairs")
        if self.mode == "sliding_window" and self.segmenter.overlap_count >= self.batch_size:
            raise ConfigError("overlap_count must be smaller than batch_size in sliding_window mode",
                              "segmenter.overlap_count")
        try:
            self.segmenter.validate()
        except InvalidInputError as e:
            raise ConfigError(str(e), "segmenter") from None
        self.oracle.validate()
        self.loop_closure.validate()
        self.evaluation.validate()
        try:
            self.pgo.validate()
        except InvalidInputError as e:
            raise ConfigError(str(e), "pgo") from None
        self.simulation.world.validate()
        self.simulation.sequence.validate()

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def load_pipeline_config(path: Optional[Path] = None, environ: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    """Parameter file, then ROOMGRAPH_ environment overrides, then validation."""
    config = load_typed_config(PipelineConfig, path, environ)
    config.validate()
    return config


@dataclass
class PipelineInput:
    frames: List[FrameRecord]
    provider: ReconstructionProvider
    cues: Optional[CueSet] = None
    tracklets: List[MaskTracklet] = field(default_factory=list)


@dataclass
class PipelineResult:
    graph: SceneGraph
    trajectory: Trajectory
    frame_assignments: pd.DataFrame
    stage_timings: Dict[str, float]
    counts: Dict[str, int]
    invalid_rooms: List[int] = field(default_factory=list)
    loop_closures: List[Tuple[int, int, int]] = field(default_factory=list)  # (stored, new, merged)
    rejected_merges: List[Tuple[int, int]] = field(default_factory=list)
    failed_edges: List[Tuple[int, int]] = field(default_factory=list)
    opt_report: Optional[OptReport] = None
    database: Optional[RoomDatabase] = None
    reconstructions: Dict[int, RoomReconstruction] = field(default_factory=dict)
    transitions_detected: int = 0


class _StageClock:
    """Accumulates wall time per stage in first-use order."""

    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextlib.contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


class _RoomMapper:
    """Incremental room-layer construction shared by both modes."""

    def __init__(self, config: PipelineConfig, inp: PipelineInput, clock: _StageClock):
        self.config = config
        self.inp = inp
        self.clock = clock
        self.graph = SceneGraph()
        self.builder = RoomBuilder(inp.provider, config.batch_size, config.cloud_voxel)
        self.database = RoomDatabase(config.loop_closure)
        self.frames_by_id = {f.id: f for f in inp.frames}
        self.last_valid: Optional[int] = None
        self.previous: Optional[int] = None
        self.loop_closures: List[Tuple[int, int, int]] = []
        self.rejected: List[Tuple[int, int]] = []
        self.failed_edges: List[Tuple[int, int]] = []
        self.opt_reports: List[OptReport] = []

    def add_room(self, frames: Sequence[FrameRecord], room_frame_ids: Optional[Sequence[int]]) -> RoomNode:
        with self.clock.stage("reconstruction"):
            node, reconstruction = self.builder.build(frames, room_frame_ids)
        self.graph.add_room(node)
        self.builder.register(node, reconstruction)
        if not node.valid:
            logger.warning(f"Room {node.id} has no valid reconstruction")
        return node

    def link(self, node: RoomNode, chain: bool = False) -> None:
        """Edge from the most recent valid room to `node`; places `node` from it."""
        consecutive = self.previous == self.last_valid
        self.previous = node.id
        if not node.valid:
            return
        if self.last_valid is None:
            self.last_valid = node.id
            return
        prev = self.graph.rooms[self.last_valid]
        with self.clock.stage("edges"):
            try:
                if chain:
                    edge = chain_overlap_edge(prev, node)
                else:
                    k = self.config.edges.k_pairs
                    pairs = (select_transition_pairs(prev, node, k) if consecutive
                             else select_boundary_pairs(prev, node, k))
                    edge = estimate_transition_edges(prev, node, pairs, self.inp.provider)
            except (EdgeEstimationError, InvalidInputError, LookupFailure) as e:
                logger.warning(f"No edge between rooms {prev.id} and {node.id}: {e}")
                self.failed_edges.append((prev.id, node.id))
                node.reference_pose = prev.reference_pose
                self.last_valid = node.id
                return
        self.graph.add_room_edge(edge)
        node.reference_pose = prev.reference_pose.compose(edge.consensus)
        self.last_valid = node.id

    def close_loop(self, node: RoomNode) -> None:
        """Query the database with a new valid room; merge on a verified match, else store it."""
        with self.clock.stage("loop_closure"):
            match = query(self.database, node)
            merged_id = None
            if match is not None:
                try:
                    candidate = merge_rooms(self.graph, match, node.id, self.inp.provider, self.frames_by_id,
                                            self.config.batch_size, self.config.edges.k_pairs,
                                            self.config.cloud_voxel)
                except (ReconstructionFailedError, LookupFailure) as e:
                    logger.warning(f"Merge of rooms ({match}, {node.id}) aborted: {e}")
                    candidate = None
                if candidate is not None and verify_and_apply(self.graph, self.database, candidate):
                    merged_id = candidate.merged_node.id
                    self.builder.forget(match)
                    self.builder.forget(node.id)
                    self.builder.register(candidate.merged_node, candidate.reconstruction)
                    self.loop_closures.append((match, node.id, merged_id))
                else:
                    self.rejected.append((match, node.id))
            if merged_id is None:
                self.database.add(node)
                return
        self.previous = self.last_valid = merged_id
        if self.config.optimize_after_loop_closure and self.config.enable_optimization:
            with self.clock.stage("optimization"):
                self._optimize()

    def _optimize(self) -> Optional[OptReport]:
        try:
            report = optimize(self.graph, self.config.pgo)
        except UnconstrainedVariablesError as e:
            logger.info(f"Optimisation skipped: {e}")
            return None
        self.opt_reports.append(report)
        return report


def _room_stream(mapper: _RoomMapper, inp: PipelineInput, config: PipelineConfig, clock: _StageClock) -> int:
    if inp.cues is None:
        raise InvalidInputError("room_based mode needs a cue set")
    state = HysteresisState(config=config.segmenter)
    transitions = 0

    def handle(event: RoomFinalized) -> None:
        node = mapper.add_room(event.batch, event.room_frame_ids())
        mapper.link(node)
        if node.valid and config.enable_loop_closure:
            mapper.close_loop(node)

    for frame in inp.frames:
        with clock.stage("segmentation"):
            event = step(state, frame, inp.cues)
        if event is not None:
            transitions += 0 if event.forced else 1
            handle(event)
    with clock.stage("segmentation"):
        tail = flush(state)
    if tail is not None:
        handle(tail)
    return transitions


def sliding_windows(frames: Sequence[FrameRecord], window: int, overlap: int) -> List[List[FrameRecord]]:
    """Consecutive windows of `window` frames, each sharing `overlap` frames with the next."""
    if not 0 <= overlap < window:
        raise InvalidInputError(f"overlap {overlap} must lie in [0, {window})")
    frames = list(frames)
    if len(frames) <= window:
        return [frames] if frames else []
    stride = window - overlap
    out = []
    for start in range(0, len(frames) - overlap, stride):
        chunk = frames[start:start + window]
        if len(chunk) >= 2:
            out.append(chunk)
        if start + window >= len(frames):
            break
    return out


def _window_stream(mapper: _RoomMapper, inp: PipelineInput, config: PipelineConfig) -> None:
    for chunk in sliding_windows(inp.frames, config.batch_size, config.segmenter.overlap_count):
        node = mapper.add_room(chunk, None)
        mapper.link(node, chain=True)


def assign_tracklets(graph: SceneGraph, tracklets: Sequence[MaskTracklet]) -> Dict[int, List[MaskTracklet]]:
    """Room id -> tracklets whose frames mostly carry that room's label (ties: lower room id)."""
    owner: Dict[int, int] = {}
    for rid in sorted(graph.rooms, reverse=True):
        room = graph.rooms[rid]
        for f in (room.room_frame_ids or room.batch_frame_ids):
            owner[f] = rid
    out: Dict[int, List[MaskTracklet]] = {}
    for t in tracklets:
        votes = Counter(owner[f] for f in t.frame_ids() if f in owner)
        if not votes:
            logger.debug(f"Tracklet {t.id} lies outside every room")
            continue
        best = max(votes.values())
        rid = min(r for r, c in votes.items() if c == best)
        out.setdefault(rid, []).append(t)
    return out


def assemble_trajectory(graph: SceneGraph) -> Trajectory:
    """World pose of every reconstructed frame, T_ri o T_ri_f; the lowest room id wins for shared frames."""
    seen = {}
    for rid in sorted(graph.rooms):
        room = graph.rooms[rid]
        if not room.valid:
            continue
        for f in room.frame_ids():
            if f in seen:
                continue
            ts = room.frame_timestamps.get(f, float(f))
            seen[f] = (ts, room.reference_pose.compose(room.local_frame_poses[f]))
    return Trajectory.from_pairs(seen.values())


def frame_assignments(graph: SceneGraph, frames: Sequence[FrameRecord]) -> pd.DataFrame:
    """frame_id, timestamp, room_id (-1 when no room claims the frame)."""
    owner: Dict[int, int] = {}
    for rid in sorted(graph.rooms, reverse=True):
        for f in graph.rooms[rid].batch_frame_ids:
            owner[f] = rid
    for rid in sorted(graph.rooms, reverse=True):
        for f in graph.rooms[rid].room_frame_ids:
            owner[f] = rid
    return pd.DataFrame({
        "frame_id": pd.Series([f.id for f in frames], dtype="int64"),
        "timestamp": pd.Series([f.timestamp for f in frames], dtype="float64"),
        "room_id": pd.Series([owner.get(f.id, -1) for f in frames], dtype="int64"),
    })


def run_pipeline(config: PipelineConfig, inp: PipelineInput) -> PipelineResult:
    """Run every enabled stage over the input stream and return the optimised graph and trajectory."""
    config.validate()
    if not inp.frames:
        raise InvalidInputError("input stream has no frames")
    clock = _StageClock()
    start = time.perf_counter()
    mapper = _RoomMapper(config, inp, clock)
    logger.info(f"Pipeline start: {len(inp.frames)} frames, mode {config.mode}, batch size {config.batch_size}")

    transitions = 0
    if config.mode == "room_based":
        transitions = _room_stream(mapper, inp, config, clock)
    else:
        _window_stream(mapper, inp, config)
    graph = mapper.graph

    n_objects = 0
    if config.enable_objects and inp.tracklets:
        with clock.stage("objects"):
            for rid, tracklets in sorted(assign_tracklets(graph, inp.tracklets).items()):
                reconstruction = mapper.builder.reconstructions.get(rid)
                if reconstruction is None:
                    continue
                n_objects += len(populate_room(graph, rid, tracklets, reconstruction, config.objects))

    opt_report = None
    if config.enable_optimization:
        with clock.stage("optimization"):
            opt_report = mapper._optimize()

    with clock.stage("trajectory"):
        trajectory = assemble_trajectory(graph)
        assignments = frame_assignments(graph, inp.frames)
    clock.timings["total"] = time.perf_counter() - start

    invalid = sorted(rid for rid, room in graph.rooms.items() if not room.valid)
    summary = graph.summary()
    counts = {
        "rooms": summary["rooms"],
        "objects": summary["objects"],
        "edges": summary["room_edges"],
        "loop_closures": len(mapper.loop_closures),
        "invalid_rooms": len(invalid),
        "frames": len(inp.frames),
        "trajectory_frames": len(trajectory),
    }
    logger.info(f"Pipeline finished in {clock.timings['total']:.2f}s: {counts}")
    return PipelineResult(
        graph=graph,
        trajectory=trajectory,
        frame_assignments=assignments,
        stage_timings=clock.timings,
        counts=counts,
        invalid_rooms=invalid,
        loop_closures=mapper.loop_closures,
        rejected_merges=mapper.rejected,
        failed_edges=mapper.failed_edges,
        opt_report=opt_report,
        database=mapper.database,
        reconstructions=dict(mapper.builder.reconstructions),
        transitions_detected=transitions,
    )


# --- simulated inputs ---

def simulate(config: PipelineConfig) -> Tuple[World, SimSequence]:
    world = generate_world(config.simulation.world, seed=config.seed)
    sequence = generate_sequence(world, config.simulation.sequence)
    return world, sequence


def oracle_input(config: PipelineConfig, world: World, sequence: SimSequence) -> PipelineInput:
    return PipelineInput(
        frames=list(sequence.frames),
        provider=SyntheticOracle(world, sequence, config.oracle),
        cues=world.feature_bank.cue_set(),
        tracklets=list(sequence.tracklets),
    )


def ground_truth_of(world: World, sequence: SimSequence) -> GroundTruth:
    return GroundTruth(trajectory=sequence.ground_truth, cloud=world.labelled_cloud(), n_objects=len(world.objects))


def write_simulation(world: World, sequence: SimSequence, out_dir: Path) -> Path:
    """Frames, cues, ground truth, tracklets and the world description needed to regenerate the oracle."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_features(out_dir / FRAMES_FILE, sequence.frames)
    write_cues(out_dir / CUES_FILE, world.feature_bank.cue_set())
    write_tum(out_dir / GT_TRAJECTORY_FILE, sequence.ground_truth, header="ground truth camera poses")
    write_ply(out_dir / GT_CLOUD_FILE, world.labelled_cloud())
    spec = sequence.spec
    write_tracklets(out_dir / TRACKLETS_FILE, sequence.tracklets, spec.image_width, spec.image_height)
    doc = world.to_dict()
    doc["sequence"] = json.loads(json.dumps(dataclasses.asdict(spec)))
    (out_dir / WORLD_FILE).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    logger.info(f"Wrote simulation with {len(sequence.frames)} frames and {len(world.rooms)} rooms to {out_dir}")
    return out_dir


def regenerate(input_dir: Path) -> Tuple[World, SimSequence]:
    """Rebuild the world and sequence described by a simulation directory's world.json."""
    path = Path(input_dir) / WORLD_FILE
    if not path.is_file():
        raise LookupFailure(f"{path} not found")
    doc = json.loads(path.read_text(encoding="utf-8"))
    world = generate_world(world_config_from_dict(doc["config"]), seed=int(doc["seed"]))
    sequence = generate_sequence(world, sequence_spec_from_dict(doc.get("sequence", {})))
    return world, sequence


def load_input(input_dir: Path, config: PipelineConfig) -> Tuple[PipelineInput, GroundTruth]:
    """
    Read a simulation directory as a pipeline input plus whatever ground truth it holds.

    Raises:
        LookupFailure: The directory or its frame file is missing.
    """
    input_dir = Path(input_dir)
    if not (input_dir / FRAMES_FILE).is_file():
        raise LookupFailure(f"no {FRAMES_FILE} in {input_dir}")
    frames = read_features(input_dir / FRAMES_FILE)
    cues = read_cues(input_dir / CUES_FILE) if (input_dir / CUES_FILE).is_file() else None
    tracklets: List[MaskTracklet] = []
    if (input_dir / TRACKLETS_FILE).is_file():
        tracklets, _, _ = read_tracklets(input_dir / TRACKLETS_FILE)

    if config.provider == "replay":
        provider: ReconstructionProvider = ReplayProvider(input_dir / REPLAY_DIR)
    else:
        world, sequence = regenerate(input_dir)
        if [f.id for f in sequence.frames] != [f.id for f in frames]:
            raise InvalidInputError(f"{input_dir}: frames do not match the regenerated sequence")
        provider = SyntheticOracle(world, sequence, config.oracle)

    inp = PipelineInput(frames=frames, provider=provider, cues=cues, tracklets=tracklets)
    return inp, load_ground_truth(input_dir)


def load_ground_truth(gt_dir: Path) -> GroundTruth:
    """Whatever reference data a simulation directory holds; missing files leave fields unset."""
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise LookupFailure(f"ground-truth directory {gt_dir} not found")
    gt = GroundTruth()
    if (gt_dir / GT_TRAJECTORY_FILE).is_file():
        gt.trajectory = read_tum(gt_dir / GT_TRAJECTORY_FILE)
    if (gt_dir / GT_CLOUD_FILE).is_file():
        gt.cloud = read_ply(gt_dir / GT_CLOUD_FILE)
    if (gt_dir / WORLD_FILE).is_file():
        gt.n_objects = len(json.loads((gt_dir / WORLD_FILE).read_text(encoding="utf-8")).get("objects", []))
    return gt


# --- run outputs ---

@dataclass
class StoredRun:
    """A run read back from disk; enough for evaluation and export."""
    graph: SceneGraph
    trajectory: Trajectory
    stage_timings: Dict[str, float]
    counts: Dict[str, int]
    meta: dict


def write_run(result: PipelineResult, out_dir: Path, config: Optional[PipelineConfig] = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_scene_graph(result.graph, out_dir)
    write_tum(out_dir / TRAJECTORY_FILE, result.trajectory, header="estimated camera poses")
    for rid, room in sorted(result.graph.rooms.items()):
        if room.valid and not room.point_cloud.is_empty():
            world = transform_points(room.reference_pose, room.point_cloud)
            write_ply(out_dir / "rooms" / f"room_{rid}.ply", world.with_labels(rid))
    result.frame_assignments.to_parquet(out_dir / ASSIGNMENTS_FILE, engine="pyarrow", index=False)
    meta = {
        "stage_timings": result.stage_timings,
        "counts": result.counts,
        "invalid_rooms": result.invalid_rooms,
        "loop_closures": [list(lc) for lc in result.loop_closures],
        "rejected_merges": [list(r) for r in result.rejected_merges],
        "failed_edges": [list(e) for e in result.failed_edges],
        "transitions_detected": result.transitions_detected,
    }
    if result.opt_report is not None:
        r = result.opt_report
        meta["optimization"] = {"iterations": r.iterations, "initial_cost": r.initial_cost,
                                "final_cost": r.final_cost, "converged": r.converged,
                                "elapsed": r.elapsed, "solver": r.solver}
    if config is not None:
        meta["config"] = config.to_dict()
    (out_dir / RUN_META_FILE).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    logger.info(f"Wrote run outputs to {out_dir}")
    return out_dir


def load_run(run_dir: Path) -> StoredRun:
    run_dir = Path(run_dir)
    if not (run_dir / SCENE_GRAPH_FILE).is_file():
        raise LookupFailure(f"no {SCENE_GRAPH_FILE} in {run_dir}")
    graph = load_scene_graph(run_dir / SCENE_GRAPH_FILE)
    trajectory = read_tum(run_dir / TRAJECTORY_FILE) if (run_dir / TRAJECTORY_FILE).is_file() \
        else Trajectory((), ())
    meta = {}
    if (run_dir / RUN_META_FILE).is_file():
        meta = json.loads((run_dir / RUN_META_FILE).read_text(encoding="utf-8"))
    return StoredRun(graph, trajectory, dict(meta.get("stage_timings", {})), dict(meta.get("counts", {})), meta)
