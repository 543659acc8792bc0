"""
Pytest configuration and shared fixtures for roomgraph tests.

This file is automatically loaded by pytest and provides:
- Project root on sys.path
- Seeded random generators
- Noiseless and default pipeline configurations on small simulated worlds
- An in-memory DuckDB connection
"""

import sys
from pathlib import Path
from typing import Generator

import duckdb
import numpy as np
import pytest

# Add project root to Python path for all tests
PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

# Import after path is set
from geometry.pointcloud import PointCloud
from geometry.sim3 import Sim3, random_sim3
from mapping.pipeline import PipelineConfig, oracle_input, simulate
from mapping.scene_graph import EDGE_KINDS, ObjectNode, RoomEdge, RoomNode, SceneGraph
from reconstruction.oracle import OracleNoiseModel


@pytest.fixture(scope="session")
def project_root():
    """Provide the project root directory."""
    return PROJECT_ROOT


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixed-seed generator for randomized property tests."""
    return np.random.default_rng(12345)


def make_config(noiseless: bool = True, visit_order=(0, 1, 2, 3, 4), seed: int = 0, **overrides) -> PipelineConfig:
    """Pipeline configuration on the default simulated world."""
    config = PipelineConfig(seed=seed, **overrides)
    if noiseless:
        config.oracle = OracleNoiseModel.noiseless(rng_seed=seed)
        config.simulation.sequence.feature_noise = 0.0
        config.simulation.sequence.object_feature_noise = 0.0
    config.simulation.sequence.visit_order = tuple(visit_order)
    return config


@pytest.fixture
def noiseless_config() -> PipelineConfig:
    return make_config()


@pytest.fixture(scope="session")
def noiseless_world():
    """World and five-room sequence with zero noise; shared because generation is the slow part."""
    config = make_config()
    world, sequence = simulate(config)
    return config, world, sequence


@pytest.fixture
def noiseless_input(noiseless_world):
    config, world, sequence = noiseless_world
    return oracle_input(config, world, sequence)


@pytest.fixture
def in_memory_db() -> Generator[duckdb.DuckDBPyConnection, None, None]:
    """Provide an in-memory DuckDB connection for testing."""
    conn = duckdb.connect(database=':memory:')
    try:
        yield conn
    finally:
        conn.close()


@pytest.fixture
def isolated_env(tmp_path, monkeypatch):
    """Point log/output/database locations at a temporary directory and clear ROOMGRAPH_ overrides."""
    import os
    for name in list(os.environ):
        if name.startswith("ROOMGRAPH_"):
            monkeypatch.delenv(name)
    monkeypatch.setenv("ROOMGRAPH_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("ROOMGRAPH_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("ROOMGRAPH_DB_FILE", str(tmp_path / "experiments.duckdb"))
    return tmp_path


@pytest.fixture
def config_factory():
    """Callable building pipeline configurations (see make_config)."""
    return make_config


def random_scene_graph(rng: np.random.Generator, n_rooms: int = 5, n_objects: int = 20,
                       n_edges: int = 6, feature_dim: int = 8) -> SceneGraph:
    """Seeded random scene graph: rooms with a few frames, objects, and edges of both kinds."""
    graph = SceneGraph()
    for _ in range(n_rooms):
        poses = {0: Sim3.identity()}
        for fid in range(1, 4):
            poses[fid] = random_sim3(rng, log_scale_sigma=0.0)
        feats = {fid: (v / np.linalg.norm(v)) for fid, v in
                 ((fid, rng.normal(size=feature_dim)) for fid in poses)}
        graph.add_room(RoomNode(
            reference_pose=random_sim3(rng, trans_scale=5.0),
            local_frame_poses=poses,
            point_cloud=PointCloud(rng.normal(size=(10, 3))),
            frame_features=feats,
            batch_frame_ids=list(poses),
            room_frame_ids=list(poses),
            frame_timestamps={fid: 0.1 * fid for fid in poses},
            frame_depths={fid: float(rng.uniform(1, 3)) for fid in poses},
        ))
    room_ids = sorted(graph.rooms)
    for _ in range(n_objects):
        f = rng.normal(size=feature_dim)
        graph.add_object(int(rng.choice(room_ids)), ObjectNode(
            parent_room=-1, pose=random_sim3(rng), point_cloud=PointCloud(rng.normal(size=(5, 3))),
            feature=f / np.linalg.norm(f), label="box", support_count=3))
    for k in range(n_edges):
        i = room_ids[k % len(room_ids)]
        j = room_ids[(k + 1) % len(room_ids)]
        ests = [random_sim3(rng) for _ in range(int(rng.integers(1, 4)))]
        graph.add_room_edge(RoomEdge((i, j), ests, ests[0],
                                     kind=EDGE_KINDS[k % 2]))
    return graph
