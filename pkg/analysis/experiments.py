# -*- coding: utf-8 -*-
"""
Ablation Experiments

Runs the batching-strategy and loop-closure ablations over seeded simulated
worlds and stores one row per run in DuckDB:

- `sliding_window`: fixed raw-frame windows chained by overlap frames.
- `room_based`: hysteresis-segmented room batches.
- `revisit_no_loop_closure` / `revisit_loop_closure`: the same room-based
  pipeline on a sequence that returns to an earlier room, without and with
  revisit merging.
- `batch_<n>`: room-based runs sweeping the subsampled batch size.

Summaries are computed in SQL over the `ablation_runs` table.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import duckdb
import pandas as pd
from tqdm import tqdm

from geometry.metrics import ate_rmse
from mapping.pipeline import PipelineConfig, oracle_input, run_pipeline, simulate
from utils.errors import InsufficientOverlapError, RoomGraphError

logger = logging.getLogger(__name__)

SCHEMA = {
    "ablation_runs": """
        CREATE TABLE IF NOT EXISTS ablation_runs (
            experiment VARCHAR,
            variant VARCHAR,
            seed INTEGER,
            batch_size INTEGER,
            ate_sim3 DOUBLE,
            ate_se3 DOUBLE,
            rooms INTEGER,
            edges INTEGER,
            loop_closures INTEGER,
            invalid_rooms INTEGER,
            elapsed_s DOUBLE,
            optimization_s DOUBLE,
            error VARCHAR
        );
    """,
}
COLUMNS = ["experiment", "variant", "seed", "batch_size", "ate_sim3", "ate_se3", "rooms", "edges",
           "loop_closures", "invalid_rooms", "elapsed_s", "optimization_s", "error"]

BASE_VISIT_ORDER = (0, 1, 2, 3, 4)
REVISIT_ORDER = (0, 1, 2, 0)


@dataclass(frozen=True)
class Variant:
    name: str
    mode: str = "room_based"
    visit_order: Tuple[int, ...] = BASE_VISIT_ORDER
    loop_closure: bool = False
    batch_size: Optional[int] = None


ABLATION_VARIANTS = (
    Variant("sliding_window", mode="sliding_window"),
    Variant("room_based"),
    Variant("revisit_no_loop_closure", visit_order=REVISIT_ORDER),
    Variant("revisit_loop_closure", visit_order=REVISIT_ORDER, loop_closure=True),
)


def batch_size_variants(sizes: Sequence[int]) -> Tuple[Variant, ...]:
    return tuple(Variant(f"batch_{n}", batch_size=n) for n in sizes)


def variant_config(base: PipelineConfig, variant: Variant, seed: int) -> PipelineConfig:
    """Copy of `base` for one (variant, seed); the oracle noise seed follows the world seed."""
    config = copy.deepcopy(base)
    config.seed = seed
    config.oracle.rng_seed = seed
    config.mode = variant.mode
    config.enable_loop_closure = variant.loop_closure
    config.enable_objects = False
    config.simulation.sequence.visit_order = tuple(variant.visit_order)
    if variant.batch_size is not None:
        config.batch_size = variant.batch_size
    return config


def run_variant(base: PipelineConfig, variant: Variant, seed: int, experiment: str = "ablation") -> Dict:
    """One pipeline run; failures become a row with the error text."""
    config = variant_config(base, variant, seed)
    row = {"experiment": experiment, "variant": variant.name, "seed": seed, "batch_size": config.batch_size,
           "ate_sim3": None, "ate_se3": None, "rooms": None, "edges": None, "loop_closures": None,
           "invalid_rooms": None, "elapsed_s": None, "optimization_s": None, "error": None}
    start = time.perf_counter()
    try:
        world, sequence = simulate(config)
        result = run_pipeline(config, oracle_input(config, world, sequence))
        row["ate_sim3"] = ate_rmse(result.trajectory, sequence.ground_truth, "sim3")
        row["ate_se3"] = ate_rmse(result.trajectory, sequence.ground_truth, "se3")
        row.update(rooms=result.counts["rooms"], edges=result.counts["edges"],
                   loop_closures=result.counts["loop_closures"], invalid_rooms=result.counts["invalid_rooms"],
                   optimization_s=result.stage_timings.get("optimization", 0.0))
    except (RoomGraphError, InsufficientOverlapError) as e:
        logger.warning(f"{variant.name} seed {seed} failed: {e}")
        row["error"] = str(e)
    row["elapsed_s"] = time.perf_counter() - start
    return row


def run_ablation(seeds: Sequence[int], base: Optional[PipelineConfig] = None,
                 variants: Sequence[Variant] = ABLATION_VARIANTS, experiment: str = "ablation",
                 progress: bool = True) -> pd.DataFrame:
    """Every variant on every seed; returns one row per run."""
    base = base or PipelineConfig()
    rows: List[Dict] = []
    jobs = [(seed, v) for seed in seeds for v in variants]
    for seed, variant in tqdm(jobs, desc=f"Running {experiment}", disable=not progress):
        rows.append(run_variant(base, variant, seed, experiment))
    frame = pd.DataFrame(rows, columns=COLUMNS)
    logger.info(f"{experiment}: {len(frame)} runs, {int(frame['error'].notna().sum())} failed")
    return frame


def store_runs(conn: duckdb.DuckDBPyConnection, runs: pd.DataFrame) -> int:
    conn.execute(SCHEMA["ablation_runs"])
    conn.register("new_runs", runs[COLUMNS])
    try:
        conn.execute(f"INSERT INTO ablation_runs SELECT {', '.join(COLUMNS)} FROM new_runs")
    finally:
        conn.unregister("new_runs")
    return len(runs)


def summarize(conn: duckdb.DuckDBPyConnection, experiment: str = "ablation") -> pd.DataFrame:
    """Mean/median ATE and run counts per variant."""
    return conn.execute("""
        SELECT variant,
               COUNT(*) AS runs,
               COUNT(error) AS failed,
               AVG(ate_sim3) AS mean_ate_sim3,
               MEDIAN(ate_sim3) AS median_ate_sim3,
               AVG(ate_se3) AS mean_ate_se3,
               AVG(rooms) AS mean_rooms,
               SUM(loop_closures) AS loop_closures,
               AVG(elapsed_s) AS mean_elapsed_s
        FROM ablation_runs
        WHERE experiment = ?
        GROUP BY variant
        ORDER BY variant
    """, [experiment]).df()


def head_to_head(conn: duckdb.DuckDBPyConnection, better: str, worse: str,
                 experiment: str = "ablation") -> Tuple[int, int]:
    """(seeds where `better` has strictly lower Sim(3) ATE than `worse`, seeds compared)."""
    wins, total = conn.execute("""
        SELECT COALESCE(SUM(CASE WHEN a.ate_sim3 < b.ate_sim3 THEN 1 ELSE 0 END), 0), COUNT(*)
        FROM ablation_runs a
        JOIN ablation_runs b ON a.seed = b.seed AND a.experiment = b.experiment
        WHERE a.experiment = ? AND a.variant = ? AND b.variant = ?
          AND a.ate_sim3 IS NOT NULL AND b.ate_sim3 IS NOT NULL
    """, [experiment, better, worse]).fetchone()
    return int(wins), int(total)
