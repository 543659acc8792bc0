# -*- coding: utf-8 -*-
"""
Batching and Loop-Closure Ablation Runner

Runs the sliding-window, room-based and revisit (with / without loop
closure) variants over a range of world seeds, optionally followed by the
batch-size sweep, appends one row per run to the `ablation_runs` table of
the experiment database and prints the SQL summaries.

Usage:
    python scripts/run_ablation.py --seeds 10
    python scripts/run_ablation.py --seeds 5 --batch-sizes 20 40 60 --config params.toml
"""
import argparse
import logging
import sys
from pathlib import Path

from tabulate import tabulate

# --- BEGIN: Add project root to sys.path ---
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.append(str(PROJECT_ROOT))
# --- END: Add project root to sys.path ---

from analysis.experiments import (ABLATION_VARIANTS, batch_size_variants, head_to_head, run_ablation,
                                  store_runs, summarize)
from mapping.pipeline import load_pipeline_config
from utils.config_utils import AppConfig
from utils.database_conn import ManagedDatabaseConnection
from utils.errors import ConfigError
from utils.logging_utils import setup_logging

COMPARISONS = (
    ("room_based", "sliding_window"),
    ("revisit_loop_closure", "revisit_no_loop_closure"),
)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the batching and loop-closure ablations into DuckDB.")
    parser.add_argument("--seeds", type=int, default=10, help="Number of world seeds (0..N-1).")
    parser.add_argument("--first-seed", type=int, default=0, help="First world seed.")
    parser.add_argument("--batch-sizes", type=int, nargs="*", default=[],
                        help="Also sweep these batch sizes on the room-based variant.")
    parser.add_argument("--config", type=Path, default=None, help="Pipeline parameter file (TOML or JSON).")
    parser.add_argument("--db", type=str, default=None, help="DuckDB file (default: ROOMGRAPH_DB_FILE).")
    parser.add_argument("--experiment", type=str, default="ablation", help="Experiment name stored with each row.")
    args = parser.parse_args()

    config = AppConfig(calling_script_path=Path(__file__))

    SCRIPT_NAME = Path(__file__).stem
    LOG_DIRECTORY = config.LOG_DIR
    logger = setup_logging(SCRIPT_NAME, LOG_DIRECTORY, level=logging.INFO)

    try:
        base = load_pipeline_config(args.config)
    except ConfigError as e:
        logger.critical(f"Configuration failed: {e}")
        sys.exit(1)

    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    db_path = args.db or config.DB_FILE_STR

    try:
        with ManagedDatabaseConnection(db_path_override=db_path) as db_conn:
            if db_conn is None:
                raise ConnectionError(f"Failed to establish database connection to {db_path}")

            runs = run_ablation(seeds, base, ABLATION_VARIANTS, experiment=args.experiment)
            store_runs(db_conn, runs)
            experiments = [args.experiment]
            if args.batch_sizes:
                sweep_name = f"{args.experiment}_batch_sweep"
                sweep = run_ablation(seeds, base, batch_size_variants(args.batch_sizes), experiment=sweep_name)
                store_runs(db_conn, sweep)
                experiments.append(sweep_name)
            logger.info(f"Stored runs in {db_path}")

            for name in experiments:
                summary = summarize(db_conn, name)
                print(f"\n{name}")
                print(tabulate(summary, headers="keys", tablefmt="github", showindex=False, floatfmt=".4f"))
            for better, worse in COMPARISONS:
                wins, total = head_to_head(db_conn, better, worse, args.experiment)
                print(f"{better} beats {worse} on {wins}/{total} seeds")
    except Exception as e:
        logger.critical(f"Ablation failed: {e}", exc_info=True)
        sys.exit(2)
