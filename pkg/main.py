# -*- coding: utf-8 -*-
"""
Main Orchestrator for the roomgraph pipeline.

Command-line interface for simulating worlds, running the room-level
mapping pipeline, evaluating runs against ground truth, exporting artifacts
and launching the ablation scripts.

Usage:
    python main.py simulate --config params.toml --seed 3 --out sim/
    python main.py run --config params.toml --input sim/ --out run/
    python main.py eval --run run/ --gt sim/ [--csv]
    python main.py export --run run/ --format ply|g2o
    python main.py ablate --seeds 10 --batch-sizes 20 40 60
    python main.py list-steps

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Diagnostics go to standard error; tables and CSV go to standard output.
"""

import argparse
import logging
import multiprocessing
import runpy
import sys
import time
from pathlib import Path
from typing import List, Optional

# Ensure the project root is importable for the step scripts as well.
PROJECT_ROOT = Path(__file__).resolve().parent
sys.path.append(str(PROJECT_ROOT))

try:
    from analysis.evaluation import evaluate_run, world_room_clouds
    from geometry.file_io import write_ply
    from geometry.pointcloud import PointCloud
    from mapping.pipeline import (load_ground_truth, load_input, load_pipeline_config, load_run, run_pipeline,
                                  simulate, write_run, write_simulation)
    from optimization.g2o_io import write_g2o
    from optimization.pgo import build_factors, connected_components
    from utils.config_utils import AppConfig
    from utils.errors import ConfigError, RoomGraphError
    from utils.graph_validation import validate_scene_graph
    from utils.logging_utils import setup_logging
except ImportError as e:
    print(f"FATAL: Could not import project modules. Run from the project root. Error: {e}", file=sys.stderr)
    sys.exit(2)

SCRIPT_NAME = Path(__file__).stem
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

logger = logging.getLogger(SCRIPT_NAME)

# --- Script Definitions ---
SCRIPT_DIR = Path(__file__).resolve().parent

SCRIPTS = {
    "ablate": SCRIPT_DIR / "scripts/run_ablation.py",
}


def run_script_target(script_path, script_args):
    """Target function for multiprocessing to execute the script."""
    original_argv = sys.argv
    sys.argv = [str(script_path)] + (script_args if script_args else [])
    try:
        runpy.run_path(str(script_path), run_name='__main__')
    finally:
        sys.argv = original_argv


def run_script(script_key: str, script_args: Optional[List[str]] = None, timeout: Optional[int] = None) -> int:
    """
    Runs a script defined in the SCRIPTS dictionary in a child process.

    Args:
        script_key: The key corresponding to the script to run.
        script_args: Command-line arguments passed to the script.
        timeout: Maximum run time in seconds; None waits indefinitely.

    Returns:
        The script's exit code (EXIT_FAILURE when it is missing or timed out).
    """
    script_path = SCRIPTS.get(script_key)
    if not script_path or not script_path.is_file():
        logger.error(f"Script for '{script_key}' not found at: {script_path}")
        return EXIT_FAILURE

    logger.info(f"---===[ Running Step: {script_key.upper()} ]===---")
    start_time = time.time()
    process = multiprocessing.Process(target=run_script_target, args=(script_path, script_args))
    process.start()
    process.join(timeout)

    if process.is_alive():
        logger.error(f"---===[ Step '{script_key.upper()}' timed out after {timeout} seconds. Terminating... ]===---")
        process.terminate()
        process.join()
        return EXIT_FAILURE

    elapsed = time.time() - start_time
    if process.exitcode == 0:
        logger.info(f"---===[ Finished Step: {script_key.upper()} in {elapsed:.2f}s ]===---")
    else:
        logger.error(f"---===[ Step '{script_key.upper()}' FAILED with exit code {process.exitcode} "
                     f"in {elapsed:.2f}s ]===---")
    return process.exitcode or EXIT_OK


def list_steps():
    """Display all available commands."""
    print("\nAvailable commands:\n")
    print("Pipeline:")
    print("  simulate     - Generate a seeded world and write its frame stream and ground truth")
    print("  run          - Run the room-level mapping pipeline on a simulation directory")
    print("  eval         - Evaluate a run against ground truth (table, or --csv per-room rows)")
    print("  export       - Export a run as a world-frame PLY map or a g2o factor graph")
    print("\nExperiments:")
    print("  ablate       - Batching / loop-closure ablation into the experiment database")
    print("\nUtilities:")
    print("  list-steps   - Show this list")
    print()


class UsageArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = UsageArgumentParser(prog="main.py", description="Room-level Sim(3) scene-graph mapping.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageArgumentParser)

    p = sub.add_parser("simulate", help="Generate a simulated sequence.")
    p.add_argument("--config", type=Path, default=None, help="Parameter file (TOML or JSON).")
    p.add_argument("--seed", type=int, default=None, help="World seed (overrides the config).")
    p.add_argument("--out", type=Path, required=True, help="Output directory.")

    p = sub.add_parser("run", help="Run the pipeline.")
    p.add_argument("--config", type=Path, default=None, help="Parameter file (TOML or JSON).")
    p.add_argument("--input", type=Path, required=True, help="Simulation directory.")
    p.add_argument("--out", type=Path, required=True, help="Run output directory.")

    p = sub.add_parser("eval", help="Evaluate a run.")
    p.add_argument("--run", type=Path, required=True, help="Run output directory.")
    p.add_argument("--gt", type=Path, required=True, help="Directory holding the ground truth.")
    p.add_argument("--config", type=Path, default=None, help="Parameter file for the evaluation section.")
    p.add_argument("--csv", action="store_true", help="Print per-room rows as CSV instead of a table.")

    p = sub.add_parser("export", help="Export run artifacts.")
    p.add_argument("--run", type=Path, required=True, help="Run output directory.")
    p.add_argument("--format", choices=("ply", "g2o"), required=True, help="Export format.")
    p.add_argument("--out", type=Path, default=None, help="Output file (default: inside the run directory).")

    sub.add_parser("ablate", help="Run the ablation script; remaining arguments are passed through.",
                   add_help=False)
    sub.add_parser("list-steps", help="List available commands.")
    return parser


# --- Commands ---

def cmd_simulate(args) -> int:
    config = load_pipeline_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    world, sequence = simulate(config)
    write_simulation(world, sequence, args.out)
    print(f"{len(sequence.frames)} frames, {len(world.rooms)} rooms, {sequence.traversals} traversals -> {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_pipeline_config(args.config)
    inp, _ = load_input(args.input, config)
    result = run_pipeline(config, inp)
    validator = validate_scene_graph(result.graph, result.database)
    write_run(result, args.out, config)
    if not validator.all_passed:
        logger.error("Scene graph failed validation; outputs were written for inspection")
        return EXIT_FAILURE
    print(f"{result.counts['rooms']} rooms, {result.counts['edges']} edges, "
          f"{result.counts['loop_closures']} loop closures, {result.counts['objects']} objects -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_pipeline_config(args.config)
    run = load_run(args.run)
    report = evaluate_run(run, load_ground_truth(args.gt), config.evaluation)
    report.save(Path(args.run) / "report.json")
    if args.csv:
        sys.stdout.write(report.to_csv())
    else:
        print(report.table())
    return EXIT_OK


def cmd_export(args) -> int:
    run = load_run(args.run)
    if args.format == "ply":
        clouds = [c for c in world_room_clouds(run.graph).values() if c is not None]
        if not clouds:
            logger.error("Run has no valid room clouds to export")
            return EXIT_FAILURE
        out = args.out or Path(args.run) / "map.ply"
        write_ply(out, PointCloud.concatenate(clouds))
    else:
        view = run.graph.room_pose_graph_view()
        factors = build_factors(view)
        fixed = [component[0] for component in connected_components(view.node_ids, factors)]
        out = args.out or Path(args.run) / "room_graph.g2o"
        write_g2o(out, view.poses(), factors, fixed)
    print(out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "eval": cmd_eval,
    "export": cmd_export,
}

# directory arguments that must exist before a command starts
REQUIRED_DIRS = {
    "run": ("input",),
    "eval": ("run", "gt"),
    "export": ("run",),
}


def check_directories(parser: argparse.ArgumentParser, args) -> None:
    """Reports a missing directory argument as a usage error (exit 1)."""
    for name in REQUIRED_DIRS.get(args.command, ()):
        path = getattr(args, name)
        if not Path(path).is_dir():
            parser.error(f"argument --{name}: directory not found: {path}")


def main(argv: Optional[List[str]] = None) -> int:
    """Parses command-line arguments and runs the requested command."""
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    # ablate forwards everything after the command to the step script
    positional = [k for k, a in enumerate(argv) if not a.startswith("-")]
    if positional and argv[positional[0]] == "ablate":
        cut = positional[0]
        args, passthrough = parser.parse_args(argv[:cut + 1]), argv[cut + 1:]
    else:
        args, passthrough = parser.parse_args(argv), []
    check_directories(parser, args)

    app_config = AppConfig(calling_script_path=Path(__file__))
    setup_logging(SCRIPT_NAME, app_config.LOG_DIR, level=logging.DEBUG if args.verbose else logging.INFO)

    if args.command == "list-steps":
        list_steps()
        return EXIT_OK
    if args.command == "ablate":
        code = run_script("ablate", passthrough)
        return code if code in (EXIT_OK, EXIT_USAGE) else EXIT_FAILURE

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (RoomGraphError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.critical(f"{args.command} failed unexpectedly: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
