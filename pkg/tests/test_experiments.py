"""
Tests for the ablation runner and its DuckDB result store.
"""

import duckdb
import pandas as pd
import pytest

from analysis.experiments import (COLUMNS, REVISIT_ORDER, Variant, batch_size_variants, head_to_head, run_ablation,
                                  run_variant, store_runs, summarize, variant_config)
from mapping.pipeline import PipelineConfig
from utils.database_conn import DB_ENV_VAR, ManagedDatabaseConnection, get_db_connection

from conftest import make_config


def _row(variant, seed, ate, experiment="ablation", error=None, loop_closures=0):
    return {"experiment": experiment, "variant": variant, "seed": seed, "batch_size": 60,
            "ate_sim3": ate, "ate_se3": ate, "rooms": 5, "edges": 4, "loop_closures": loop_closures,
            "invalid_rooms": 0, "elapsed_s": 1.0, "optimization_s": 0.1, "error": error}


@pytest.fixture
def stored_runs(in_memory_db):
    rows = [
        _row("room_based", 0, 0.1), _row("room_based", 1, 0.2), _row("room_based", 2, 0.3, loop_closures=1),
        _row("sliding_window", 0, 0.2), _row("sliding_window", 1, 0.1), _row("sliding_window", 2, 0.5),
        _row("room_based", 0, 9.0, experiment="other"),
    ]
    assert store_runs(in_memory_db, pd.DataFrame(rows, columns=COLUMNS)) == 7
    return in_memory_db


@pytest.mark.unit
class TestResultStore:
    """SQL summaries over stored runs."""

    def test_summary_per_variant(self, stored_runs):
        summary = summarize(stored_runs)
        assert list(summary["variant"]) == ["room_based", "sliding_window"]
        room = summary.set_index("variant").loc["room_based"]
        assert room["runs"] == 3
        assert room["failed"] == 0
        assert room["mean_ate_sim3"] == pytest.approx(0.2)
        assert room["median_ate_sim3"] == pytest.approx(0.2)
        assert room["loop_closures"] == 1
        window = summary.set_index("variant").loc["sliding_window"]
        assert window["mean_ate_sim3"] == pytest.approx(0.8 / 3)

    def test_experiments_kept_apart(self, stored_runs):
        other = summarize(stored_runs, "other")
        assert len(other) == 1
        assert other["mean_ate_sim3"].iloc[0] == pytest.approx(9.0)

    def test_head_to_head(self, stored_runs):
        assert head_to_head(stored_runs, "room_based", "sliding_window") == (2, 3)
        assert head_to_head(stored_runs, "sliding_window", "room_based") == (1, 3)
        assert head_to_head(stored_runs, "room_based", "missing") == (0, 0)

    def test_failed_runs_counted(self, in_memory_db):
        rows = [_row("broken", 0, 0.4), _row("broken", 1, 0.6, error="simulated provider failure")]
        store_runs(in_memory_db, pd.DataFrame(rows, columns=COLUMNS))
        summary = summarize(in_memory_db)
        assert summary["runs"].iloc[0] == 2
        assert summary["failed"].iloc[0] == 1

    def test_appends_across_calls(self, stored_runs):
        store_runs(stored_runs, pd.DataFrame([_row("room_based", 3, 0.4)], columns=COLUMNS))
        assert summarize(stored_runs).set_index("variant").loc["room_based", "runs"] == 4


@pytest.mark.unit
class TestVariants:

    def test_variant_config_leaves_base_untouched(self):
        base = make_config()
        config = variant_config(base, Variant("revisit", visit_order=REVISIT_ORDER, loop_closure=True,
                                              batch_size=30), seed=4)
        assert config.seed == 4 and config.oracle.rng_seed == 4
        assert config.batch_size == 30
        assert config.enable_loop_closure is True
        assert config.enable_objects is False
        assert config.simulation.sequence.visit_order == REVISIT_ORDER
        assert base.batch_size == 60
        assert base.simulation.sequence.visit_order == (0, 1, 2, 3, 4)

    def test_batch_size_sweep(self):
        variants = batch_size_variants([20, 40])
        assert [v.name for v in variants] == ["batch_20", "batch_40"]
        assert all(v.mode == "room_based" for v in variants)


@pytest.mark.slow
class TestRunAblation:

    def test_revisit_variant(self):
        variant = Variant("revisit_loop_closure", visit_order=REVISIT_ORDER, loop_closure=True)
        runs = run_ablation([0], base=make_config(), variants=(variant,), progress=False)
        assert list(runs.columns) == COLUMNS
        assert len(runs) == 1
        row = runs.iloc[0]
        assert row["error"] is None
        assert row["loop_closures"] == 1
        assert row["rooms"] == 3
        assert row["ate_sim3"] < 1e-6

    def test_failure_becomes_error_row(self):
        row = run_variant(make_config(), Variant("bad", visit_order=(0, 7)), seed=0)
        assert row["error"] is not None
        assert row["ate_sim3"] is None
        assert row["elapsed_s"] >= 0.0


@pytest.fixture(scope="module")
def twenty_seed_ablation():
    conn = duckdb.connect(":memory:")
    store_runs(conn, run_ablation(range(20), base=PipelineConfig(), progress=False))
    yield conn
    conn.close()


@pytest.mark.slow
@pytest.mark.integration
class TestAblationOutcome:
    """Default configuration over seeds 0-19."""

    def test_room_batching_beats_sliding_window(self, twenty_seed_ablation):
        wins, total = head_to_head(twenty_seed_ablation, "room_based", "sliding_window")
        assert total == 20
        assert wins >= 18

    def test_loop_closure_lowers_revisit_error(self, twenty_seed_ablation):
        wins, total = head_to_head(twenty_seed_ablation, "revisit_loop_closure", "revisit_no_loop_closure")
        assert total == 20
        assert wins >= 16


@pytest.mark.unit
class TestDatabaseConnection:
    """Connections to the on-disk result store."""

    def test_results_persist_across_connections(self, tmp_path):
        db_file = tmp_path / "nested" / "experiments.duckdb"
        with ManagedDatabaseConnection(db_file) as conn:
            assert conn is not None
            store_runs(conn, pd.DataFrame([_row("room_based", 0, 0.25)], columns=COLUMNS))
        with ManagedDatabaseConnection(db_file, read_only=True) as conn:
            assert summarize(conn)["runs"].iloc[0] == 1

    def test_read_only_missing_file(self, tmp_path):
        assert get_db_connection(tmp_path / "absent.duckdb", read_only=True) is None

    def test_environment_path_required(self, monkeypatch):
        monkeypatch.delenv(DB_ENV_VAR, raising=False)
        with pytest.raises(KeyError):
            get_db_connection()

    def test_path_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(DB_ENV_VAR, str(tmp_path / "env.duckdb"))
        with ManagedDatabaseConnection() as conn:
            assert conn.execute("SELECT 42").fetchone()[0] == 42
        assert (tmp_path / "env.duckdb").is_file()
