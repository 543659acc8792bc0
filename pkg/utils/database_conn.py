# -*- coding: utf-8 -*-
"""
Database Connection Utility for DuckDB.

Connections to the experiment results database used by ablation sweeps.
The file path comes from ROOMGRAPH_DB_FILE unless overridden; ':memory:'
gives a throwaway database.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import duckdb

logger = logging.getLogger(__name__)

DB_ENV_VAR = "ROOMGRAPH_DB_FILE"


def get_db_connection(
    db_path_override: Optional[Union[str, Path]] = None,
    read_only: bool = False,
    pragma_settings: Optional[Dict[str, Any]] = None
) -> Optional[duckdb.DuckDBPyConnection]:
    """
    Establishes a connection to the experiment database.

    Args:
        db_path_override: Path (or ':memory:') used instead of ROOMGRAPH_DB_FILE.
        read_only: Open the database in read-only mode.
        pragma_settings: PRAGMA settings applied after connecting.

    Returns:
        A DuckDB connection, or None if the connection failed.

    Raises:
        KeyError: If no override is given and ROOMGRAPH_DB_FILE is not set.
    """
    if db_path_override is not None:
        db_path_str = str(db_path_override)
    else:
        try:
            db_path_str = os.environ[DB_ENV_VAR]
        except KeyError:
            logger.error(f"{DB_ENV_VAR} is not set and no database path was given.")
            raise
    if not db_path_str:
        logger.error("Database path is empty.")
        return None

    if db_path_str != ":memory:":
        db_path = Path(db_path_str)
        if read_only and not db_path.is_file():
            logger.error(f"Database file not found for read-only connection: {db_path}")
            return None
        if not read_only:
            try:
                db_path.parent.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                logger.error(f"Cannot create directory {db_path.parent}: {e}")
                return None

    conn = None
    try:
        conn = duckdb.connect(database=db_path_str, read_only=read_only)
        for key, value in (pragma_settings or {}).items():
            try:
                literal = f"'{value}'" if isinstance(value, str) else value
                conn.execute(f"PRAGMA {key} = {literal};")
            except duckdb.Error as pragma_e:
                logger.warning(f"Could not set PRAGMA {key} = {value}: {pragma_e}")
        logger.debug(f"Connected: {db_path_str} (RO: {read_only})")
        return conn
    except duckdb.Error as e:
        logger.error(f"Failed connection to {db_path_str}: {e}")
        if conn is not None:
            conn.close()
        return None


class ManagedDatabaseConnection:
    """
    Context manager around get_db_connection; closes the connection on exit.

    Usage:
        with ManagedDatabaseConnection(":memory:") as conn:
            if conn:
                conn.execute("SELECT 42").fetchall()
    """

    def __init__(self, db_path_override: Optional[Union[str, Path]] = None, read_only: bool = False,
                 pragma_settings: Optional[Dict[str, Any]] = None):
        self._db_path_override = db_path_override
        self._read_only = read_only
        self._pragma_settings = pragma_settings
        self.connection: Optional[duckdb.DuckDBPyConnection] = None

    def __enter__(self) -> Optional[duckdb.DuckDBPyConnection]:
        self.connection = get_db_connection(self._db_path_override, self._read_only, self._pragma_settings)
        return self.connection

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.connection is not None:
            try:
                self.connection.close()
            except duckdb.Error as e:
                logger.error(f"Error closing DB connection: {e}")
        return False
