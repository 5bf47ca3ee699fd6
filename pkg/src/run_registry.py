"""
This module provides a `RunRegistry` class that records command-line runs and
the artifacts they produce in an SQLite database.

Dependencies:
- logging (For logging errors and information)
- sqlite3 (For database interactions)
- config (For retrieving database configurations)
"""

import json
import logging
import sqlite3
from .utils import config


class RunRegistry:
    """
    SQLite ledger of CLI runs.

    Attributes:
        db_path (str): The path to the SQLite database file.

    Methods:
        create_db_if_not_there(): Ensures the runs and artifacts tables exist.
        start_run(command, arguments, seed): Records a new run and returns its ID.
        finish_run(run_id, status): Stores the exit status of a run.
        save_artifact(run_id, kind, path, sha256): Links a written file to a run.
        delete_run(run_id): Deletes a run and its artifacts.
        get_all_runs(): Retrieves all runs, newest first.
        get_run(run_id): Retrieves one run with its arguments.
        get_artifacts_by_run(run_id): Retrieves the artifacts of a run.
    """

    def __init__(self, db_path=None):
        self.db_path = db_path or config.DATABASE

    def _connect(self):
        return sqlite3.connect(self.db_path)

    def create_db_if_not_there(self):
        """Create the database and tables if they do not exist."""
        conn = self._connect()
        c = conn.cursor()
        try:
            c.execute(
                f"""CREATE TABLE IF NOT EXISTS {config.TABLE_RUNS}
                        (
                            id INTEGER PRIMARY KEY AUTOINCREMENT,
                            command TEXT,
                            arguments TEXT,
                            seed INTEGER,
                            status INTEGER,
                            timestamp DATETIME DEFAULT CURRENT_TIMESTAMP
                        )"""
            )
            c.execute(
                f"""CREATE TABLE IF NOT EXISTS {config.TABLE_ARTIFACTS}
                        (
                            id INTEGER PRIMARY KEY AUTOINCREMENT,
                            run_id INTEGER,
                            kind TEXT,
                            path TEXT,
                            sha256 TEXT,
                            FOREIGN KEY (run_id) REFERENCES {config.TABLE_RUNS} (id)
                        )"""
            )
            conn.commit()
            logging.debug("Ensured tables %s and %s exist.", config.TABLE_RUNS, config.TABLE_ARTIFACTS)
        except sqlite3.Error as e:
            logging.error("Failed to create tables: %s", e)
        finally:
            conn.close()

    def start_run(self, command, arguments, seed=None):
        """Record a run and return its ID (None if the ledger is unavailable)."""
        try:
            with self._connect() as conn:
                c = conn.cursor()
                c.execute(
                    f"INSERT INTO {config.TABLE_RUNS} (command, arguments, seed) VALUES (?, ?, ?)",
                    (command, json.dumps(arguments, sort_keys=True, default=str), seed),
                )
                return c.lastrowid
        except sqlite3.Error as e:
            logging.error("Failed to record run: %s", e)
            return None

    def finish_run(self, run_id, status):
        if run_id is None:
            return
        try:
            with self._connect() as conn:
                conn.execute(f"UPDATE {config.TABLE_RUNS} SET status = ? WHERE id = ?", (status, run_id))
        except sqlite3.Error as e:
            logging.error("Failed to update run %s: %s", run_id, e)

    def save_artifact(self, run_id, kind, path, sha256):
        if run_id is None:
            return
        try:
            with self._connect() as conn:
                conn.execute(
                    f"INSERT INTO {config.TABLE_ARTIFACTS} (run_id, kind, path, sha256) VALUES (?, ?, ?, ?)",
                    (run_id, kind, str(path), sha256),
                )
        except sqlite3.Error as e:
            logging.error("Failed to record artifact %s: %s", path, e)

    def delete_run(self, run_id):
        """Delete a run and its artifacts."""
        conn = self._connect()
        c = conn.cursor()
        try:
            c.execute(f"DELETE FROM {config.TABLE_ARTIFACTS} WHERE run_id = ?", (run_id,))
            c.execute(f"DELETE FROM {config.TABLE_RUNS} WHERE id = ?", (run_id,))
            conn.commit()
            return c.rowcount > 0
        finally:
            conn.close()

    def get_all_runs(self):
        """Retrieve (id, command, seed, status, timestamp) for every run, newest first."""
        try:
            with self._connect() as conn:
                return conn.execute(
                    f"SELECT id, command, seed, status, timestamp FROM {config.TABLE_RUNS} ORDER BY id DESC"
                ).fetchall()
        except sqlite3.Error as e:
            logging.error("Failed to fetch runs: %s", e)
            return []

    def get_run(self, run_id):
        try:
            with self._connect() as conn:
                row = conn.execute(
                    f"SELECT id, command, arguments, seed, status, timestamp FROM {config.TABLE_RUNS} WHERE id = ?",
                    (run_id,),
                ).fetchone()
        except sqlite3.Error as e:
            logging.error("Failed to fetch run %s: %s", run_id, e)
            return None
        if row is None:
            return None
        run_id, command, arguments, seed, status, timestamp = row
        return {
            "id": run_id,
            "command": command,
            "arguments": json.loads(arguments or "{}"),
            "seed": seed,
            "status": status,
            "timestamp": timestamp,
        }

    def get_artifacts_by_run(self, run_id):
        """Retrieve (kind, path, sha256) for the artifacts of a run."""
        try:
            with self._connect() as conn:
                return conn.execute(
                    f"SELECT kind, path, sha256 FROM {config.TABLE_ARTIFACTS} WHERE run_id = ? ORDER BY id",
                    (run_id,),
                ).fetchall()
        except sqlite3.Error as e:
            logging.error("Failed to fetch artifacts for run %s: %s", run_id, e)
            return []
