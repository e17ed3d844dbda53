"""
Database module for storing the history of CLI runs and their summary metrics
"""

import json
import os
import sqlite3
import threading
from datetime import datetime
from typing import Any, Dict, List, Optional

from runtime.scenario import DEFAULT_HISTORY


class HistoryDB:
    """SQLite database of CLI invocations"""

    def __init__(self, db_path: str = DEFAULT_HISTORY):
        """Open (and create if needed) the history database"""
        self.db_path = db_path
        directory = os.path.dirname(db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._local = threading.local()
        with self._get_conn() as conn:
            self.create_tables(conn)

    def _get_conn(self):
        """Get a thread-local database connection"""
        if not hasattr(self._local, 'conn'):
            self._local.conn = sqlite3.connect(self.db_path)
        return self._local.conn

    def create_tables(self, conn):
        """Create necessary tables if they don't exist"""
        cursor = conn.cursor()

        cursor.execute('''
        CREATE TABLE IF NOT EXISTS runs (
            run_id INTEGER PRIMARY KEY AUTOINCREMENT,
            timestamp TEXT,
            command TEXT,
            config_path TEXT,
            config_hash TEXT,
            seed INTEGER,
            exit_code INTEGER,
            converged BOOLEAN,
            summary TEXT,  -- JSON
            output_path TEXT,
            error TEXT
        )
        ''')

        cursor.execute('''
        CREATE TABLE IF NOT EXISTS run_metrics (
            metric_id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER,
            name TEXT,
            value REAL,
            FOREIGN KEY (run_id) REFERENCES runs(run_id)
        )
        ''')

        conn.commit()

    def start_run(self, command: str, config_path: Optional[str], config_hash: str, seed: int,
                  output_path: Optional[str] = None) -> int:
        """Record the start of a CLI run and return its ID"""
        with self._get_conn() as conn:
            cursor = conn.cursor()
            cursor.execute('''
            INSERT INTO runs (timestamp, command, config_path, config_hash, seed, output_path)
            VALUES (?, ?, ?, ?, ?, ?)
            ''', (datetime.now().isoformat(), command, config_path, config_hash, seed, output_path))
            conn.commit()
            return cursor.lastrowid

    def complete_run(self, run_id: int, exit_code: int, converged: Optional[bool],
                     summary: Optional[Dict[str, Any]] = None, error: Optional[str] = None):
        """Update a run with its exit status and summary"""
        with self._get_conn() as conn:
            cursor = conn.cursor()
            cursor.execute('''
            UPDATE runs
            SET exit_code = ?, converged = ?, summary = ?, error = ?
            WHERE run_id = ?
            ''', (exit_code, converged, json.dumps(summary or {}, default=float), error, run_id))
            conn.commit()

    def save_metrics(self, run_id: int, metrics: Dict[str, float]):
        """Store scalar metrics of a run"""
        with self._get_conn() as conn:
            cursor = conn.cursor()
            cursor.executemany('''
            INSERT INTO run_metrics (run_id, name, value) VALUES (?, ?, ?)
            ''', [(run_id, name, float(value)) for name, value in metrics.items()])
            conn.commit()

    def get_run_history(self, limit: int = 10) -> List[Dict[str, Any]]:
        """Get the most recent runs with their metric counts"""
        with self._get_conn() as conn:
            cursor = conn.cursor()
            cursor.execute('''
            SELECT r.*, COUNT(m.metric_id) as metrics
            FROM runs r
            LEFT JOIN run_metrics m ON r.run_id = m.run_id
            GROUP BY r.run_id
            ORDER BY r.run_id DESC
            LIMIT ?
            ''', (limit,))

            columns = [col[0] for col in cursor.description]
            return [dict(zip(columns, row)) for row in cursor.fetchall()]

    def get_run_details(self, run_id: int) -> Optional[Dict[str, Any]]:
        """Get one run with its decoded summary and metrics, None if unknown"""
        with self._get_conn() as conn:
            cursor = conn.cursor()

            cursor.execute('SELECT * FROM runs WHERE run_id = ?', (run_id,))
            row = cursor.fetchone()
            if row is None:
                return None
            run = dict(zip([col[0] for col in cursor.description], row))
            run['summary'] = json.loads(run['summary']) if run['summary'] else {}

            cursor.execute('SELECT name, value FROM run_metrics WHERE run_id = ? ORDER BY metric_id', (run_id,))
            run['metrics'] = {name: value for name, value in cursor.fetchall()}

            return run

    def delete_run(self, run_id: int):
        """Delete a run and its metrics"""
        with self._get_conn() as conn:
            cursor = conn.cursor()
            cursor.execute('DELETE FROM run_metrics WHERE run_id = ?', (run_id,))
            cursor.execute('DELETE FROM runs WHERE run_id = ?', (run_id,))
            conn.commit()

    def close(self):
        """Close the database connection"""
        if hasattr(self._local, 'conn'):
            self._local.conn.close()
            del self._local.conn
