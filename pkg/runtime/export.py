"""
CSV output: frame builders for outcomes and simulator statistics, and the
writer that stamps every file with its seed and scenario hash
"""

import logging
import os
import sys
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from analysis.qos import QosModel, to_probability
from optimizers.game import GameOutcome, queue_utilities
from runtime.errors import ConfigError
from runtime.simulator import SimStats

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


def write_csv(frame: pd.DataFrame, path: Optional[str], seed: Any, config_hash: str) -> None:
    """
    Write a frame as CSV preceded by ``# seed=<seed>, config_hash=<hash>``

    Args:
        frame: Data to write
        path: Output file, or None for stdout
        seed: Seed recorded in the comment line
        config_hash: Scenario hash recorded in the comment line
    """
    header = f"# seed={seed}, config_hash={config_hash}\n"
    body = frame.to_csv(index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
    if path is None:
        sys.stdout.write(header + body)
        sys.stdout.flush()
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header + body)
    logger.info("wrote %d rows to %s", len(frame), path)


def read_header(path: str) -> Dict[str, str]:
    """Parse the comment line written by write_csv."""
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first.startswith("#"):
        return {}
    pairs = (item.strip().split("=", 1) for item in first.lstrip("#").split(","))
    return {key: value for key, value in pairs}


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, skiprows=1)


# ---------------------------------------------------------------------------
# Frame builders
# ---------------------------------------------------------------------------

def outcome_frame(outcome: GameOutcome, model: QosModel) -> pd.DataFrame:
    """One row per (iteration, player, queue): x, d and the queue's utility."""
    rows = []
    for it, x in enumerate(outcome.trajectory):
        prices = outcome.price_history[it] if outcome.price_history else outcome.prices
        utility = queue_utilities(model, x, prices)
        d = to_probability(x)
        for n in range(x.shape[0]):
            for k in range(x.shape[1]):
                rows.append({"iteration": it, "player": n, "queue": k, "x": x[n, k],
                             "d": d[n, k], "utility": utility[n, k]})
    return pd.DataFrame(rows, columns=["iteration", "player", "queue", "x", "d", "utility"])


def price_frame(outcome: GameOutcome) -> pd.DataFrame:
    """One row per (iteration, n, k) of a price-update run."""
    rows = []
    for it, (x, prices) in enumerate(zip(outcome.trajectory, outcome.price_history)):
        total = outcome.capacity_history[it]
        kkt = outcome.kkt_history[it] if it < len(outcome.kkt_history) else np.nan
        for n in range(x.shape[0]):
            for k in range(x.shape[1]):
                rows.append({"iteration": it, "n": n, "k": k, "x": x[n, k], "lambda": prices[n, k],
                             "total_ec": total, "kkt_residual": kkt})
    return pd.DataFrame(rows, columns=["iteration", "n", "k", "x", "lambda", "total_ec", "kkt_residual"])


def stats_frame(stats: SimStats, replication: Optional[int] = None) -> pd.DataFrame:
    """Per-queue counters and estimators of one simulation run."""
    success = stats.success_freq()
    stderr = stats.success_stderr()
    idle = stats.idle_freq()
    ack = stats.ack_estimate()
    completed = stats.packets_completed()
    n, k = success.shape
    rows = []
    for i in range(n):
        for j in range(k):
            row: Dict[str, Union[int, float]] = {}
            if replication is not None:
                row["replication"] = replication
            row.update({
                "n": i, "k": j,
                "frames": stats.frames,
                "attempts": int(stats.attempts[i, j]),
                "successes": int(stats.successes[i, j]),
                "collisions": int(stats.collisions[i, j]),
                "deliveries": int(stats.deliveries[i, j]),
                "packets": int(completed[i, j]),
                "success_freq": success[i, j],
                "success_stderr": stderr[i, j],
                "idle_freq": idle[i, j],
                "ack_ema": np.nan if ack is None else ack[i, j],
                "arrived_bits": stats.arrived_bits[i, j],
                "served_bits": stats.served_bits[i, j],
            })
            rows.append(row)
    return pd.DataFrame(rows)


def histogram_frame(stats: SimStats, n: int, k: int, kind: str = "queue") -> pd.DataFrame:
    """(bin_lower, count) rows of the queue-length or delay histogram of queue (n, k)."""
    if kind == "queue":
        counts, width = stats.queue_hist[n, k], stats.queue_bin_bits
    elif kind == "delay":
        counts, width = stats.delay_hist[n, k], stats.delay_bin_s
    else:
        raise ConfigError(f"unknown histogram kind: {kind}")
    return pd.DataFrame({"bin_lower": np.arange(counts.size) * width, "count": counts.astype(np.int64)})
