#!/usr/bin/env python3
"""
CLI tool for viewing the run history of main.py
"""
import os
import sys
import json
import argparse
from tabulate import tabulate

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from runtime.history_db import HistoryDB
from runtime.scenario import history_path


def format_timestamp(ts):
    """Format timestamp for display"""
    if not ts:
        return "-"
    return ts.split("T")[0] + " " + ts.split("T")[1][:8]


def format_status(exit_code):
    if exit_code is None:
        return "⏳"
    return "✅" if exit_code == 0 else f"❌ {exit_code}"


def show_runs(db: HistoryDB, limit: int = 10):
    """Show recent runs"""
    runs = db.get_run_history(limit)

    rows = []
    for r in runs:
        rows.append([
            r["run_id"],
            format_timestamp(r["timestamp"]),
            r["command"],
            os.path.basename(r["config_path"]) if r["config_path"] else "(defaults)",
            r["config_hash"][:12] if r["config_hash"] else "",
            r["seed"],
            format_status(r["exit_code"]),
            r["metrics"],
        ])

    headers = ["ID", "Date", "Command", "Scenario", "Hash", "Seed", "Status", "Metrics"]
    print("\n🗂️  Recent runs:")
    print(tabulate(rows, headers=headers, tablefmt="grid"))


def show_run_details(db: HistoryDB, run_id: int):
    """Show detailed information about a specific run"""
    details = db.get_run_details(run_id)
    if details is None:
        print(f"❌ No run with ID {run_id}")
        return 1

    print(f"\n📊 Run {run_id} Details")
    print("=" * 50)
    print(f"Date: {format_timestamp(details['timestamp'])}")
    print(f"Command: {details['command']}")
    print(f"Scenario: {details['config_path'] or '(defaults)'}")
    print(f"Config hash: {details['config_hash']}")
    print(f"Seed: {details['seed']}")
    print(f"Status: {format_status(details['exit_code'])}")
    if details['output_path']:
        print(f"Output: {details['output_path']}")
    if details['error']:
        print(f"Error: {details['error']}")

    if details['metrics']:
        print("\n📈 Metrics:")
        print(tabulate(sorted(details['metrics'].items()), headers=["Name", "Value"], tablefmt="grid"))
    if details['summary']:
        print("\n🧾 Summary:")
        print(json.dumps(details['summary'], indent=2, sort_keys=True))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(description="View mMTC QoS run history")
    parser.add_argument("--list", "-l", action="store_true",
                        help="List recent runs")
    parser.add_argument("--run", "-r", type=int,
                        help="Show details for specific run ID")
    parser.add_argument("--limit", type=int, default=10,
                        help="Number of runs to show (default: 10)")
    parser.add_argument("--db", default=None,
                        help="History database (default: $MMTC_HISTORY_DB or ./logs/history.db)")

    args = parser.parse_args(argv)

    db = HistoryDB(args.db or history_path())
    code = 0
    if args.run:
        code = show_run_details(db, args.run)
    else:
        show_runs(db, args.limit)

    db.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
