"""
Command line: outputs, exit codes and run history
"""

import json
from pathlib import Path

import numpy as np
import pytest

import main
from runtime.export import read_csv, read_header
from runtime.history_db import HistoryDB
from runtime.scenario import ENV_THREADS, history_path

SHORT_SIM = {"sim": {"horizon": 400, "queue_bins": 20, "delay_bins": 10}}
PRESETS = Path(main.__file__).resolve().parent / "scenarios"


def write_config(tmp_path, document, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


def preset(name):
    return json.loads((PRESETS / f"{name}.json").read_text())


def test_game_output_is_reproducible(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main.main(["game", "--config", "small_n2", "--quiet", "--out", str(first)]) == 0
    assert main.main(["game", "--config", "small_n2", "--quiet", "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    header = read_header(str(first))
    assert header["seed"] == "0" and len(header["config_hash"]) == 64
    frame = read_csv(str(first))
    assert list(frame.columns) == ["iteration", "player", "queue", "x", "d", "utility"]


def test_seed_flag_changes_header(tmp_path):
    out = tmp_path / "game.csv"
    assert main.main(["game", "--config", "small_n2", "--seed", "5", "--quiet", "--out", str(out)]) == 0
    assert read_header(str(out))["seed"] == "5"


def test_price_command(tmp_path):
    out = tmp_path / "price.csv"
    assert main.main(["price", "--config", "small_n2", "--quiet", "--out", str(out)]) == 0
    frame = read_csv(str(out))
    assert {"lambda", "total_ec", "kkt_residual"} <= set(frame.columns)


def test_compare_lists_every_method(tmp_path):
    out = tmp_path / "compare.csv"
    assert main.main(["compare", "--config", "small_n2", "--quiet", "--out", str(out)]) == 0
    frame = read_csv(str(out))
    assert list(frame["method"]) == ["fixed-d", "alg1", "alg2", "pso", "grid"]
    totals = dict(zip(frame["method"], frame["total_ec"]))
    assert totals["grid"] >= totals["alg2"] * (1.0 - 1e-6)
    assert totals["alg2"] >= totals["alg1"] * (1.0 - 1e-6)

    traced = tmp_path / "history.csv"
    assert main.main(["compare", "--config", "small_n2", "--history", "--quiet", "--out", str(traced)]) == 0
    history = read_csv(str(traced))
    assert list(history.columns) == ["method", "iteration", "total_ec"]
    assert set(history["method"]) == {"fixed-d", "alg1", "alg2", "pso", "grid"}


def test_sweeps(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main.main(["capacity-sweep", "--config", "small_n2", "--preambles", "2,4",
                      "--bandwidths", "180000,360000", "--quiet", "--out", str(out)]) == 0
    frame = read_csv(str(out))
    assert len(frame) == 4
    assert list(frame.columns) == ["M", "bandwidth_hz", "class", "ec_per_device"]

    out = tmp_path / "qos.csv"
    assert main.main(["qos-sweep", "--config", "small_n2", "--thetas", "0.0005,0.001",
                      "--quiet", "--out", str(out)]) == 0
    frame = read_csv(str(out))
    assert list(frame.columns) == ["theta", "ec_class1"]
    assert frame["ec_class1"].iloc[0] > frame["ec_class1"].iloc[1]


def final_policy(path):
    frame = read_csv(str(path))
    last = frame[frame["iteration"] == frame["iteration"].max()]
    return frame, last.sort_values(["player", "queue"])["x"].to_numpy()


def test_random_starts_reach_one_fixed_point(tmp_path):
    finals, starts = [], []
    for seed in ("1", "2", "3"):
        out = tmp_path / f"game_{seed}.csv"
        assert main.main(["game", "--config", "game_policy", "--start-seed", seed, "--quiet", "--out", str(out)]) == 0
        assert read_header(str(out))["seed"] == "1"
        frame, x = final_policy(out)
        finals.append(x)
        starts.append(frame[frame["iteration"] == 0].sort_values(["player", "queue"])["x"].to_numpy())
    assert len(finals[0]) == 200
    assert not np.allclose(starts[0], starts[1])
    spread = np.max(np.ptp(np.vstack(finals), axis=0))
    assert spread <= 1e-4


def test_price_sweep_against_fixed_barring(tmp_path):
    out = tmp_path / "prices.csv"
    assert main.main(["price-sweep", "--config", "game_policy", "--quiet", "--out", str(out)]) == 0
    frame = read_csv(str(out))
    assert list(frame.columns) == ["method", "price", "d", "total_ec", "iterations", "converged"]
    game = frame[frame["method"] == "alg1"]
    fixed = frame[frame["method"] == "fixed-d"]
    assert list(game["price"]) == [1e2, 1e3, 1e4, 1e5]
    assert list(fixed["d"]) == [0.1, 0.5, 0.9]
    np.testing.assert_allclose(game["total_ec"], [1.0965e6, 1.3995e6, 1.5588e6, 8.162e5], rtol=5e-3)
    best = int(np.argmax(game["total_ec"].to_numpy()))
    assert 0 < best < len(game) - 1
    assert game["total_ec"].max() > fixed["total_ec"].max()

    assert main.main(["price-sweep", "--config", "game_policy", "--fixed-d", "1.0", "--quiet",
                      "--out", str(out)]) == 2


@pytest.mark.parametrize("argv", [
    ["simulate", "--replications", "2"],
    ["capacity-sweep", "--replications", "2", "--preambles", "2,4", "--bandwidths", "180000,360000"],
])
def test_threaded_replications_are_reproducible(tmp_path, monkeypatch, argv):
    monkeypatch.setenv(ENV_THREADS, "2")
    config = write_config(tmp_path, {**preset("small_n2"), **SHORT_SIM})
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main.main(argv + ["--config", config, "--quiet", "--out", str(first)]) == 0
    assert main.main(argv + ["--config", config, "--quiet", "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_simulate_with_replications_and_histogram(tmp_path):
    config = write_config(tmp_path, {**preset("small_n2"), **SHORT_SIM})
    out = tmp_path / "sim.csv"
    assert main.main(["simulate", "--config", config, "--replications", "2", "--quiet", "--out", str(out)]) == 0
    frame = read_csv(str(out))
    assert set(frame["replication"].astype(str)) == {"0", "1", "mean"}

    hist = tmp_path / "hist.csv"
    assert main.main(["simulate", "--config", config, "--histogram", "queue", "--device", "1",
                      "--quiet", "--out", str(hist)]) == 0
    frame = read_csv(str(hist))
    assert list(frame.columns) == ["bin_lower", "count"]
    assert len(frame) == 21

    assert main.main(["simulate", "--config", config, "--histogram", "delay", "--device", "5",
                      "--quiet", "--out", str(hist)]) == 2


@pytest.mark.parametrize("argv", [
    ["game", "--config", "no_such_scenario.json"],
    ["qos-sweep", "--config", "small_n2", "--thetas", "0.01"],
    ["qos-sweep", "--config", "small_n2", "--thetas", "0.001", "--class", "2"],
    ["capacity-sweep", "--config", "small_n2", "--preambles", "0"],
])
def test_configuration_errors_exit_2(argv, tmp_path):
    assert main.main(argv + ["--quiet", "--out", str(tmp_path / "out.csv")]) == 2


def test_invalid_document_exits_2(tmp_path):
    config = write_config(tmp_path, {"system": {"preambles": -1}})
    assert main.main(["game", "--config", config, "--quiet"]) == 2


def test_iteration_cap_exits_3(tmp_path):
    config = write_config(tmp_path, {"system": {"placement": "lattice", "symbols": 1000},
                                     "game": {"max_iter": 2}})
    assert main.main(["game", "--config", config, "--quiet", "--out", str(tmp_path / "g.csv")]) == 3


def test_strict_report_exits_4_on_infeasible_queue(tmp_path):
    out = tmp_path / "report.csv"
    assert main.main(["qos-report", "--config", "single_device", "--strict", "--quiet", "--out", str(out)]) == 4
    frame = read_csv(str(out))
    assert frame["status"].iloc[0] == "infeasible"
    assert main.main(["qos-report", "--config", "single_device", "--quiet", "--out", str(out)]) == 0


def test_runs_are_recorded(tmp_path):
    out = str(tmp_path / "game.csv")
    assert main.main(["game", "--config", "small_n2", "--quiet", "--out", out]) == 0
    assert main.main(["game", "--config", "no_such_scenario.json", "--quiet"]) == 2
    assert main.main(["game", "--config", "small_n2", "--quiet", "--no-history", "--out", out]) == 0

    db = HistoryDB(history_path())
    runs = db.get_run_history()
    assert len(runs) == 1
    details = db.get_run_details(runs[0]["run_id"])
    assert details["command"] == "game"
    assert details["exit_code"] == 0
    assert details["output_path"] == out
    assert "total_ec" in details["metrics"]
    db.close()
