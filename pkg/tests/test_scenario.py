"""
Scenario documents: defaults, presets, validation and model construction
"""

import numpy as np
import pytest

from analysis.qos import to_probability
from runtime.errors import ConfigError
from runtime.scenario import (ENV_HISTORY, ENV_THREADS, build_model, config_hash, derive_config, device_symbols,
                              fixed_policy, history_path, load_scenario, merge_defaults, place_devices,
                              replication_seeds, thread_count, validate_document)

SINGLE_CLASS = {"system": {"n_classes": 1}, "traffic": {"theta": [1e-3]}, "policy": {"fixed_d": [0.5]}}


def test_defaults():
    config = load_scenario()
    assert config.system.n_devices == 100
    assert config.system.n_classes == 2
    assert config.system.preambles == 50
    assert config.traffic.theta == (1e-3, 1e-5)
    assert config.traffic.eps == (1e-5, 1e-5)
    assert device_symbols(config.system) == 1079
    assert config.policy.bounds[0] < config.policy.bounds[1]
    assert config.source is None


@pytest.mark.parametrize("name", ["default", "game_policy", "small_n2", "single_device"])
def test_presets_load_by_name(name):
    config = load_scenario(name)
    model = build_model(config)
    assert model.shape == (config.system.n_devices, config.system.n_classes)
    assert config.source == name


def test_small_preset_contents():
    config = load_scenario("small_n2")
    assert config.system.distances_m == (20.0, 60.0)
    np.testing.assert_allclose(place_devices(config.system), [20.0, 60.0])
    np.testing.assert_allclose(to_probability(fixed_policy(config, (2, 1))), 0.5)


def test_file_path_and_overrides(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text('{"system": {"n_devices": 7}, "seed": 3}')
    config = load_scenario(str(path), {"seed": 5})
    assert config.system.n_devices == 7
    assert config.seed == 5


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(str(bad))
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_scenario(str(listing))


@pytest.mark.parametrize("document,path", [
    ({"system": {"preambles": 0}}, "$.system.preambles"),
    ({"traffic": {"arrival_prob": 1.5}}, "$.traffic.arrival_prob"),
    ({"system": {"placement": "hexagonal"}}, "$.system.placement"),
    ({"system": {"bogus": 1}}, "$.system"),
])
def test_schema_errors_name_the_field(document, path):
    with pytest.raises(ConfigError) as info:
        validate_document(document)
    assert path in str(info.value)


@pytest.mark.parametrize("overrides", [
    {"system": {"slot_s": 3e-4}},
    {"system": {"access_s": 2e-3}},
    {"system": {"placement": "explicit", "n_devices": 2, "distances_m": [10.0]}},
    {"system": {"n_classes": 1}, "traffic": {"theta": [2e-3]}, "policy": {"fixed_d": [0.5]}},
    {"traffic": {"theta": [1e-3]}},
    {"policy": {"d_min": 0.5, "d_max": 0.4}},
    {"policy": {"fixed_d": [0.95, 0.5]}},
    {"policy": {"d_min": 0.0}, "game": {"info_mode": "distributed"}},
])
def test_cross_field_checks(overrides):
    with pytest.raises(ConfigError):
        load_scenario(None, overrides)


def test_lattice_placement():
    config = load_scenario(None, {"system": {"n_devices": 4, "placement": "lattice"}})
    np.testing.assert_allclose(place_devices(config.system), np.hypot(125.0, 125.0))
    full = load_scenario(None, {"system": {"placement": "lattice"}})
    distances = place_devices(full.system)
    assert distances.size == 100
    assert distances.min() == pytest.approx(np.hypot(25.0, 25.0))


def test_uniform_placement():
    config = load_scenario()
    with pytest.raises(ConfigError):
        place_devices(config.system)
    distances = place_devices(config.system, np.random.default_rng(1))
    assert np.all((distances >= 1.0) & (distances <= 250.0 * np.sqrt(2.0)))


def test_explicit_distances_are_clamped():
    config = load_scenario(None, {"system": {"n_devices": 2, "placement": "explicit", "distances_m": [0.0, 5.0]}})
    np.testing.assert_allclose(place_devices(config.system), [1.0, 5.0])


def test_placement_follows_seed():
    config = load_scenario()
    first = build_model(config, seed=1)
    again = build_model(config, seed=1)
    other = build_model(config, seed=2)
    np.testing.assert_array_equal(first.gain_to_noise, again.gain_to_noise)
    assert not np.array_equal(first.gain_to_noise, other.gain_to_noise)


def test_derive_config_and_hash():
    config = load_scenario()
    assert load_scenario().hash == config.hash
    derived = derive_config(config, {"seed": 9})
    assert derived.seed == 9 and config.seed == 0
    assert derived.hash != config.hash
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})


def test_merge_defaults_does_not_mutate():
    defaults = {"a": {"b": 1, "c": 2}}
    merged = merge_defaults({"a": {"b": 5}}, defaults)
    assert merged == {"a": {"b": 5, "c": 2}}
    assert defaults == {"a": {"b": 1, "c": 2}}


def test_symbol_override():
    config = load_scenario(None, {"system": {"symbols": 1000}})
    assert device_symbols(config.system) == 1000
    np.testing.assert_array_equal(build_model(config).symbols, 1000.0)


def test_idle_modes():
    analytic = build_model(load_scenario(None, SINGLE_CLASS))
    np.testing.assert_allclose(analytic.p_idle, 0.5)

    saturated = build_model(load_scenario(None, {**SINGLE_CLASS, "traffic": {"theta": [1e-3],
                                                                             "idle_mode": "saturated"}}))
    np.testing.assert_array_equal(saturated.p_idle, 0.0)

    overrides = {
        "system": {"n_devices": 3, "n_classes": 1, "placement": "explicit", "distances_m": [20.0, 50.0, 90.0],
                   "preambles": 2},
        "traffic": {"theta": [1e-3], "idle_mode": "empirical", "pilot_superframes": 500},
        "policy": {"fixed_d": [0.5]},
        "seed": 4,
    }
    config = load_scenario(None, overrides)
    empirical = build_model(config)
    assert np.all((empirical.p_idle >= 0.0) & (empirical.p_idle <= 1.0))
    np.testing.assert_array_equal(build_model(config).p_idle, empirical.p_idle)
    explicit = build_model(config, p_idle=np.full((3, 1), 0.2))
    np.testing.assert_allclose(explicit.p_idle, 0.2)


def test_thread_count(monkeypatch):
    monkeypatch.setenv(ENV_THREADS, "3")
    assert thread_count() == 3
    monkeypatch.setenv(ENV_THREADS, "")
    assert thread_count() >= 1
    for raw in ("zero", "0", "-2"):
        monkeypatch.setenv(ENV_THREADS, raw)
        with pytest.raises(ConfigError):
            thread_count()


def test_history_path(monkeypatch, tmp_path):
    assert history_path() == str(tmp_path / "history.db")
    monkeypatch.delenv(ENV_HISTORY)
    assert history_path() == "logs/history.db"


def test_replication_seeds():
    single = replication_seeds(5, 1)
    assert len(single) == 1 and single[0].entropy == 5
    many = replication_seeds(5, 3)
    states = {tuple(s.generate_state(2)) for s in many}
    assert len(states) == 3
    assert [tuple(s.generate_state(2)) for s in replication_seeds(5, 3)] == [tuple(s.generate_state(2))
                                                                            for s in many]
    with pytest.raises(ConfigError):
        replication_seeds(5, 0)
