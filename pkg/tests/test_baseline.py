"""
Centralized references: particle swarm and grid search
"""

import numpy as np
import pytest

from optimizers.baseline import PsoConfig, grid_search_oracle, pso_optimize, total_effective_capacity
from runtime.errors import ConfigError, DimensionError


def test_objective_is_symmetric_in_identical_devices(make_model):
    model = make_model([35.0, 35.0], preambles=3)
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.uniform(model.x_min, model.x_max, model.shape)
        swapped = x[::-1].copy()
        a = total_effective_capacity(x, model)
        b = total_effective_capacity(swapped, model)
        assert abs(a - b) <= 1e-12 * abs(a)


def test_objective_batches(make_model):
    model = make_model([20.0, 60.0], theta=(1e-3,))
    batch = np.random.default_rng(8).uniform(model.x_min, model.x_max, (5,) + model.shape)
    values = total_effective_capacity(batch, model)
    assert values.shape == (5,)
    for i in range(5):
        assert values[i] == pytest.approx(total_effective_capacity(batch[i], model), rel=1e-12)


def test_pso_single_device_reaches_upper_bound(make_model):
    model = make_model([40.0], theta=(1e-3,))
    result = pso_optimize(model, PsoConfig(seed=3, max_iter=100))
    assert abs(float(result.x[0, 0]) - model.x_max) <= 1e-3


def test_pso_agrees_with_grid(make_model):
    model = make_model([20.0, 60.0], theta=(1e-3,), preambles=1)
    grid = grid_search_oracle(model, 200)
    pso = pso_optimize(model, PsoConfig(seed=5))
    assert pso.objective >= 0.995 * grid.objective


def test_pso_is_deterministic_and_monotone(make_model):
    model = make_model([15.0, 40.0], preambles=2)
    cfg = PsoConfig(seed=11, max_iter=50, swarm_size=10)
    first = pso_optimize(model, cfg)
    second = pso_optimize(model, cfg)
    np.testing.assert_array_equal(first.x, second.x)
    assert first.history == second.history
    assert len(first.history) == cfg.max_iter + 1
    assert np.all(np.diff(first.history) >= 0.0)
    assert first.evaluations == cfg.swarm_size * (cfg.max_iter + 1)
    assert first.objective == first.history[-1]
    assert np.all((first.x >= model.x_min) & (first.x <= model.x_max))


def test_pso_config_validation():
    with pytest.raises(ConfigError):
        PsoConfig(swarm_size=1)
    with pytest.raises(ConfigError):
        PsoConfig(inertia=-0.1)
    with pytest.raises(ConfigError):
        PsoConfig(max_iter=0)


def test_grid_refinement_never_loses(make_model):
    model = make_model([25.0, 50.0], theta=(1e-3,), preambles=2)
    coarse = grid_search_oracle(model, 101)
    fine = grid_search_oracle(model, 201)
    assert fine.objective >= coarse.objective * (1.0 - 1e-9)
    assert coarse.evaluations == 101 ** 2
    assert fine.evaluations == 201 ** 2
    assert fine.objective == pytest.approx(total_effective_capacity(fine.x, model), rel=1e-12)


def test_grid_limits(make_model):
    with pytest.raises(DimensionError):
        grid_search_oracle(make_model([10.0, 20.0, 30.0]), 10)
    with pytest.raises(DimensionError):
        grid_search_oracle(make_model([10.0, 20.0]), 200)
    with pytest.raises(ConfigError):
        grid_search_oracle(make_model([10.0, 20.0], theta=(1e-3,)), 1)
