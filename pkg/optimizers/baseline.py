"""
Centralized references: particle swarm optimization and exhaustive grid search
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from analysis.qos import QosModel
from runtime.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

GRID_MAX_DIM = 4
GRID_MAX_POINTS = 5_000_000
GRID_BATCH = 20_000


def total_effective_capacity(x: np.ndarray, model: QosModel):
    """sum_n sum_k C_{n,k}(x); x may carry leading batch axes."""
    return model.total_capacity(np.asarray(x, dtype=float))


@dataclass
class PsoConfig:
    """Constriction-type particle swarm settings"""

    swarm_size: int = 40
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    max_iter: int = 300
    seed: int = 0
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if int(self.swarm_size) < 2:
            raise ConfigError(f"swarm size must be at least 2, got {self.swarm_size}")
        if min(self.inertia, self.cognitive, self.social) < 0.0:
            raise ConfigError("PSO weights must be non-negative")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")


@dataclass
class SearchResult:
    """Best policy found by a centralized method"""

    x: np.ndarray
    objective: float
    history: List[float] = field(default_factory=list)
    evaluations: int = 0


def pso_optimize(model: QosModel, cfg: PsoConfig) -> SearchResult:
    """
    Maximize total effective capacity over the box [x_min, x_max]^{NK}

    Global-best PSO with absorbing walls: a coordinate that leaves the box
    is put back on the wall and its velocity zeroed.

    Args:
        model: QoS model of the scenario
        cfg: Swarm settings; bounds default to the model's x range

    Returns:
        SearchResult whose history holds the global best after every iteration
    """
    lower = model.x_min if cfg.lower is None else cfg.lower
    upper = model.x_max if cfg.upper is None else cfg.upper
    rng = np.random.default_rng(cfg.seed)
    size = (int(cfg.swarm_size),) + model.shape

    positions = rng.uniform(lower, upper, size)
    velocities = np.zeros(size)
    fitness = total_effective_capacity(positions, model)
    personal = positions.copy()
    personal_fit = fitness.copy()
    best = int(np.argmax(fitness))
    global_x = positions[best].copy()
    global_fit = float(fitness[best])
    history = [global_fit]
    evaluations = size[0]

    for it in range(cfg.max_iter):
        r1 = rng.random(size)
        r2 = rng.random(size)
        velocities = (cfg.inertia * velocities
                      + cfg.cognitive * r1 * (personal - positions)
                      + cfg.social * r2 * (global_x - positions))
        positions = positions + velocities
        outside = (positions < lower) | (positions > upper)
        positions = np.clip(positions, lower, upper)
        velocities[outside] = 0.0

        fitness = total_effective_capacity(positions, model)
        evaluations += size[0]
        improved = fitness > personal_fit
        personal[improved] = positions[improved]
        personal_fit[improved] = fitness[improved]
        best = int(np.argmax(personal_fit))
        if personal_fit[best] > global_fit:
            global_fit = float(personal_fit[best])
            global_x = personal[best].copy()
        history.append(global_fit)
        logger.debug("pso iteration %d: best %.6g", it + 1, global_fit)

    logger.info("pso finished: objective %.6g after %d evaluations", global_fit, evaluations)
    return SearchResult(global_x, global_fit, history, evaluations)


def grid_search_oracle(model: QosModel, resolution: int = 200) -> SearchResult:
    """
    Exhaustive search over a uniform grid of the box (N * K <= 4)

    Raises:
        DimensionError: too many coordinates or grid points
    """
    dim = model.n_devices * model.n_classes
    if dim > GRID_MAX_DIM:
        raise DimensionError(f"grid search supports N*K <= {GRID_MAX_DIM}, got {dim}")
    if resolution < 2:
        raise ConfigError("grid resolution must be at least 2")
    if resolution ** dim > GRID_MAX_POINTS:
        raise DimensionError(f"{resolution}^{dim} grid points exceed the budget of {GRID_MAX_POINTS}")

    axis = np.linspace(model.x_min, model.x_max, resolution)
    best_fit = -np.inf
    best_x = None
    evaluations = 0
    points = itertools.product(range(resolution), repeat=dim)
    while True:
        chunk = list(itertools.islice(points, GRID_BATCH))
        if not chunk:
            break
        batch = axis[np.asarray(chunk)].reshape((len(chunk),) + model.shape)
        fitness = total_effective_capacity(batch, model)
        evaluations += len(chunk)
        i = int(np.argmax(fitness))
        if fitness[i] > best_fit:
            best_fit = float(fitness[i])
            best_x = batch[i].copy()

    logger.info("grid search (%d^%d): objective %.6g", resolution, dim, best_fit)
    return SearchResult(best_x, best_fit, [best_fit], evaluations)
