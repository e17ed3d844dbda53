"""
Barring-policy optimizers: the access game, price updates and centralized baselines
"""

from .game import GameConfig, GameOutcome, run_algorithm1
from .pricing import PriceState, run_algorithm2
from .baseline import PsoConfig, grid_search_oracle, pso_optimize

__all__ = ["GameConfig", "GameOutcome", "run_algorithm1", "PriceState", "run_algorithm2",
           "PsoConfig", "grid_search_oracle", "pso_optimize"]
