"""
Price update toward locally optimal total effective capacity
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from analysis.qos import QosModel, to_probability
from optimizers.game import GameConfig, GameOutcome, best_response_round, utilities, utility_gradient
from runtime.errors import ConfigError

logger = logging.getLogger(__name__)

INTERIOR_TOL = 1e-9


@dataclass
class PriceState:
    """Prices, iteration index and step schedule rho_t = max(rho0 / (1 + t), rho_min)"""

    prices: np.ndarray
    t: int = 0
    rho0: float = 0.5
    rho_min: float = 0.1

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if np.any(self.prices < 0.0):
            raise ConfigError("prices must be non-negative")
        if not 0.0 <= self.rho0 <= 1.0 or not 0.0 <= self.rho_min <= 1.0:
            raise ConfigError("step sizes must lie in [0, 1]")

    @property
    def rho(self) -> float:
        return max(self.rho0 / (1.0 + self.t), self.rho_min)


def price_gradient(model: QosModel, x: np.ndarray) -> np.ndarray:
    """
    Marginal externality f_{n,k}(x) = -sum_{m != n} sum_b dC_{m,b}/dx_{n,k}

    f_{n,k} = w_{n,k} e^{-x_{n,k}} / (T M (1 - D_n / M)) * sum_{m != n} g_m
    with g_m = sum_b d_{m,b} Phi_{m,b} / (theta_{m,b} (1 - d_{m,b} Phi_{m,b})).
    """
    phi_value = model.phi(x)
    access = to_probability(x) * phi_value
    g = np.sum(access / (model.theta * (1.0 - access)), axis=-1)
    others = np.sum(g, axis=-1, keepdims=True) - g
    free = 1.0 - model.activation(x) / model.preambles
    coef = model.weights * np.exp(-x) / (model.t_ec * model.preambles * free[..., None])
    return np.maximum(coef * others[..., None], 0.0)


def price_step(state: PriceState, x: np.ndarray, model: QosModel) -> PriceState:
    """lambda[t+1] = (1 - rho_t) lambda[t] + rho_t f(x)"""
    rho = state.rho
    prices = (1.0 - rho) * state.prices + rho * price_gradient(model, x)
    return replace(state, prices=prices, t=state.t + 1)


def kkt_residual(model: QosModel, x: np.ndarray, prices: np.ndarray,
                 x_min: float, x_max: float) -> float:
    """
    Projected KKT residual of the total-capacity problem, normalized by max(1, max f(x))

    With g = dC_own/dx - f(x) the social gradient, a coordinate contributes
    |g| and |lambda - f| inside the box, max(g, 0) at x_min and max(-g, 0)
    at x_max.
    """
    gradient = price_gradient(model, x)
    social = utility_gradient(model, x, 0.0) - gradient
    at_low = x <= x_min + INTERIOR_TOL
    at_high = x >= x_max - INTERIOR_TOL
    interior = ~(at_low | at_high)
    violation = np.where(at_low, np.maximum(social, 0.0),
                         np.where(at_high, np.maximum(-social, 0.0), np.abs(social)))
    mismatch = np.where(interior, np.abs(prices - gradient), 0.0)
    scale = max(1.0, float(np.max(gradient)))
    return float(max(np.max(violation), np.max(mismatch))) / scale


def run_algorithm2(model: QosModel, config: GameConfig, initial_x: Optional[np.ndarray] = None,
                   initial_prices: Optional[np.ndarray] = None, rho0: float = 0.5,
                   rho_min: float = 0.1, max_iter: int = 2000) -> Tuple[GameOutcome, PriceState]:
    """
    Interleaved price update and best-response round

    Each iteration first moves the prices toward f(x) and then lets every
    queue best-respond once. Prices start at f(x^0) unless given.

    Args:
        model: QoS model of the scenario
        config: Bounds and tolerance (its prices are ignored)
        initial_x: Starting policy, default x_min everywhere
        initial_prices: Starting prices, default f(x^0)
        rho0: Initial step size
        rho_min: Step-size floor
        max_iter: Iteration cap

    Returns:
        (GameOutcome, final PriceState)
    """
    x = model.full(config.x_min) if initial_x is None else np.clip(np.asarray(initial_x, dtype=float),
                                                                    config.x_min, config.x_max)
    prices = price_gradient(model, x) if initial_prices is None else initial_prices
    state = PriceState(np.broadcast_to(prices, model.shape).copy(), 0, rho0, rho_min)

    trajectory = [x.copy()]
    price_history = [state.prices.copy()]
    capacity_history = [model.total_capacity(x)]
    kkt_history = [kkt_residual(model, x, state.prices, config.x_min, config.x_max)]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        state = price_step(state, x, model)
        response = best_response_round(model, model.phi(x), state.prices, config.x_min, config.x_max)
        change = float(np.max(np.abs(response - x)))
        x = response
        trajectory.append(x.copy())
        price_history.append(state.prices.copy())
        capacity_history.append(model.total_capacity(x))
        kkt_history.append(kkt_residual(model, x, state.prices, config.x_min, config.x_max))
        logger.debug("algorithm 2 iteration %d: change %.3e rho %.3f", iterations, change, state.rho)
        if change <= config.tol:
            converged = True
            break

    residual = float(np.max(np.abs(x - best_response_round(model, model.phi(x), state.prices,
                                                           config.x_min, config.x_max))))
    kkt = kkt_history[-1]
    if converged:
        logger.info("algorithm 2 converged in %d iterations (KKT residual %.2e)", iterations, kkt)
    else:
        logger.warning("algorithm 2 hit the iteration cap (%d)", max_iter)

    outcome = GameOutcome(
        x=x,
        trajectory=trajectory,
        prices=state.prices.copy(),
        utilities=utilities(model, x, state.prices),
        residual=residual,
        converged=converged,
        iterations=iterations,
        total_capacity=model.total_capacity(x),
        messages=iterations * model.n_devices * model.n_classes * 2,
        capacity_history=capacity_history,
        price_history=price_history,
        kkt_history=kkt_history,
        kkt_residual=kkt,
    )
    return outcome, state
