"""
Non-cooperative barring game: utilities, closed-form best response and the
synchronous best-response dynamics with its round-two safeguard
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from analysis.qos import QosModel, to_probability
from runtime.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

# Maps a policy to the success estimate (1 - eps) F_s of every queue
SuccessEstimator = Callable[[np.ndarray], np.ndarray]


@dataclass
class GameConfig:
    """Prices and iteration controls of the barring game"""

    prices: Union[float, np.ndarray]
    x_min: float
    x_max: float
    tol: float = 1e-6
    delta: float = 1e-3
    max_iter: int = 500
    info_mode: str = "full"

    def __post_init__(self):
        if np.any(np.asarray(self.prices, dtype=float) < 0.0):
            raise ConfigError("prices must be non-negative")
        if self.tol <= 0.0 or self.delta <= 0.0:
            raise ConfigError("tolerance and safeguard increment must be positive")
        if not self.x_min < self.x_max:
            raise ConfigError("x_min must be below x_max")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.info_mode not in ("full", "distributed"):
            raise ConfigError(f"unknown information mode: {self.info_mode}")

    def price_matrix(self, shape) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.prices, dtype=float), shape).copy()


@dataclass
class GameOutcome:
    """Result of a best-response or price-update run"""

    x: np.ndarray
    trajectory: List[np.ndarray]
    prices: np.ndarray
    utilities: np.ndarray
    residual: float
    converged: bool
    iterations: int
    total_capacity: float
    messages: int = 0
    capacity_history: List[float] = field(default_factory=list)
    price_history: List[np.ndarray] = field(default_factory=list)
    kkt_history: List[float] = field(default_factory=list)
    kkt_residual: Optional[float] = None

    @property
    def d(self) -> np.ndarray:
        return to_probability(self.x)


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------

def queue_utilities(model: QosModel, x: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """C_{n,k}(x) - lambda_{n,k} x_{n,k} for every queue."""
    return model.capacity(x) - prices * x


def utility(model: QosModel, n: int, x: np.ndarray, prices: Union[float, np.ndarray]) -> float:
    """U_n = sum_k [C_{n,k}(x_{n,k}, x_{-n}) - lambda_{n,k} x_{n,k}]"""
    prices = np.broadcast_to(np.asarray(prices, dtype=float), model.shape)
    return float(np.sum(queue_utilities(model, x, prices)[n]))


def utilities(model: QosModel, x: np.ndarray, prices: Union[float, np.ndarray]) -> np.ndarray:
    prices = np.broadcast_to(np.asarray(prices, dtype=float), model.shape)
    return np.sum(queue_utilities(model, x, prices), axis=-1)


def utility_gradient(model: QosModel, x: np.ndarray, prices: Union[float, np.ndarray],
                     phi_value: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Own-coordinate derivatives dU_n/dx_{n,k} for every queue

    e^{-x} Phi / (theta T (1 - Phi + e^{-x} Phi)) - lambda
    """
    prices = np.broadcast_to(np.asarray(prices, dtype=float), model.shape)
    phi_value = model.phi(x) if phi_value is None else phi_value
    decay = np.exp(-x)
    marginal = decay * phi_value / (model.theta * model.t_ec * (1.0 - phi_value + decay * phi_value))
    return marginal - prices


def best_response(phi_value, price, theta, t_ec: float, x_min: float, x_max: float):
    """
    Closed-form maximizer of a player's concave utility in one coordinate

    clip(ln(1/(lambda theta T) - 1) - ln(1/Phi - 1), x_min, x_max); x_min when
    lambda theta T >= 1 and x_max when the price vanishes.

    Raises:
        DomainError: Phi outside (0, 1)
    """
    phi_value = np.asarray(phi_value, dtype=float)
    scaled_price = np.asarray(price, dtype=float) * np.asarray(theta, dtype=float) * t_ec
    if np.any((phi_value <= 0.0) | (phi_value >= 1.0)):
        raise DomainError("best response needs 0 < Phi < 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        interior = np.log(1.0 / scaled_price - 1.0) - np.log(1.0 / phi_value - 1.0)
    value = np.where(scaled_price >= 1.0, x_min,
                     np.where(scaled_price <= 0.0, x_max, np.clip(interior, x_min, x_max)))
    return float(value) if np.ndim(value) == 0 else value


def best_response_round(model: QosModel, phi_value: np.ndarray, prices: np.ndarray,
                        x_min: float, x_max: float) -> np.ndarray:
    """Best responses of all queues; a queue with Phi = 0 gains nothing from access and bars at x_min."""
    response = np.full(model.shape, x_min)
    live = phi_value > 0.0
    if np.any(live):
        response[live] = best_response(phi_value[live], prices[live], model.theta[live],
                                       model.t_ec, x_min, x_max)
    return response


# ---------------------------------------------------------------------------
# Distributed information
# ---------------------------------------------------------------------------

def phi_distributed(x_self: Union[float, np.ndarray], success_estimate: Union[float, np.ndarray],
                    fading_exp: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Phi rebuilt from a device's own view: (1 - E) F~_s / (1 - e^{-x})

    ``success_estimate`` is the ACK-based estimate of (1 - eps) F_s.
    """
    x_self = np.asarray(x_self, dtype=float)
    success_estimate = np.asarray(success_estimate, dtype=float)
    if np.any(x_self <= 0.0):
        raise DomainError("own barring level must be positive")
    if np.any((success_estimate < 0.0) | (success_estimate > 1.0)):
        raise DomainError("success estimate must lie in [0, 1]")
    value = (1.0 - np.asarray(fading_exp, dtype=float)) * success_estimate / to_probability(x_self)
    return float(value) if np.ndim(value) == 0 else value


def analytic_success_estimator(model: QosModel) -> SuccessEstimator:
    """Exact (1 - eps) F_s, i.e. a perfect ACK counter."""
    return lambda x: (1.0 - model.eps) * model.success_prob(x)


def _phi_source(model: QosModel, config: GameConfig,
                estimator: Optional[SuccessEstimator]) -> Callable[[np.ndarray], np.ndarray]:
    if config.info_mode == "full":
        return model.phi
    estimator = estimator or analytic_success_estimator(model)

    def distributed(x: np.ndarray) -> np.ndarray:
        estimate = np.clip(estimator(x), 0.0, 1.0)
        return phi_distributed(x, estimate, 1.0 - model.complement)

    return distributed


# ---------------------------------------------------------------------------
# Algorithm 1
# ---------------------------------------------------------------------------

def _safeguard(response: np.ndarray, x0: np.ndarray, x1: np.ndarray, config: GameConfig) -> np.ndarray:
    """Second-round rule: keep x^2 on the far side of x^0 in the direction of the first move."""
    increasing = x1 >= x0
    rising = np.where(response > x0, response, x0 + config.delta)
    falling = np.where(response < x0, response, x0 - config.delta)
    return np.clip(np.where(increasing, rising, falling), config.x_min, config.x_max)


def run_algorithm1(model: QosModel, config: GameConfig, initial_x: Optional[np.ndarray] = None,
                   estimator: Optional[SuccessEstimator] = None) -> GameOutcome:
    """
    Synchronous best-response dynamics with fixed prices

    Every round all queues best-respond to the previous round's policy; the
    second round applies the safeguard. Stops when the largest coordinate
    change is at most ``config.tol`` or after ``config.max_iter`` rounds.

    Args:
        model: QoS model of the scenario
        config: Prices and iteration controls
        initial_x: Starting policy, default x_min everywhere
        estimator: Success estimator for the distributed information mode

    Returns:
        GameOutcome (``converged`` is False when the round cap is hit)
    """
    prices = config.price_matrix(model.shape)
    x = model.full(config.x_min) if initial_x is None else np.clip(np.asarray(initial_x, dtype=float),
                                                                    config.x_min, config.x_max)
    phi_of = _phi_source(model, config, estimator)
    trajectory = [x.copy()]
    capacity_history = [model.total_capacity(x)]
    converged = False
    rounds = 0

    for rounds in range(1, config.max_iter + 1):
        response = best_response_round(model, phi_of(x), prices, config.x_min, config.x_max)
        if rounds == 2:
            response = _safeguard(response, trajectory[0], trajectory[1], config)
        change = float(np.max(np.abs(response - x)))
        x = response
        trajectory.append(x.copy())
        capacity_history.append(model.total_capacity(x))
        logger.debug("algorithm 1 round %d: max change %.3e", rounds, change)
        if change <= config.tol:
            converged = True
            break

    residual = float(np.max(np.abs(x - best_response_round(model, phi_of(x), prices,
                                                           config.x_min, config.x_max))))
    if converged:
        logger.info("algorithm 1 converged in %d rounds (residual %.2e)", rounds, residual)
    else:
        logger.warning("algorithm 1 hit the round cap (%d) with residual %.2e", config.max_iter, residual)

    return GameOutcome(
        x=x,
        trajectory=trajectory,
        prices=prices,
        utilities=utilities(model, x, prices),
        residual=residual,
        converged=converged,
        iterations=rounds,
        total_capacity=model.total_capacity(x),
        messages=rounds * model.n_devices * model.n_classes,
        capacity_history=capacity_history,
    )
