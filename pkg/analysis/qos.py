"""
Effective-capacity analysis of priority-queueing access class barring (ACB)

Access and success probabilities of the random-access phase, the fading
expectation of the finite-blocklength service, effective capacity, and the
solvers that compose effective bandwidth with effective capacity.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, special

from analysis.phy import q_inv_array, rate_from_penalty
from analysis.traffic import effective_bandwidth, mean_arrival_rate
from runtime.errors import (ConfigError, DomainError, InfeasibleQoSError,
                            NoCrossingError, NumericError)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

GAUSS_LAGUERRE_ORDER = 64
POWER_BRACKET_W = (1e-6, 10.0)
THETA_FLOOR = 1e-8
SOLVER_RTOL = 1e-6


@lru_cache(maxsize=8)
def laguerre_rule(order: int = GAUSS_LAGUERRE_ORDER) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Laguerre nodes and weights for E over an Exp(1) variable."""
    nodes, weights = special.roots_laguerre(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


# ---------------------------------------------------------------------------
# Barring policy
# ---------------------------------------------------------------------------

def barring_bounds(d_min: float, d_max: float) -> Tuple[float, float]:
    """Map barring-probability bounds to x bounds via x = -ln(1 - d)."""
    if not 0.0 <= d_min < d_max < 1.0:
        raise ConfigError("barring bounds need 0 <= d_min < d_max < 1",
                          detail=f"d_min={d_min}, d_max={d_max}")
    return float(-math.log1p(-d_min)), float(-math.log1p(-d_max))


def to_probability(x: ArrayLike) -> ArrayLike:
    """d = 1 - exp(-x)"""
    return -np.expm1(-np.asarray(x, dtype=float))


def to_level(d: ArrayLike) -> ArrayLike:
    """x = -ln(1 - d)"""
    return -np.log1p(-np.asarray(d, dtype=float))


@dataclass
class BarringPolicy:
    """Decision vector x_{n,k} in [x_min, x_max] with d = 1 - e^{-x}"""

    x: np.ndarray
    x_min: float
    x_max: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if not self.x_min < self.x_max:
            raise ConfigError("x_min must be below x_max")
        if np.any(self.x < self.x_min - 1e-12) or np.any(self.x > self.x_max + 1e-12):
            raise DomainError("barring level outside [x_min, x_max]")

    @classmethod
    def from_probabilities(cls, d: ArrayLike, d_min: float, d_max: float) -> "BarringPolicy":
        x_min, x_max = barring_bounds(d_min, d_max)
        return cls(np.clip(to_level(d), x_min, x_max), x_min, x_max)

    @property
    def d(self) -> np.ndarray:
        return to_probability(self.x)


@dataclass
class AccessState:
    """Per-queue access quantities of one policy"""

    p_idle: np.ndarray       # (N, K)
    attempt: np.ndarray      # P_a, (N, K)
    activation: np.ndarray   # D_n, (N,)
    success: np.ndarray      # F_s, (N, K)


# ---------------------------------------------------------------------------
# Access probabilities
# ---------------------------------------------------------------------------

def idle_prob_approx(theta_star: ArrayLike, mean_bits: ArrayLike) -> ArrayLike:
    """P_idle ~ theta* L_bar, clamped to [0, 1]."""
    value = np.clip(np.asarray(theta_star, dtype=float) * np.asarray(mean_bits, dtype=float), 0.0, 1.0)
    return float(value) if np.ndim(value) == 0 else value


def attempt_prob(d: float, idle_higher: Sequence[float], idle_self: float) -> float:
    """P_a = d * prod_{j<k} P_idle^j * (1 - P_idle^k)."""
    values = [d, idle_self, *idle_higher]
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise DomainError("attempt_prob inputs must lie in [0, 1]")
    return float(d * np.prod(np.asarray(idle_higher, dtype=float)) * (1.0 - idle_self))


def success_prob(attempt: float, others_activation: Sequence[float], preambles: int) -> float:
    """F_s = P_a * prod_{l != n} (1 - D_l / M)."""
    if preambles <= 0:
        raise ConfigError("at least one preamble is required")
    others = np.asarray(others_activation, dtype=float)
    if np.any(others / preambles > 1.0):
        raise DomainError("activation exceeds the preamble count")
    return float(attempt * np.prod(1.0 - others / preambles))


def priority_weights(p_idle: np.ndarray) -> np.ndarray:
    """w_{n,k} = prod_{j<k} P_idle^{n,j} * (1 - P_idle^{n,k}) for an (N, K) matrix."""
    p_idle = np.asarray(p_idle, dtype=float)
    higher = np.cumprod(np.concatenate([np.ones_like(p_idle[..., :1]), p_idle[..., :-1]], axis=-1), axis=-1)
    return higher * (1.0 - p_idle)


def contention_factor(activation: np.ndarray, preambles: int) -> np.ndarray:
    """
    prod_{l != n} (1 - D_l / M) for every device n

    Exclusive products along the last axis (prefix * suffix), so leading
    batch axes are allowed and a zero factor does not poison the others.
    """
    if preambles <= 0:
        raise ConfigError("at least one preamble is required")
    free = 1.0 - np.asarray(activation, dtype=float) / preambles
    if np.any(free < -1e-12):
        raise DomainError("activation exceeds the preamble count")
    free = np.clip(free, 0.0, 1.0)
    ones = np.ones_like(free[..., :1])
    prefix = np.cumprod(np.concatenate([ones, free[..., :-1]], axis=-1), axis=-1)
    reversed_free = np.flip(free, axis=-1)
    suffix = np.flip(np.cumprod(np.concatenate([ones, reversed_free[..., :-1]], axis=-1), axis=-1), axis=-1)
    return prefix * suffix


# ---------------------------------------------------------------------------
# Fading expectation and effective capacity
# ---------------------------------------------------------------------------

def fading_complement(theta: ArrayLike, symbols: ArrayLike, eps: ArrayLike, snr_mean: ArrayLike,
                      fading: str = "rayleigh", order: int = GAUSS_LAGUERRE_ORDER) -> ArrayLike:
    """
    1 - E_H[exp(-theta r S)] computed without cancellation

    Args:
        theta: QoS exponent (>= 0)
        symbols: Blocklength S
        eps: PER target
        snr_mean: Average SNR; the instantaneous SNR is snr_mean * |H|^2
        fading: ``"rayleigh"`` (64-node Gauss-Laguerre) or ``"none"``
        order: Quadrature order

    Returns:
        Value in [0, 1), broadcast over the inputs
    """
    theta = np.asarray(theta, dtype=float)
    symbols = np.asarray(symbols, dtype=float)
    snr_mean = np.asarray(snr_mean, dtype=float)
    if np.any(theta < 0.0):
        raise DomainError("theta must be non-negative")
    if np.any(symbols < 1.0) or np.any(snr_mean < 0.0):
        raise DomainError("invalid blocklength or SNR")
    q = q_inv_array(eps)

    if fading == "none":
        rate = rate_from_penalty(snr_mean, symbols, q)
        value = -np.expm1(-theta * rate * symbols)
    elif fading == "rayleigh":
        nodes, weights = laguerre_rule(order)
        rate = rate_from_penalty(snr_mean[..., None] * nodes, symbols[..., None], np.asarray(q)[..., None])
        value = -np.expm1(-theta[..., None] * rate * symbols[..., None]) @ weights
    else:
        raise ConfigError(f"unknown fading law: {fading}")
    value = np.clip(value, 0.0, 1.0)
    return float(value) if np.ndim(value) == 0 else value


def fading_expectation(theta: ArrayLike, symbols: ArrayLike, eps: ArrayLike, snr_mean: ArrayLike,
                       fading: str = "rayleigh", order: int = GAUSS_LAGUERRE_ORDER) -> ArrayLike:
    """E_H[exp(-theta r S)] over |H|^2 ~ Exp(1); in (0, 1]."""
    value = 1.0 - np.asarray(fading_complement(theta, symbols, eps, snr_mean, fading, order))
    return float(value) if np.ndim(value) == 0 else value


def phi(fading_exp: float, eps: float, idle_higher: Sequence[float], idle_self: float,
        others_activation: Sequence[float], preambles: int) -> float:
    """
    Access profit factor of one queue

    (1 - E)(1 - eps) * prod_{j<k} P_idle^j (1 - P_idle^k) * prod_{l != n}(1 - D_l / M)
    """
    weight = attempt_prob(1.0, idle_higher, idle_self)
    return float((1.0 - fading_exp) * (1.0 - eps) * success_prob(weight, others_activation, preambles))


def effective_capacity(d: ArrayLike, phi_value: ArrayLike, theta: ArrayLike, t_ec: float) -> ArrayLike:
    """C = -log(1 - d Phi) / (theta T_EC)"""
    product = np.asarray(d, dtype=float) * np.asarray(phi_value, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0):
        raise DomainError("theta must be positive")
    if np.any(product >= 1.0):
        raise NumericError("d * Phi must stay below 1")
    value = -np.log1p(-product) / (theta * t_ec)
    return float(value) if np.ndim(value) == 0 else value


def capacity_from_success(success: ArrayLike, eps: ArrayLike, fading_exp: ArrayLike,
                          theta: ArrayLike, t_ec: float) -> ArrayLike:
    """
    Effective capacity written through the success probability

    C = -log((1 - (1-eps) F_s) + (1-eps) F_s E[e^{-theta r S}]) / (theta T_EC)
    """
    delivered = (1.0 - np.asarray(eps, dtype=float)) * np.asarray(success, dtype=float)
    value = -np.log1p(-delivered * (1.0 - np.asarray(fading_exp, dtype=float))) / (np.asarray(theta) * t_ec)
    return float(value) if np.ndim(value) == 0 else value


def queue_violation_prob(theta_star: float, q_th: float, p_idle: float) -> float:
    """P(Q > Q_th) ~ (1 - P_idle) exp(-theta* Q_th), clamped to 1."""
    if theta_star <= 0.0:
        raise DomainError("theta* must be positive")
    if q_th < 0.0:
        raise DomainError("queue threshold must be non-negative")
    if q_th == 0.0:
        return float(min(1.0, 1.0 - p_idle))
    return float(min(1.0, (1.0 - p_idle) * math.exp(-theta_star * q_th)))


def delay_violation_prob(theta_star: float, bandwidth: float, d_max: float, p_idle: float) -> float:
    """P(D > D_max) ~ (1 - P_idle) exp(-theta* A(theta*) D_max)."""
    if theta_star <= 0.0 or bandwidth < 0.0 or d_max < 0.0:
        raise DomainError("delay violation needs theta* > 0, A >= 0, D_max >= 0")
    if d_max == 0.0:
        return float(min(1.0, 1.0 - p_idle))
    return float(min(1.0, (1.0 - p_idle) * math.exp(-theta_star * bandwidth * d_max)))


# ---------------------------------------------------------------------------
# Scenario-level model
# ---------------------------------------------------------------------------

@dataclass
class QosModel:
    """
    Vectorized access/capacity model of N devices with K priority queues

    Everything that does not depend on the barring policy is computed once:
    priority weights w_{n,k}, the fading complement 1 - E and the SNRs.
    Policy-dependent methods accept x with optional leading batch axes,
    i.e. shape (..., N, K).
    """

    theta: np.ndarray
    eps: np.ndarray
    mean_bits: np.ndarray
    arrival_prob: np.ndarray
    power_w: np.ndarray
    gain_to_noise: np.ndarray
    symbols: np.ndarray
    preambles: int
    slot_s: float
    superframe_s: float
    x_min: float
    x_max: float
    t_ec: Optional[float] = None
    p_idle: Optional[np.ndarray] = None
    fading: str = "rayleigh"
    quadrature_order: int = GAUSS_LAGUERRE_ORDER
    weights: np.ndarray = field(init=False, repr=False)
    complement: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.gain_to_noise = np.atleast_1d(np.asarray(self.gain_to_noise, dtype=float))
        n = self.gain_to_noise.size
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        k = self.theta.shape[-1]
        shape = (n, k)
        self.theta = np.broadcast_to(self.theta, shape).copy()
        self.eps = np.broadcast_to(np.asarray(self.eps, dtype=float), shape).copy()
        self.mean_bits = np.broadcast_to(np.asarray(self.mean_bits, dtype=float), shape).copy()
        self.power_w = np.broadcast_to(np.asarray(self.power_w, dtype=float), shape).copy()
        self.arrival_prob = np.broadcast_to(np.asarray(self.arrival_prob, dtype=float), (n,)).copy()
        self.symbols = np.broadcast_to(np.asarray(self.symbols, dtype=float), (n,)).copy()

        if self.preambles <= 0:
            raise ConfigError("at least one preamble is required")
        if not self.x_min < self.x_max:
            raise ConfigError("x_min must be below x_max")
        if self.t_ec is None:
            self.t_ec = self.superframe_s
        if self.t_ec <= 0.0 or self.slot_s <= 0.0:
            raise ConfigError("time constants must be positive")
        if np.any(self.theta <= 0.0) or np.any(self.theta * self.mean_bits >= 1.0):
            raise DomainError("QoS exponents need 0 < theta * L_bar < 1")

        if self.p_idle is None:
            self.p_idle = idle_prob_approx(self.theta, self.mean_bits)
        self.p_idle = np.broadcast_to(np.asarray(self.p_idle, dtype=float), shape).copy()
        if np.any((self.p_idle < 0.0) | (self.p_idle > 1.0)):
            raise DomainError("idle probabilities must lie in [0, 1]")

        self.weights = priority_weights(self.p_idle)
        self.complement = np.asarray(fading_complement(
            self.theta, self.symbols[:, None], self.eps, self.snr_mean,
            self.fading, self.quadrature_order))
        logger.debug("QoS model ready: N=%d K=%d M=%d", n, k, self.preambles)

    # -- shape -------------------------------------------------------------

    @property
    def n_devices(self) -> int:
        return int(self.theta.shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.theta.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_devices, self.n_classes

    @property
    def snr_mean(self) -> np.ndarray:
        return self.power_w * self.gain_to_noise[:, None]

    def with_idle(self, p_idle: np.ndarray) -> "QosModel":
        """Copy of the model using explicit idle probabilities."""
        return replace(self, p_idle=np.asarray(p_idle, dtype=float))

    def with_power(self, power_w: ArrayLike) -> "QosModel":
        return replace(self, power_w=np.asarray(power_w, dtype=float))

    def full(self, value: float) -> np.ndarray:
        """Policy with every coordinate equal to ``value``."""
        return np.full(self.shape, float(value))

    # -- policy dependent quantities ----------------------------------------

    def activation(self, x: np.ndarray) -> np.ndarray:
        """D_n = sum_k d_{n,k} w_{n,k}, shape (..., N)."""
        return np.sum(to_probability(x) * self.weights, axis=-1)

    def contention(self, x: np.ndarray) -> np.ndarray:
        return contention_factor(self.activation(x), self.preambles)

    def phi(self, x: np.ndarray) -> np.ndarray:
        """Phi_{n,k}(x_{-n}), shape (..., N, K)."""
        return self.complement * (1.0 - self.eps) * self.weights * self.contention(x)[..., None]

    def success_prob(self, x: np.ndarray) -> np.ndarray:
        """F_s = d w prod_{l != n}(1 - D_l / M)."""
        return to_probability(x) * self.weights * self.contention(x)[..., None]

    def capacity(self, x: np.ndarray) -> np.ndarray:
        """Effective capacity per queue, shape (..., N, K)."""
        return effective_capacity(to_probability(x), self.phi(x), self.theta, self.t_ec)

    def total_capacity(self, x: np.ndarray) -> Union[float, np.ndarray]:
        total = np.sum(self.capacity(x), axis=(-2, -1))
        return float(total) if np.ndim(total) == 0 else total

    def access_state(self, x: np.ndarray) -> AccessState:
        d = to_probability(x)
        attempt = d * self.weights
        return AccessState(p_idle=self.p_idle.copy(), attempt=attempt,
                           activation=np.sum(attempt, axis=-1), success=self.success_prob(x))

    def bandwidth(self, theta: Optional[np.ndarray] = None) -> np.ndarray:
        """Effective bandwidth A(theta) of every queue (default: its own theta)."""
        theta = self.theta if theta is None else theta
        return np.asarray(effective_bandwidth(theta, self.arrival_prob[:, None], self.mean_bits, self.slot_s))

    # -- single-queue views used by the solvers -----------------------------

    def queue_capacity(self, x: np.ndarray, n: int, k: int, theta: Optional[ArrayLike] = None,
                       power_w: Optional[float] = None, backlogged: bool = False) -> ArrayLike:
        """
        Effective capacity of queue (n, k) with θ and power optionally replaced

        With ``backlogged`` the queue's own idle factor is dropped, which is
        the service process seen by a queue that always has data.
        """
        theta = self.theta[n, k] if theta is None else np.asarray(theta, dtype=float)
        power = self.power_w[n, k] if power_w is None else float(power_w)
        higher = float(np.prod(self.p_idle[n, :k]))
        weight = higher if backlogged else higher * (1.0 - self.p_idle[n, k])
        access = float(to_probability(x[n, k])) * weight * float(self.contention(x)[n])
        comp = fading_complement(theta, self.symbols[n], self.eps[n, k],
                                 power * self.gain_to_noise[n], self.fading, self.quadrature_order)
        value = -np.log1p(-access * (1.0 - self.eps[n, k]) * np.asarray(comp)) / (theta * self.t_ec)
        return float(value) if np.ndim(value) == 0 else value

    def queue_bandwidth(self, n: int, k: int, theta: Optional[ArrayLike] = None) -> ArrayLike:
        theta = self.theta[n, k] if theta is None else theta
        return effective_bandwidth(theta, self.arrival_prob[n], self.mean_bits[n, k], self.slot_s)


# ---------------------------------------------------------------------------
# Composition solvers
# ---------------------------------------------------------------------------

@dataclass
class PowerSolution:
    """Result of solve_power"""

    power_w: float
    slack: bool
    capacity: float
    target: float


def solve_power(model: QosModel, x: np.ndarray, n: int, k: int,
                bracket: Tuple[float, float] = POWER_BRACKET_W) -> PowerSolution:
    """
    Minimum transmit power meeting C(θ) = A(θ) for queue (n, k)

    Bisection over log10(P) relying on C being increasing in P.

    Args:
        model: QoS model of the scenario
        x: Barring policy (N, K)
        n: Device index
        k: Class index
        bracket: Admissible power range (W)

    Returns:
        PowerSolution; ``slack`` is set when even P_min over-satisfies the target
    """
    p_min, p_max = bracket
    target = float(model.queue_bandwidth(n, k))

    def gap(log_power: float) -> float:
        return model.queue_capacity(x, n, k, power_w=10.0 ** log_power) - target

    lo, hi = math.log10(p_min), math.log10(p_max)
    if gap(hi) < 0.0:
        raise InfeasibleQoSError(
            "effective capacity at maximum power is below the effective bandwidth",
            device=n, queue=k,
            detail=f"C(P_max)={gap(hi) + target:.6g} < A={target:.6g}")
    if gap(lo) >= 0.0:
        return PowerSolution(p_min, True, gap(lo) + target, target)

    root = optimize.bisect(gap, lo, hi, xtol=1e-14, maxiter=200)
    power = 10.0 ** root
    capacity = model.queue_capacity(x, n, k, power_w=power)
    if target > 0.0 and abs(capacity - target) > SOLVER_RTOL * target:
        logger.warning("solve_power(%d, %d): replug error %.3g", n, k, abs(capacity - target) / target)
    logger.debug("solve_power(%d, %d) -> %.6g W", n, k, power)
    return PowerSolution(power, False, capacity, target)


def solve_qos_exponent(model: QosModel, x: np.ndarray, n: int, k: int,
                       bracket: Optional[Tuple[float, float]] = None) -> float:
    """
    QoS exponent θ* where A(θ*) = C(θ*) for a backlogged queue (n, k)

    Raises:
        NoCrossingError: A - C keeps one sign on the bracket
    """
    if bracket is None:
        bracket = (THETA_FLOOR, 0.99 / model.mean_bits[n, k])
    lo, hi = bracket

    def gap(theta: float) -> float:
        return float(model.queue_bandwidth(n, k, theta)) - model.queue_capacity(x, n, k, theta=theta, backlogged=True)

    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo == 0.0:
        return float(lo)
    if g_lo * g_hi > 0.0:
        state = "stable" if g_hi < 0.0 else "unstable"
        raise NoCrossingError(f"queue ({n}, {k}) is unconditionally {state} on the bracket",
                              detail=f"theta in [{lo:.3g}, {hi:.3g}]")
    theta_star = optimize.bisect(gap, lo, hi, xtol=1e-20, rtol=1e-13, maxiter=200)
    logger.debug("solve_qos_exponent(%d, %d) -> %.6g", n, k, theta_star)
    return float(theta_star)


def qos_report(model: QosModel, x: np.ndarray, n: int, k: int, q_th: float, d_max: float) -> Dict[str, Any]:
    """
    QoS figures of one queue under policy x

    Returns:
        Dict with bandwidth/capacity at the configured θ, θ*, the violation
        probabilities and the minimum power; failures are reported in-band
    """
    row: Dict[str, Any] = {
        "n": n, "k": k,
        "theta": float(model.theta[n, k]),
        "offered_load": float(mean_arrival_rate(model.arrival_prob[n], model.mean_bits[n, k], model.slot_s)),
        "bandwidth": float(model.queue_bandwidth(n, k)),
        "capacity": model.queue_capacity(x, n, k),
        "theta_star": math.nan,
        "queue_violation": math.nan,
        "delay_violation": math.nan,
        "min_power_w": math.nan,
        "power_slack": False,
        "feasible": True,
        "status": "ok",
    }
    try:
        theta_star = solve_qos_exponent(model, x, n, k)
        p_idle = idle_prob_approx(theta_star, model.mean_bits[n, k])
        row["theta_star"] = theta_star
        row["queue_violation"] = queue_violation_prob(theta_star, q_th, p_idle)
        row["delay_violation"] = delay_violation_prob(
            theta_star, float(model.queue_bandwidth(n, k, theta_star)), d_max, p_idle)
    except NoCrossingError as exc:
        row["status"] = "no-crossing"
        logger.info("%s", exc)
    try:
        power = solve_power(model, x, n, k)
        row["min_power_w"] = power.power_w
        row["power_slack"] = power.slack
    except InfeasibleQoSError as exc:
        row["feasible"] = False
        row["status"] = "infeasible"
        logger.info("%s", exc)
    return row
