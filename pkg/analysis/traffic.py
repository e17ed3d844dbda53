"""
Arrival-process model: Bernoulli slots carrying exponential packet sizes
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from runtime.errors import DomainError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class QueueProfile:
    """Traffic and QoS description of one (device, class) queue"""

    arrival_prob: float          # p_n, per slot
    mean_bits: float             # L_bar
    theta: float                 # QoS exponent, 1/bit
    eps: float                   # PER target
    delay_bound_s: float = math.inf
    queue_threshold_bits: float = math.inf
    power_w: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise DomainError("arrival probability must lie in [0, 1]",
                              detail=f"p={self.arrival_prob}")
        if self.mean_bits <= 0.0:
            raise DomainError("mean packet size must be positive")
        if self.theta <= 0.0 or self.theta * self.mean_bits >= 1.0:
            raise DomainError("QoS exponent needs 0 < theta * L_bar < 1",
                              detail=f"theta={self.theta}, L_bar={self.mean_bits}")
        if not 0.0 < self.eps < 1.0:
            raise DomainError("PER target must lie in (0, 1)")
        if self.power_w <= 0.0:
            raise DomainError("transmit power must be positive")


def mean_arrival_rate(p: ArrayLike, mean_bits: ArrayLike, slot_s: float) -> ArrayLike:
    """Average offered load p * L_bar / T_d in bit/s."""
    return np.asarray(p, dtype=float) * np.asarray(mean_bits, dtype=float) / slot_s


def effective_bandwidth(theta: ArrayLike, p: ArrayLike, mean_bits: ArrayLike,
                        slot_s: float) -> ArrayLike:
    """
    Effective bandwidth of the Bernoulli/exponential source

    A(theta) = log(p / (1 - theta L) + 1 - p) / (theta T_d)

    Args:
        theta: QoS exponent (1/bit), theta * L_bar < 1
        p: Per-slot arrival probability
        mean_bits: Mean packet size L_bar
        slot_s: Slot duration T_d

    Returns:
        Effective bandwidth in bit/s
    """
    theta = np.asarray(theta, dtype=float)
    p = np.asarray(p, dtype=float)
    mean_bits = np.asarray(mean_bits, dtype=float)
    if slot_s <= 0.0:
        raise DomainError("slot duration must be positive")
    if np.any(theta <= 0.0):
        raise DomainError("theta must be positive")
    load = theta * mean_bits
    if np.any(load >= 1.0):
        raise DomainError("moment generating function diverges for theta * L_bar >= 1",
                          detail=f"max theta*L={np.max(load):.4g}")
    value = np.log1p(p * load / (1.0 - load)) / (theta * slot_s)
    return float(value) if np.ndim(value) == 0 else value


def sample_arrival(rng: np.random.Generator, p: ArrayLike, mean_bits: ArrayLike,
                   size: Optional[Union[int, tuple]] = None) -> ArrayLike:
    """
    Bits arriving in one slot: 0 with probability 1 - p, else Exp(L_bar)

    Args:
        rng: Random generator
        p: Arrival probability (broadcastable)
        mean_bits: Mean packet size (broadcastable)
        size: Output shape; defaults to the broadcast shape of p and mean_bits

    Returns:
        Arrived bits per slot
    """
    if size is None:
        size = np.broadcast(np.asarray(p), np.asarray(mean_bits)).shape or None
    arrived = rng.random(size) < p
    bits = rng.exponential(1.0, size) * mean_bits
    return np.where(arrived, bits, 0.0)
