"""
Radio-layer math: path loss, Gaussian Q-function pair, finite-blocklength rate
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import special, stats

from runtime.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Newton/bisection bracket for q_inv; Q(40) underflows to 0
_Q_INV_BRACKET = 40.0


def dbm_to_watts(dbm: ArrayLike) -> ArrayLike:
    """Convert dBm (or dBm/Hz) to watts (or W/Hz)."""
    return np.power(10.0, (np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def q_func(x: ArrayLike) -> ArrayLike:
    """
    Gaussian tail probability Q(x) = P(Z > x)

    Args:
        x: Scalar or array argument

    Returns:
        Probability in [0, 1], same shape as ``x``
    """
    value = 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    value = np.maximum(value, 0.0)
    return float(value) if np.ndim(value) == 0 else value


def _normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=1024)
def q_inv(p: float) -> float:
    """
    Inverse of the Gaussian Q-function

    Newton iterations on q_func started from the normal quantile, with a
    bisection fallback whenever a step leaves the current bracket.

    Args:
        p: Tail probability, 0 < p < 1

    Returns:
        x such that q_func(x) == p to relative error 1e-10
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError("q_inv needs 0 < p < 1", detail=f"p={p!r}")
    if p == 0.5:
        return 0.0

    lo, hi = -_Q_INV_BRACKET, _Q_INV_BRACKET
    x = float(np.clip(stats.norm.isf(p), lo, hi))
    for _ in range(100):
        err = q_func(x) - p
        if abs(err) <= 1e-14 * p:
            break
        # Q is decreasing: a positive error means x is too small
        if err > 0:
            lo = x
        else:
            hi = x
        density = _normal_pdf(x)
        candidate = x + err / density if density > 0.0 else math.nan
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if abs(candidate - x) <= 1e-15 * max(1.0, abs(x)):
            x = candidate
            break
        x = candidate
    return x


def path_loss_db(distance_m: ArrayLike) -> ArrayLike:
    """Large-scale path loss 60 + 37.6 log10(X), X in meters (X >= 1)."""
    distance = np.asarray(distance_m, dtype=float)
    if np.any(~np.isfinite(distance)) or np.any(distance < 1.0):
        raise DomainError("path loss needs distances of at least 1 m",
                          detail=f"min={np.min(distance)!r}")
    loss = 60.0 + 37.6 * np.log10(distance)
    return float(loss) if np.ndim(loss) == 0 else loss


def finite_blocklength_rate(snr: ArrayLike, symbols: ArrayLike, eps: ArrayLike) -> ArrayLike:
    """
    Normal-approximation achievable rate in bits per channel use

    r = log2(1 + snr) - sqrt(V / S) * Q^-1(eps) * log2(e), clamped at 0,
    with V = 1 - 1 / (1 + snr)^2.

    Args:
        snr: Linear SNR (>= 0), broadcastable
        symbols: Blocklength S (>= 1), broadcastable
        eps: Target block error probability in (0, 1), broadcastable

    Returns:
        Non-negative rate with the broadcast shape of the inputs
    """
    snr = np.asarray(snr, dtype=float)
    symbols = np.asarray(symbols, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(snr < 0.0):
        raise DomainError("snr must be non-negative")
    if np.any(symbols < 1.0):
        raise DomainError("blocklength must be at least one symbol")
    if np.any((eps <= 0.0) | (eps >= 1.0)):
        raise DomainError("eps must lie in (0, 1)")

    rate = rate_from_penalty(snr, symbols, q_inv_array(eps))
    return float(rate) if np.ndim(rate) == 0 else rate


def q_inv_array(eps: ArrayLike) -> np.ndarray:
    """Elementwise q_inv (cached per distinct value)."""
    eps = np.asarray(eps, dtype=float)
    if eps.ndim == 0:
        return np.asarray(q_inv(float(eps)))
    return np.vectorize(q_inv, otypes=[float])(eps)


def rate_from_penalty(snr: np.ndarray, symbols: np.ndarray, q: np.ndarray) -> np.ndarray:
    """finite_blocklength_rate with Q^-1(eps) precomputed; no argument checks."""
    # 1 - 1/(1+snr)^2 written without cancellation
    dispersion = snr * (2.0 + snr) / np.square(1.0 + snr)
    rate = (np.log1p(snr) - np.sqrt(dispersion / symbols) * q) / math.log(2.0)
    return np.maximum(rate, 0.0)


@dataclass(frozen=True)
class BlocklengthSpec:
    """Data-phase resources that fix the blocklength S"""

    frame_s: float
    symbol_s: float
    bandwidth_hz: float
    symbol_bandwidth_hz: float


def symbols_per_frame(spec: BlocklengthSpec) -> int:
    """S = round((T_f / a) * (B / c)), at least one symbol."""
    values = (spec.frame_s, spec.symbol_s, spec.bandwidth_hz, spec.symbol_bandwidth_hz)
    if any(not math.isfinite(v) or v <= 0.0 for v in values):
        raise ConfigError("blocklength parameters must be positive", detail=repr(spec))
    exact = (spec.frame_s / spec.symbol_s) * (spec.bandwidth_hz / spec.symbol_bandwidth_hz)
    symbols = int(math.floor(exact + 0.5))
    if symbols < 1:
        raise ConfigError("data phase shorter than one symbol", detail=f"S={exact:.3g}")
    return symbols


@dataclass
class ChannelModel:
    """
    Per-device large-scale gains plus the small-scale fading law

    ``fading`` is ``"rayleigh"`` (|H|^2 ~ Exp(1), block fading per
    superframe) or ``"none"`` (|H|^2 pinned to 1).
    """

    distances_m: np.ndarray
    noise_density_dbm_hz: float
    bandwidth_hz: float
    fading: str = "rayleigh"
    gains: np.ndarray = field(init=False)
    noise_power_w: float = field(init=False)

    def __post_init__(self):
        self.distances_m = np.asarray(self.distances_m, dtype=float)
        if self.fading not in ("rayleigh", "none"):
            raise ConfigError(f"unknown fading law: {self.fading}")
        if self.bandwidth_hz <= 0.0:
            raise ConfigError("bandwidth must be positive")
        self.gains = np.power(10.0, -np.atleast_1d(path_loss_db(self.distances_m)) / 10.0)
        self.noise_power_w = float(dbm_to_watts(self.noise_density_dbm_hz)) * self.bandwidth_hz
        if self.noise_power_w <= 0.0:
            raise ConfigError("noise power must be positive")

    @property
    def n_devices(self) -> int:
        return int(self.distances_m.size)

    @property
    def gain_to_noise(self) -> np.ndarray:
        """G_n / N_0 per device (1/W)."""
        return self.gains / self.noise_power_w

    def mean_snr(self, power_w: ArrayLike) -> np.ndarray:
        """
        Average SNR P * G_n / N_0

        Args:
            power_w: Transmit power, scalar, per class (K,) or per queue (N, K)

        Returns:
            Array of shape (N, K) (or (N,) for a scalar power)
        """
        power = np.asarray(power_w, dtype=float)
        if power.ndim == 0:
            return power * self.gain_to_noise
        if power.ndim == 1:
            return self.gain_to_noise[:, None] * power[None, :]
        return self.gain_to_noise[:, None] * power
