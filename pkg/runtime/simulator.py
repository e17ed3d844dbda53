"""
Superframe simulator: slotted arrivals into K priority FIFO queues per
device, priority-gated barring, preamble contention and the OFDMA data phase
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from analysis.phy import q_inv_array, rate_from_penalty
from analysis.qos import ArrayLike, QosModel, to_probability
from analysis.traffic import sample_arrival
from runtime.errors import ConfigError

logger = logging.getLogger(__name__)

STREAM_NAMES = ("placement", "arrivals", "acb", "preamble", "per", "fading", "occupancy")
SIM_MODES = ("queued", "saturated", "occupancy")
# child indices past the named streams
PILOT_STREAM = len(STREAM_NAMES)
ACK_STREAM = PILOT_STREAM + 1
START_STREAM = ACK_STREAM + 1

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]


def child_seed(seed: SeedLike, index: int) -> np.random.SeedSequence:
    """The ``index``-th child of ``seed``; does not advance a passed SeedSequence."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + (index,),
                                  pool_size=root.pool_size)


def spawn_streams(seed: SeedLike) -> Dict[str, np.random.Generator]:
    """Independent named generators derived from one seed; same seed, same streams."""
    return {name: np.random.default_rng(child_seed(seed, i)) for i, name in enumerate(STREAM_NAMES)}


@dataclass(frozen=True)
class SimSettings:
    """Horizon, warm-up and bookkeeping resolution of a simulation run"""

    horizon: int = 20000
    warmup_fraction: float = 0.1
    mode: str = "queued"
    ema_weight: float = 0.01
    queue_bin_bits: float = 100.0
    queue_bins: int = 400
    delay_bin_s: float = 4e-3
    delay_bins: int = 250
    replications: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("simulation horizon must be at least one superframe")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warm-up fraction must lie in [0, 1)")
        if self.mode not in SIM_MODES:
            raise ConfigError(f"unknown simulation mode: {self.mode}")
        if not 0.0 < self.ema_weight <= 1.0:
            raise ConfigError("EMA weight must lie in (0, 1]")
        if self.queue_bin_bits <= 0.0 or self.delay_bin_s <= 0.0 or self.queue_bins < 1 or self.delay_bins < 1:
            raise ConfigError("histogram bins must be positive")
        if self.replications < 1:
            raise ConfigError("at least one replication is required")

    @property
    def warmup(self) -> int:
        return int(math.floor(self.horizon * self.warmup_fraction))


def slots_per_superframe(model: QosModel) -> int:
    ratio = model.superframe_s / model.slot_s
    slots = int(round(ratio))
    if slots < 1 or abs(ratio - slots) > 1e-9 * ratio:
        raise ConfigError("superframe must be an integer multiple of the arrival slot",
                          detail=f"T_u/T_d={ratio:.6g}")
    return slots


class SimState:
    """Mutable state of one replication: queues, clocks and RNG streams"""

    def __init__(self, model: QosModel, settings: SimSettings, seed: SeedLike):
        self.model = model
        self.settings = settings
        self.slots = slots_per_superframe(model)
        self.streams = spawn_streams(seed)
        n, k = model.shape
        # packet = [remaining bits, arrival time]
        self.queues: List[List[Deque[List[float]]]] = [[deque() for _ in range(k)] for _ in range(n)]
        self.backlog = np.zeros((n, k))
        self.arrived_total = np.zeros((n, k))
        self.served_total = np.zeros((n, k))
        self.fading = np.ones(n)
        self.superframe = 0
        self._q = q_inv_array(model.eps)

    @property
    def slot(self) -> int:
        return self.superframe * self.slots

    @property
    def now(self) -> float:
        return self.superframe * self.model.superframe_s

    def nonempty(self) -> np.ndarray:
        return np.array([[len(queue) > 0 for queue in device] for device in self.queues], dtype=bool)


@dataclass
class FrameEvents:
    """What happened to every queue in one superframe"""

    backlogged: np.ndarray   # queue held data when barring was checked
    eligible: np.ndarray     # queue was the device's gating queue
    attempted: np.ndarray    # passed the barring check
    accessed: np.ndarray     # sole user of its preamble
    collided: np.ndarray
    delivered: np.ndarray    # data decoded, ACK sent
    arrived_bits: np.ndarray
    served_bits: np.ndarray
    delays: List[Tuple[int, int, float]] = field(default_factory=list)


def resolve_contention(active: np.ndarray, preambles: np.ndarray, n_preambles: int) -> np.ndarray:
    """
    Devices whose preamble was chosen by nobody else

    Args:
        active: (N,) bool, device contends this superframe
        preambles: (N,) preamble index of every device (ignored when inactive)
        n_preambles: M

    Returns:
        (N,) bool success mask
    """
    active = np.asarray(active, dtype=bool)
    preambles = np.asarray(preambles)
    counts = np.bincount(preambles[active], minlength=n_preambles)
    return active & (counts[preambles] == 1)


def _drain(queue: Deque[List[float]], budget: float, departure: float) -> Tuple[float, List[float]]:
    """Serve up to ``budget`` bits FIFO; returns served bits and delays of completed packets."""
    served = 0.0
    delays = []
    while queue and budget > 0.0:
        packet = queue[0]
        take = min(packet[0], budget)
        packet[0] -= take
        budget -= take
        served += take
        if packet[0] <= 0.0:
            queue.popleft()
            delays.append(departure - packet[1])
    return served, delays


def step_superframe(state: SimState, barring: np.ndarray) -> FrameEvents:
    """
    Advance one superframe

    1. arrivals in each of the T_u / T_d slots;
    2. per device, the lowest-index nonempty queue passes barring with prob d;
    3. uniform preamble choice, a preamble picked once succeeds;
    4. successes transmit at the finite-blocklength rate of this superframe's
       fading draw and, unless the block is lost (prob eps), drain up to r S bits.

    Args:
        state: Replication state, updated in place
        barring: Barring probabilities d, shape (N, K)

    Returns:
        FrameEvents of the superframe
    """
    model = state.model
    n, k = model.shape
    rows = np.arange(n)
    streams = state.streams
    mode = state.settings.mode

    arrived = np.zeros((n, k))
    if mode == "queued":
        bits = sample_arrival(streams["arrivals"], model.arrival_prob[None, :, None],
                              model.mean_bits[None, :, :], size=(state.slots, n, k))
        for s, dev, cls in zip(*np.nonzero(bits)):
            size = float(bits[s, dev, cls])
            state.queues[dev][cls].append([size, (state.slot + s) * model.slot_s])
            arrived[dev, cls] += size
        state.backlog += arrived
        state.arrived_total += arrived
        nonempty = state.nonempty()
    elif mode == "saturated":
        nonempty = np.ones((n, k), dtype=bool)
    else:
        nonempty = streams["occupancy"].random((n, k)) >= model.p_idle

    has_data = nonempty.any(axis=1)
    gate = np.argmax(nonempty, axis=1)
    eligible = np.zeros((n, k), dtype=bool)
    eligible[rows[has_data], gate[has_data]] = True

    coin = streams["acb"].random(n)
    active = has_data & (coin < barring[rows, gate])
    choice = streams["preamble"].integers(model.preambles, size=n)
    won = resolve_contention(active, choice, model.preambles)

    state.fading = (streams["fading"].exponential(1.0, n) if model.fading == "rayleigh" else np.ones(n))
    decoded = streams["per"].random(n) >= model.eps[rows, gate]
    delivered_dev = won & decoded

    attempted = np.zeros((n, k), dtype=bool)
    accessed = np.zeros((n, k), dtype=bool)
    delivered = np.zeros((n, k), dtype=bool)
    attempted[rows[active], gate[active]] = True
    accessed[rows[won], gate[won]] = True
    delivered[rows[delivered_dev], gate[delivered_dev]] = True

    served = np.zeros((n, k))
    delays: List[Tuple[int, int, float]] = []
    if np.any(delivered_dev):
        snr = model.snr_mean[rows, gate] * state.fading
        budget = rate_from_penalty(snr, model.symbols, state._q[rows, gate]) * model.symbols
        departure = state.now + model.superframe_s
        for dev in np.nonzero(delivered_dev)[0]:
            cls = int(gate[dev])
            if mode == "queued":
                amount, done = _drain(state.queues[dev][cls], float(budget[dev]), departure)
                delays.extend((int(dev), cls, delay) for delay in done)
            else:
                amount = float(budget[dev])
            served[dev, cls] = amount

    if mode == "queued":
        state.backlog -= served
        state.served_total += served
        empty = ~state.nonempty()
        state.backlog[empty] = 0.0
    state.superframe += 1

    return FrameEvents(backlogged=nonempty, eligible=eligible, attempted=attempted, accessed=accessed,
                       collided=attempted & ~accessed, delivered=delivered,
                       arrived_bits=arrived, served_bits=served, delays=delays)


@dataclass
class SimStats:
    """Post-warm-up counters of one simulation run"""

    frames: int
    attempts: np.ndarray
    successes: np.ndarray
    collisions: np.ndarray
    deliveries: np.ndarray
    idle_frames: np.ndarray
    served_bits: np.ndarray
    arrived_bits: np.ndarray
    queue_hist: np.ndarray
    queue_bin_bits: float
    delay_hist: np.ndarray
    delay_bin_s: float
    ack_ema: np.ndarray
    ack_observations: int = 0
    total_arrived: Optional[np.ndarray] = None
    total_served: Optional[np.ndarray] = None
    final_backlog: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, shape: Tuple[int, int], settings: SimSettings) -> "SimStats":
        zeros = lambda: np.zeros(shape, dtype=np.int64)
        return cls(frames=0, attempts=zeros(), successes=zeros(), collisions=zeros(),
                   deliveries=zeros(), idle_frames=zeros(),
                   served_bits=np.zeros(shape), arrived_bits=np.zeros(shape),
                   queue_hist=np.zeros(shape + (settings.queue_bins + 1,), dtype=np.int64),
                   queue_bin_bits=settings.queue_bin_bits,
                   delay_hist=np.zeros(shape + (settings.delay_bins + 1,), dtype=np.int64),
                   delay_bin_s=settings.delay_bin_s,
                   ack_ema=np.full(shape, np.nan))

    def record(self, events: FrameEvents, state: SimState, weight: float):
        n, k = self.attempts.shape
        self.frames += 1
        self.attempts += events.attempted
        self.successes += events.accessed
        self.collisions += events.collided
        self.deliveries += events.delivered
        self.served_bits += events.served_bits
        self.arrived_bits += events.arrived_bits

        if state.settings.mode == "queued":
            idle = state.backlog <= 0.0
            bins = np.minimum((state.backlog / self.queue_bin_bits).astype(np.int64), self.queue_hist.shape[-1] - 1)
            dev, cls = np.indices((n, k))
            self.queue_hist[dev, cls, bins] += 1
        elif state.settings.mode == "occupancy":
            idle = ~events.backlogged
        else:
            idle = np.zeros((n, k), dtype=bool)
        self.idle_frames += idle

        last = self.delay_hist.shape[-1] - 1
        for dev, cls, delay in events.delays:
            self.delay_hist[dev, cls, min(int(delay / self.delay_bin_s), last)] += 1

        prior = self.ack_ema if self.ack_observations else None
        self.ack_ema = estimate_success_prob([events.delivered], weight, prior)
        self.ack_observations += 1

    # -- estimators ---------------------------------------------------------

    def success_freq(self) -> np.ndarray:
        """Empirical F_s per queue (successful accesses per superframe)."""
        return self.successes / max(self.frames, 1)

    def success_stderr(self) -> np.ndarray:
        f = self.success_freq()
        return np.sqrt(f * (1.0 - f) / max(self.frames, 1))

    def delivery_freq(self) -> np.ndarray:
        return self.deliveries / max(self.frames, 1)

    def idle_freq(self) -> np.ndarray:
        """Empirical P_idle: superframes ending with an empty queue."""
        return self.idle_frames / max(self.frames, 1)

    def queue_ccdf(self, n: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """(q, P(Q >= q)) at the histogram bin edges."""
        counts = self.queue_hist[n, k].astype(float)
        tail = np.cumsum(counts[::-1])[::-1] / max(counts.sum(), 1.0)
        edges = np.arange(counts.size) * self.queue_bin_bits
        return edges, tail

    def packets_completed(self) -> np.ndarray:
        return self.delay_hist.sum(axis=-1)

    def ack_estimate(self) -> Optional[np.ndarray]:
        """EMA of per-superframe ACK indicators, None before any observation."""
        return None if self.ack_observations == 0 else self.ack_ema.copy()


def run_simulation(model: QosModel, barring: np.ndarray, settings: SimSettings,
                   seed: SeedLike) -> SimStats:
    """
    Simulate ``settings.horizon`` superframes and aggregate after the warm-up

    Args:
        model: QoS model (radio, traffic and preamble parameters)
        barring: Barring probabilities d, shape (N, K)
        settings: Horizon, warm-up, mode and histogram settings
        seed: Seed of the replication

    Returns:
        SimStats, deterministic given the seed
    """
    barring = np.broadcast_to(np.asarray(barring, dtype=float), model.shape)
    if np.any((barring < 0.0) | (barring > 1.0)):
        raise ConfigError("barring probabilities must lie in [0, 1]")
    state = SimState(model, settings, seed)
    stats = SimStats.empty(model.shape, settings)
    warmup = settings.warmup
    for frame in range(settings.horizon):
        events = step_superframe(state, barring)
        if frame >= warmup:
            stats.record(events, state, settings.ema_weight)
    stats.total_arrived = state.arrived_total.copy()
    stats.total_served = state.served_total.copy()
    stats.final_backlog = state.backlog.copy()
    logger.info("simulated %d superframes (%d after warm-up), mode=%s",
                settings.horizon, stats.frames, settings.mode)
    return stats


def estimate_success_prob(ack_events: Sequence[ArrayLike], weight: float = 0.01,
                          prior: Optional[ArrayLike] = None) -> Optional[ArrayLike]:
    """
    Exponentially weighted moving average of ACK indicators

    Args:
        ack_events: Indicators in observation order; scalars or per-queue arrays
        weight: EMA weight of the newest indicator
        prior: Estimate to continue from; the first indicator seeds it when None

    Returns:
        Estimate of (1 - eps) F_s, or None when nothing was observed
    """
    if not 0.0 < weight <= 1.0:
        raise ConfigError("EMA weight must lie in (0, 1]")
    estimate = prior
    for value in ack_events:
        value = np.asarray(value, dtype=float)
        estimate = value if estimate is None else (1.0 - weight) * estimate + weight * value
    if estimate is None or np.ndim(estimate) > 0:
        return estimate
    return float(estimate)


def make_ack_estimator(model: QosModel, superframes: int, seed: SeedLike,
                       weight: float = 0.01) -> Callable[[np.ndarray], np.ndarray]:
    """
    Success estimator for the distributed game built on simulated ACK counts

    Every call simulates ``superframes`` superframes of the occupancy model
    under the given policy with a fresh child seed. A queue that never
    delivers reports 0, so its best response is x_min for that round.
    """
    settings = SimSettings(horizon=superframes, warmup_fraction=0.0, mode="occupancy", ema_weight=weight)
    base = child_seed(seed, ACK_STREAM)
    calls = [0]

    def estimate(x: np.ndarray) -> np.ndarray:
        calls[0] += 1
        stats = run_simulation(model, to_probability(x), settings, child_seed(base, calls[0]))
        value = stats.ack_estimate()
        return np.zeros(model.shape) if value is None else value

    return estimate
