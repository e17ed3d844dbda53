"""
Scenario documents: defaults, schema validation, frozen settings and the
construction of the channel and QoS model of a scenario
"""

import copy
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from jsonschema import Draft7Validator

from analysis.phy import BlocklengthSpec, ChannelModel, dbm_to_watts, symbols_per_frame
from analysis.qos import QosModel, barring_bounds, to_level, to_probability
from analysis.traffic import QueueProfile
from optimizers.baseline import PsoConfig
from optimizers.game import GameConfig
from runtime.errors import ConfigError, DomainError
from runtime.simulator import PILOT_STREAM, SimSettings, child_seed, run_simulation, spawn_streams

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parent.parent
SCHEMA_PATH = ROOT / "schemas" / "scenario.schema.json"
SCENARIO_DIR = ROOT / "scenarios"

ENV_THREADS = "MMTC_THREADS"
ENV_HISTORY = "MMTC_HISTORY_DB"
DEFAULT_HISTORY = "logs/history.db"

DEFAULTS: Dict[str, Any] = {
    "system": {
        "n_devices": 100,
        "n_classes": 2,
        "preambles": 50,
        "slot_s": 5e-4,
        "access_s": 1e-3,
        "frame_s": 3e-3,
        "superframe_s": 4e-3,
        "t_ec_s": None,
        "area_m": 500.0,
        "noise_density_dbm_hz": -174.0,
        "bandwidth_hz": 360e3,
        "symbol_s": 66.7e-6,
        "symbol_bandwidth_hz": 15e3,
        "symbols": None,
        "placement": "uniform",
        "distances_m": None,
        "fading": "rayleigh",
    },
    "traffic": {
        "arrival_prob": 0.1,
        "mean_bits": 500.0,
        "theta": [1e-3, 1e-5],
        "eps": 1e-5,
        "power_dbm": 10.0,
        "q_th_bits": 2000.0,
        "d_max_s": 0.1,
        "idle_mode": "analytic",
        "pilot_superframes": 5000,
    },
    "policy": {
        "d_min": 0.1,
        "d_max": 0.9,
        "mode": "fixed",
        "fixed_d": [0.9, 0.5],
    },
    "game": {
        "price": 1000.0,
        "tol": 1e-6,
        "delta": 1e-3,
        "max_iter": 500,
        "info_mode": "full",
        "estimator": "analytic",
        "ack_superframes": 2000,
        "ack_weight": 0.01,
    },
    "pricing": {"rho0": 0.5, "rho_min": 0.1, "max_iter": 2000},
    "pso": {"swarm_size": 40, "inertia": 0.729, "cognitive": 1.49445, "social": 1.49445, "max_iter": 300},
    "grid": {"resolution": 200},
    "sim": {
        "horizon": 20000,
        "warmup_fraction": 0.1,
        "mode": "queued",
        "ema_weight": 0.01,
        "replications": 1,
        "queue_bin_bits": 100.0,
        "queue_bins": 400,
        "delay_bin_s": 4e-3,
        "delay_bins": 250,
    },
    "seed": 0,
}


# ---------------------------------------------------------------------------
# Frozen settings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    """Cell geometry, frame timing and radio resources"""

    n_devices: int
    n_classes: int
    preambles: int
    slot_s: float
    access_s: float
    frame_s: float
    superframe_s: float
    t_ec_s: Optional[float]
    area_m: float
    noise_density_dbm_hz: float
    bandwidth_hz: float
    symbol_s: float
    symbol_bandwidth_hz: float
    symbols: Optional[int]
    placement: str
    distances_m: Optional[Tuple[float, ...]]
    fading: str


@dataclass(frozen=True)
class TrafficConfig:
    """Arrival process and per-class QoS targets"""

    arrival_prob: float
    mean_bits: float
    theta: Tuple[float, ...]
    eps: Tuple[float, ...]
    power_dbm: Tuple[float, ...]
    q_th_bits: float
    d_max_s: float
    idle_mode: str
    pilot_superframes: int

    @property
    def power_w(self) -> np.ndarray:
        return np.asarray(dbm_to_watts(np.asarray(self.power_dbm)))

    def profiles(self) -> Tuple[QueueProfile, ...]:
        """One QueueProfile per class; validates the per-queue invariants."""
        power = self.power_w
        return tuple(QueueProfile(arrival_prob=self.arrival_prob, mean_bits=self.mean_bits, theta=theta, eps=eps,
                                  delay_bound_s=self.d_max_s, queue_threshold_bits=self.q_th_bits,
                                  power_w=float(power[k]))
                     for k, (theta, eps) in enumerate(zip(self.theta, self.eps)))


@dataclass(frozen=True)
class PolicyConfig:
    d_min: float
    d_max: float
    mode: str
    fixed_d: Tuple[float, ...]

    @property
    def bounds(self) -> Tuple[float, float]:
        return barring_bounds(self.d_min, self.d_max)


@dataclass(frozen=True)
class GameSettings:
    """Algorithm 1 controls as read from the scenario"""

    price: float
    tol: float
    delta: float
    max_iter: int
    info_mode: str
    estimator: str
    ack_superframes: int
    ack_weight: float

    def to_config(self, x_min: float, x_max: float, price: Optional[float] = None) -> GameConfig:
        return GameConfig(prices=self.price if price is None else price, x_min=x_min, x_max=x_max,
                          tol=self.tol, delta=self.delta, max_iter=self.max_iter, info_mode=self.info_mode)


@dataclass(frozen=True)
class PricingSettings:
    rho0: float
    rho_min: float
    max_iter: int


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: typed sections plus the merged source document"""

    system: SystemConfig
    traffic: TrafficConfig
    policy: PolicyConfig
    game: GameSettings
    pricing: PricingSettings
    pso: PsoConfig
    grid_resolution: int
    sim: SimSettings
    seed: int
    document: Dict[str, Any] = field(compare=False, repr=False)
    source: Optional[str] = None

    @property
    def hash(self) -> str:
        return config_hash(self.document)


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------

def merge_defaults(document: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Recursive overlay of ``document`` on ``defaults`` (inputs are not modified)."""
    merged = copy.deepcopy(DEFAULTS if defaults is None else defaults)
    for key, value in document.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_defaults(value, merged[key])
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def config_hash(document: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a document."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _schema() -> Dict[str, Any]:
    with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
        return json.load(f)


def validate_document(document: Dict[str, Any]) -> None:
    """
    Check a document against the scenario JSON Schema

    Raises:
        ConfigError: carrying the JSON path of the first offending field
    """
    validator = Draft7Validator(_schema())
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in first.absolute_path)
        raise ConfigError(f"invalid scenario at {path}: {first.message}",
                          detail=f"{len(errors)} schema error(s)")


def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        candidate = SCENARIO_DIR / (path.name if path.suffix else f"{path.name}.json")
        if path.parent == Path(".") and candidate.exists():
            path = candidate
        else:
            raise ConfigError(f"scenario file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario file is not valid JSON: {path}", detail=str(e)) from e
    if not isinstance(document, dict):
        raise ConfigError("scenario document must be a JSON object")
    return document


def load_scenario(path: Optional[Union[str, Path]] = None,
                  overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """
    Load, default, validate and freeze a scenario

    Args:
        path: JSON scenario file (a bare preset name is looked up in scenarios/)
        overrides: Partial document applied on top of the file

    Returns:
        ScenarioConfig
    """
    document = read_document(path) if path is not None else {}
    if overrides:
        document = merge_defaults(overrides, document)
    validate_document(document)
    merged = merge_defaults(document)
    config = build_config(merged, source=str(path) if path is not None else None)
    logger.info("scenario loaded: N=%d K=%d M=%d hash=%s", config.system.n_devices,
                config.system.n_classes, config.system.preambles, config.hash[:12])
    return config


def derive_config(config: ScenarioConfig, overrides: Dict[str, Any]) -> ScenarioConfig:
    """Copy of a scenario with a partial document overlaid (sweeps, seed changes)."""
    document = merge_defaults(overrides, config.document)
    validate_document(document)
    return build_config(document, source=config.source)


def _per_class(value: Any, k: int, name: str) -> Tuple[float, ...]:
    values = [float(value)] * k if not isinstance(value, list) else [float(v) for v in value]
    if len(values) != k:
        raise ConfigError(f"{name} needs one value per traffic class", detail=f"got {len(values)}, K={k}")
    return tuple(values)


def build_config(document: Dict[str, Any], source: Optional[str] = None) -> ScenarioConfig:
    """Turn a merged document into frozen settings; cross-field checks raise ConfigError."""
    sys_doc, tr_doc, pol_doc = document["system"], document["traffic"], document["policy"]
    k = int(sys_doc["n_classes"])
    n = int(sys_doc["n_devices"])

    distances = sys_doc.get("distances_m")
    system = SystemConfig(**{**sys_doc, "distances_m": tuple(distances) if distances is not None else None})

    ratio = system.superframe_s / system.slot_s
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise ConfigError("superframe must be an integer multiple of the slot",
                          detail=f"T_u={system.superframe_s}, T_d={system.slot_s}")
    if system.access_s + system.frame_s > system.superframe_s * (1.0 + 1e-12):
        raise ConfigError("access and data phases exceed the superframe",
                          detail=f"T_s+T_f={system.access_s + system.frame_s}, T_u={system.superframe_s}")
    if system.placement == "explicit" and (distances is None or len(distances) != n):
        raise ConfigError("explicit placement needs one distance per device",
                          detail=f"N={n}, got {0 if distances is None else len(distances)}")

    traffic = TrafficConfig(
        arrival_prob=float(tr_doc["arrival_prob"]),
        mean_bits=float(tr_doc["mean_bits"]),
        theta=_per_class(tr_doc["theta"], k, "traffic.theta"),
        eps=_per_class(tr_doc["eps"], k, "traffic.eps"),
        power_dbm=_per_class(tr_doc["power_dbm"], k, "traffic.power_dbm"),
        q_th_bits=float(tr_doc["q_th_bits"]),
        d_max_s=float(tr_doc["d_max_s"]),
        idle_mode=tr_doc["idle_mode"],
        pilot_superframes=int(tr_doc["pilot_superframes"]),
    )
    try:
        traffic.profiles()
    except DomainError as e:
        raise ConfigError(f"invalid traffic section: {e}") from e

    policy = PolicyConfig(d_min=float(pol_doc["d_min"]), d_max=float(pol_doc["d_max"]),
                          mode=pol_doc["mode"], fixed_d=_per_class(pol_doc["fixed_d"], k, "policy.fixed_d"))
    if not 0.0 <= policy.d_min < policy.d_max < 1.0:
        raise ConfigError("barring bounds need 0 <= d_min < d_max < 1",
                          detail=f"d_min={policy.d_min}, d_max={policy.d_max}")
    if any(not policy.d_min <= d <= policy.d_max for d in policy.fixed_d):
        raise ConfigError("fixed barring probabilities must lie in [d_min, d_max]")

    game = GameSettings(**document["game"])
    if game.info_mode == "distributed" and policy.d_min <= 0.0:
        raise ConfigError("distributed information needs d_min > 0")
    pricing = PricingSettings(**document["pricing"])
    pso = PsoConfig(seed=int(document["seed"]), **document["pso"])
    sim = SimSettings(**document["sim"])

    return ScenarioConfig(system=system, traffic=traffic, policy=policy, game=game, pricing=pricing,
                          pso=pso, grid_resolution=int(document["grid"]["resolution"]), sim=sim,
                          seed=int(document["seed"]), document=document, source=source)


# ---------------------------------------------------------------------------
# Geometry and model construction
# ---------------------------------------------------------------------------

def place_devices(system: SystemConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Distances from the base station at the centre of the square

    ``uniform`` draws positions from ``rng``; ``lattice`` takes the centres of
    a ceil(sqrt N)^2 grid in row-major order; ``explicit`` uses the listed
    distances. Distances are clamped at 1 m.
    """
    n, side = system.n_devices, system.area_m
    if system.placement == "explicit":
        distances = np.asarray(system.distances_m, dtype=float)
    elif system.placement == "lattice":
        cells = int(math.ceil(math.sqrt(n)))
        centres = (np.arange(cells) + 0.5) / cells * side - side / 2.0
        ys, xs = np.meshgrid(centres, centres, indexing="ij")
        distances = np.hypot(xs.ravel(), ys.ravel())[:n]
    elif system.placement == "uniform":
        if rng is None:
            raise ConfigError("uniform placement needs a random generator")
        positions = rng.uniform(-side / 2.0, side / 2.0, size=(n, 2))
        distances = np.hypot(positions[:, 0], positions[:, 1])
    else:
        raise ConfigError(f"unknown placement: {system.placement}")
    return np.maximum(distances, 1.0)


def device_symbols(system: SystemConfig) -> int:
    """S from the data-phase resources unless overridden."""
    if system.symbols is not None:
        return int(system.symbols)
    return symbols_per_frame(BlocklengthSpec(system.frame_s, system.symbol_s,
                                             system.bandwidth_hz, system.symbol_bandwidth_hz))


def build_channel(config: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> ChannelModel:
    system = config.system
    return ChannelModel(place_devices(system, rng), system.noise_density_dbm_hz,
                        system.bandwidth_hz, system.fading)


def fixed_policy(config: ScenarioConfig, shape: Tuple[int, int]) -> np.ndarray:
    """x of the configured fixed barring probabilities, clipped into the box."""
    x_min, x_max = config.policy.bounds
    d = np.broadcast_to(np.asarray(config.policy.fixed_d, dtype=float), shape)
    return np.clip(to_level(d), x_min, x_max)


def build_model(config: ScenarioConfig, seed: Optional[Any] = None,
                p_idle: Optional[np.ndarray] = None) -> QosModel:
    """
    QoS model of a scenario

    Args:
        config: Scenario
        seed: Seed of the placement (and of the pilot run in empirical idle mode);
            defaults to the scenario seed
        p_idle: Explicit idle probabilities overriding ``traffic.idle_mode``

    Returns:
        QosModel
    """
    seed = config.seed if seed is None else seed
    streams = spawn_streams(seed)
    channel = build_channel(config, streams["placement"])
    system, traffic = config.system, config.traffic
    x_min, x_max = config.policy.bounds
    k = system.n_classes

    if p_idle is None and traffic.idle_mode == "saturated":
        p_idle = np.zeros((system.n_devices, k))

    try:
        model = QosModel(
            theta=np.asarray(traffic.theta)[None, :],
            eps=np.asarray(traffic.eps)[None, :],
            mean_bits=traffic.mean_bits,
            arrival_prob=traffic.arrival_prob,
            power_w=traffic.power_w[None, :],
            gain_to_noise=channel.gain_to_noise,
            symbols=device_symbols(system),
            preambles=system.preambles,
            slot_s=system.slot_s,
            superframe_s=system.superframe_s,
            x_min=x_min,
            x_max=x_max,
            t_ec=system.t_ec_s,
            p_idle=p_idle,
            fading=system.fading,
        )
    except DomainError as e:
        raise ConfigError(f"scenario outside the model domain: {e}") from e

    if p_idle is None and traffic.idle_mode == "empirical":
        settings = SimSettings(horizon=traffic.pilot_superframes, warmup_fraction=config.sim.warmup_fraction,
                               mode="queued")
        pilot = run_simulation(model, to_probability(fixed_policy(config, model.shape)), settings,
                               child_seed(seed, PILOT_STREAM))
        logger.info("pilot run estimated idle probabilities over %d superframes", pilot.frames)
        model = model.with_idle(pilot.idle_freq())
    return model


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

def thread_count() -> int:
    """Worker threads, capped by MMTC_THREADS when set."""
    raw = os.environ.get(ENV_THREADS)
    default = os.cpu_count() or 1
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_THREADS} must be a positive integer", detail=repr(raw))
    if value < 1:
        raise ConfigError(f"{ENV_THREADS} must be a positive integer", detail=repr(raw))
    return value


def history_path() -> str:
    return os.environ.get(ENV_HISTORY) or DEFAULT_HISTORY


def replication_seeds(seed: int, replications: int) -> List[np.random.SeedSequence]:
    """Independent child seeds of one base seed, in replication order."""
    if replications < 1:
        raise ConfigError("at least one replication is required")
    if replications == 1:
        return [np.random.SeedSequence(seed)]
    return np.random.SeedSequence(seed).spawn(replications)
