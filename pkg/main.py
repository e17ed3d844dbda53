"""
Experiment runner for the joint random-access / data-transmission QoS toolkit
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from analysis.qos import QosModel, qos_report, to_level, to_probability
from optimizers.baseline import grid_search_oracle, pso_optimize
from optimizers.game import GameOutcome, run_algorithm1
from optimizers.pricing import run_algorithm2
from runtime.errors import ConfigError, MMTCError
from runtime.export import histogram_frame, outcome_frame, price_frame, stats_frame, write_csv
from runtime.history_db import HistoryDB
from runtime.scenario import (ScenarioConfig, build_model, derive_config, fixed_policy, history_path,
                              load_scenario, replication_seeds, thread_count)
from runtime.simulator import START_STREAM, child_seed, make_ack_estimator, run_simulation

logger = logging.getLogger("mmtc")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 3
EXIT_INFEASIBLE = 4

DEFAULT_PREAMBLES = [10, 20, 30, 40, 50, 60]
DEFAULT_BANDWIDTHS = [180e3, 360e3, 720e3, 1440e3]
DEFAULT_PRICES = [1e2, 1e3, 1e4, 1e5]
DEFAULT_FIXED_D = [0.1, 0.5, 0.9]

CommandResult = Tuple[pd.DataFrame, Dict[str, float], bool]


class ExperimentRunner:
    """Dispatches CLI commands on one scenario and collects their CSV output"""

    def __init__(self, config: ScenarioConfig, quiet: bool = False):
        self.config = config
        self.quiet = quiet
        self.threads = thread_count()
        self.infeasible = False

    def say(self, message: str):
        if not self.quiet:
            print(message, file=sys.stderr)

    # -- shared helpers ------------------------------------------------------

    def seeds(self, replications: Optional[int] = None) -> List[np.random.SeedSequence]:
        return replication_seeds(self.config.seed, replications or self.config.sim.replications)

    def fan_out(self, task: Callable[[Any], Any], items: Sequence[Any]) -> List[Any]:
        """Run independent tasks concurrently; results come back in input order."""
        if len(items) <= 1 or self.threads <= 1:
            return [task(item) for item in items]
        with ThreadPoolExecutor(max_workers=min(self.threads, len(items))) as pool:
            return list(pool.map(task, items))

    def estimator(self, config: ScenarioConfig, model: QosModel, seed: Any):
        if config.game.info_mode == "distributed" and config.game.estimator == "ack":
            return make_ack_estimator(model, config.game.ack_superframes, seed, config.game.ack_weight)
        return None

    def solve_game(self, config: ScenarioConfig, model: QosModel, seed: Any = None,
                   price: Optional[float] = None, initial_x: Optional[np.ndarray] = None) -> GameOutcome:
        x_min, x_max = config.policy.bounds
        return run_algorithm1(model, config.game.to_config(x_min, x_max, price), initial_x,
                              self.estimator(config, model, config.seed if seed is None else seed))

    def policy(self, config: ScenarioConfig, model: QosModel, seed: Any = None) -> Tuple[np.ndarray, bool]:
        """Configured policy: fixed barring probabilities or the game's fixed point."""
        if config.policy.mode == "game":
            outcome = self.solve_game(config, model, seed)
            return outcome.x, outcome.converged
        return fixed_policy(config, model.shape), True

    # -- commands ------------------------------------------------------------

    def cmd_capacity_sweep(self, preambles: Sequence[int], bandwidths: Sequence[float]) -> CommandResult:
        """Mean effective capacity per device and class over a preamble x bandwidth grid."""
        if not preambles or not bandwidths:
            raise ConfigError("capacity sweep needs at least one preamble count and one bandwidth")
        if min(preambles) < 1 or min(bandwidths) <= 0.0:
            raise ConfigError("sweep values must be positive",
                              detail=f"M={list(preambles)}, B={list(bandwidths)}")
        points = [(int(m), float(b)) for m in preambles for b in bandwidths]
        self.say(f"🚀 Capacity sweep over {len(points)} (M, B) points")

        def evaluate(seed):
            values, converged = [], True
            for m, b in points:
                config = derive_config(self.config, {"system": {"preambles": m, "bandwidth_hz": b}})
                model = build_model(config, seed)
                x, ok = self.policy(config, model, seed)
                converged &= ok
                values.append(np.mean(model.capacity(x), axis=0))
            return np.array(values), converged

        results = self.fan_out(evaluate, self.seeds())
        mean = np.mean([values for values, _ in results], axis=0)
        converged = all(ok for _, ok in results)
        rows = [{"M": m, "bandwidth_hz": b, "class": k + 1, "ec_per_device": mean[i, k]}
                for i, (m, b) in enumerate(points) for k in range(mean.shape[1])]
        self.say(f"✅ Capacity sweep done ({len(rows)} rows)")
        return pd.DataFrame(rows), {"points": len(points)}, converged

    def cmd_qos_sweep(self, thetas: Sequence[float], class_index: int = 1) -> CommandResult:
        """Mean effective capacity per class while the QoS exponent of one class varies."""
        k = self.config.system.n_classes
        if not 1 <= class_index <= k:
            raise ConfigError(f"class index must lie in 1..{k}", detail=f"got {class_index}")
        if not thetas:
            raise ConfigError("QoS sweep needs at least one exponent")
        mean_bits = self.config.traffic.mean_bits
        for theta in thetas:
            if theta <= 0.0 or theta * mean_bits >= 1.0:
                raise ConfigError("QoS exponent outside 0 < theta * L_bar < 1",
                                  detail=f"theta={theta}, L_bar={mean_bits}")
        self.say(f"🚀 QoS sweep of class {class_index} over {len(thetas)} exponents")

        def evaluate(seed):
            values, converged = [], True
            for theta in thetas:
                exponents = list(self.config.traffic.theta)
                exponents[class_index - 1] = float(theta)
                config = derive_config(self.config, {"traffic": {"theta": exponents}})
                model = build_model(config, seed)
                x, ok = self.policy(config, model, seed)
                converged &= ok
                values.append(np.mean(model.capacity(x), axis=0))
            return np.array(values), converged

        results = self.fan_out(evaluate, self.seeds())
        mean = np.mean([values for values, _ in results], axis=0)
        rows = []
        for i, theta in enumerate(thetas):
            row = {"theta": float(theta)}
            row.update({f"ec_class{j + 1}": mean[i, j] for j in range(k)})
            rows.append(row)
        self.say(f"✅ QoS sweep done ({len(rows)} rows)")
        return pd.DataFrame(rows), {"points": len(thetas)}, all(ok for _, ok in results)

    def cmd_game(self, price: Optional[float] = None, random_start: bool = False,
                 start_seed: Optional[int] = None) -> CommandResult:
        """
        Algorithm 1 trajectory (iteration, player, queue, x, d, utility)

        A random initial policy comes from its own stream of ``start_seed``
        (default: the scenario seed), so changing it never moves the devices.
        """
        model = build_model(self.config)
        initial = None
        if random_start or start_seed is not None:
            root = self.config.seed if start_seed is None else start_seed
            rng = np.random.default_rng(child_seed(root, START_STREAM))
            initial = rng.uniform(model.x_min, model.x_max, model.shape)
        self.say("🚀 Running best-response dynamics")
        outcome = self.solve_game(self.config, model, price=price, initial_x=initial)
        marker = "✅" if outcome.converged else "⚠️"
        self.say(f"{marker} Algorithm 1: {outcome.iterations} rounds, total EC {outcome.total_capacity:.6g}")
        summary = {"total_ec": outcome.total_capacity, "iterations": outcome.iterations,
                   "residual": outcome.residual, "messages": outcome.messages}
        return outcome_frame(outcome, model), summary, outcome.converged

    def cmd_price(self) -> CommandResult:
        """Algorithm 2 trajectory (iteration, n, k, x, lambda, total_ec, kkt_residual)."""
        model = build_model(self.config)
        x_min, x_max = self.config.policy.bounds
        pricing = self.config.pricing
        self.say("🚀 Running price-update algorithm")
        outcome, _ = run_algorithm2(model, self.config.game.to_config(x_min, x_max), rho0=pricing.rho0,
                                    rho_min=pricing.rho_min, max_iter=pricing.max_iter)
        marker = "✅" if outcome.converged else "⚠️"
        self.say(f"{marker} Algorithm 2: {outcome.iterations} iterations, total EC {outcome.total_capacity:.6g}")
        summary = {"total_ec": outcome.total_capacity, "iterations": outcome.iterations,
                   "kkt_residual": outcome.kkt_residual, "messages": outcome.messages}
        return price_frame(outcome), summary, outcome.converged

    def cmd_price_sweep(self, prices: Sequence[float], fixed_d: Sequence[float]) -> CommandResult:
        """Algorithm 1 total effective capacity per access price next to fixed barring probabilities."""
        if not prices or min(prices) < 0.0:
            raise ConfigError("price sweep needs non-negative prices", detail=f"prices={list(prices)}")
        if any(not 0.0 < d < 1.0 for d in fixed_d):
            raise ConfigError("fixed barring probabilities must lie in (0, 1)", detail=f"d={list(fixed_d)}")
        model = build_model(self.config)
        x_min, x_max = self.config.policy.bounds
        self.say(f"🚀 Price sweep over {len(prices)} prices")

        outcomes = self.fan_out(lambda p: self.solve_game(self.config, model, price=float(p)), list(prices))
        rows = [{"method": "alg1", "price": float(p), "d": np.nan, "total_ec": o.total_capacity,
                 "iterations": o.iterations, "converged": o.converged} for p, o in zip(prices, outcomes)]
        for d in fixed_d:
            x = np.clip(model.full(float(to_level(d))), x_min, x_max)
            rows.append({"method": "fixed-d", "price": np.nan, "d": float(d), "total_ec": model.total_capacity(x),
                         "iterations": 0, "converged": True})
        for row in rows:
            label = f"lambda={row['price']:g}" if row["method"] == "alg1" else f"d={row['d']:g}"
            self.say(f"   {row['method']:8s} {label:14s} total EC {row['total_ec']:.6g}")
        best = max(outcomes, key=lambda o: o.total_capacity)
        summary = {"points": float(len(prices)), "best_total_ec": best.total_capacity}
        self.say("✅ Price sweep done")
        return pd.DataFrame(rows), summary, all(o.converged for o in outcomes)

    def cmd_compare(self, history: bool = False) -> CommandResult:
        """Total effective capacity of every method, or per-iteration trajectories with ``history``."""
        model = build_model(self.config)
        x_min, x_max = self.config.policy.bounds
        pricing = self.config.pricing
        self.say("🚀 Comparing barring policies")

        fixed_x = fixed_policy(self.config, model.shape)
        alg1 = self.solve_game(self.config, model)
        alg2, _ = run_algorithm2(model, self.config.game.to_config(x_min, x_max), rho0=pricing.rho0,
                                 rho_min=pricing.rho_min, max_iter=pricing.max_iter)
        pso = pso_optimize(model, self.config.pso)
        methods = [
            ("fixed-d", model.total_capacity(fixed_x), 0, True, [model.total_capacity(fixed_x)]),
            ("alg1", alg1.total_capacity, alg1.iterations, alg1.converged, alg1.capacity_history),
            ("alg2", alg2.total_capacity, alg2.iterations, alg2.converged, alg2.capacity_history),
            ("pso", pso.objective, self.config.pso.max_iter, True, pso.history),
        ]
        if model.n_devices * model.n_classes <= 4:
            grid = grid_search_oracle(model, self.config.grid_resolution)
            methods.append(("grid", grid.objective, grid.evaluations, True, grid.history))

        if history:
            rows = [{"method": name, "iteration": i, "total_ec": value}
                    for name, _, _, _, trace in methods for i, value in enumerate(trace)]
        else:
            rows = [{"method": name, "total_ec": total, "iterations": iterations, "converged": ok}
                    for name, total, iterations, ok, _ in methods]
        for name, total, _, _, _ in methods:
            self.say(f"   {name:8s} total EC {total:.6g}")
        summary = {f"total_ec_{name}": total for name, total, _, _, _ in methods}
        self.say("✅ Comparison done")
        return pd.DataFrame(rows), summary, alg1.converged and alg2.converged

    def cmd_simulate(self, histogram: Optional[str] = None, device: int = 0,
                     klass: int = 1) -> CommandResult:
        """Per-queue simulator statistics, one block per replication plus the mean."""
        seeds = self.seeds()
        self.say(f"🚀 Simulating {self.config.sim.horizon} superframes x {len(seeds)} replication(s)")

        def replicate(seed):
            model = build_model(self.config, seed)
            x, ok = self.policy(self.config, model, seed)
            return run_simulation(model, to_probability(x), self.config.sim, seed), ok

        results = self.fan_out(replicate, seeds)
        stats = [s for s, _ in results]
        if histogram is not None:
            n, k = stats[0].attempts.shape
            if not (0 <= device < n and 1 <= klass <= k):
                raise ConfigError("histogram queue out of range", detail=f"device={device}, class={klass}")
            frames = [histogram_frame(s, device, klass - 1, histogram).assign(replication=r)
                      for r, s in enumerate(stats)]
            frame = pd.concat(frames, ignore_index=True) if len(frames) > 1 else frames[0].drop(columns="replication")
        elif len(stats) == 1:
            frame = stats_frame(stats[0])
        else:
            raw = pd.concat([stats_frame(s, r) for r, s in enumerate(stats)], ignore_index=True)
            mean = raw.drop(columns="replication").groupby(["n", "k"], as_index=False).mean()
            mean.insert(0, "replication", "mean")
            frame = pd.concat([raw, mean], ignore_index=True)
        summary = {
            "frames": float(stats[0].frames),
            "success_freq_mean": float(np.mean([s.success_freq().mean() for s in stats])),
            "collisions": float(sum(s.collisions.sum() for s in stats)),
        }
        self.say(f"✅ Simulation done, mean success frequency {summary['success_freq_mean']:.4g}")
        return frame, summary, all(ok for _, ok in results)

    def cmd_qos_report(self, strict: bool = False) -> CommandResult:
        """A(θ), C(θ), θ*, violation probabilities and minimum power of every queue."""
        model = build_model(self.config)
        x, converged = self.policy(self.config, model)
        traffic = self.config.traffic
        self.say(f"🚀 QoS report for {model.n_devices * model.n_classes} queues")
        rows = [qos_report(model, x, n, k, traffic.q_th_bits, traffic.d_max_s)
                for n in range(model.n_devices) for k in range(model.n_classes)]
        frame = pd.DataFrame(rows)
        infeasible = int((~frame["feasible"]).sum())
        if infeasible:
            self.say(f"⚠️ {infeasible} queue(s) cannot meet their QoS target within the power range")
        self.infeasible = strict and infeasible > 0
        self.say("✅ QoS report done")
        return frame, {"queues": float(len(rows)), "infeasible": float(infeasible)}, converged


def parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def parse_ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Scenario JSON file (or preset name in scenarios/)")
    common.add_argument("--seed", type=int, help="Override the scenario seed")
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--replications", type=int, help="Independent replications")
    common.add_argument("--quiet", action="store_true", help="No progress lines on stderr")
    common.add_argument("--verbose", action="store_true", help="INFO-level logging")
    common.add_argument("--no-history", action="store_true", help="Do not record the run")

    parser = argparse.ArgumentParser(
        description="Joint random access and data transmission QoS toolkit for mMTC"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("capacity-sweep", parents=[common], help="EC versus preambles and bandwidth")
    sweep.add_argument("--preambles", type=parse_ints, default=DEFAULT_PREAMBLES)
    sweep.add_argument("--bandwidths", type=parse_floats, default=DEFAULT_BANDWIDTHS)

    qos = sub.add_parser("qos-sweep", parents=[common], help="EC versus the QoS exponent of one class")
    qos.add_argument("--thetas", type=parse_floats, required=True)
    qos.add_argument("--class", dest="class_index", type=int, default=1)

    game = sub.add_parser("game", parents=[common], help="Best-response dynamics (Algorithm 1)")
    game.add_argument("--price", type=float, help="Override the access price")
    game.add_argument("--random-start", action="store_true", help="Seeded random initial policy")
    game.add_argument("--start-seed", type=int, help="Seed of the random initial policy (implies --random-start)")

    prices = sub.add_parser("price-sweep", parents=[common], help="Algorithm 1 total EC versus the access price")
    prices.add_argument("--prices", type=parse_floats, default=DEFAULT_PRICES)
    prices.add_argument("--fixed-d", type=parse_floats, default=DEFAULT_FIXED_D,
                        help="Fixed barring probabilities to compare against")

    sub.add_parser("price", parents=[common], help="Price-update algorithm (Algorithm 2)")

    compare = sub.add_parser("compare", parents=[common], help="Compare barring policies")
    compare.add_argument("--history", action="store_true", help="Per-iteration total EC of every method")

    simulate = sub.add_parser("simulate", parents=[common], help="Superframe simulation")
    simulate.add_argument("--histogram", choices=["queue", "delay"], help="Emit one queue's histogram")
    simulate.add_argument("--device", type=int, default=0)
    simulate.add_argument("--klass", type=int, default=1, help="Class of the histogram queue (1-based)")

    report = sub.add_parser("qos-report", parents=[common], help="Per-queue QoS figures")
    report.add_argument("--strict", action="store_true", help="Exit 4 when a queue is infeasible")
    return parser


def dispatch(runner: ExperimentRunner, args: argparse.Namespace) -> CommandResult:
    if args.command == "capacity-sweep":
        return runner.cmd_capacity_sweep(args.preambles, args.bandwidths)
    if args.command == "qos-sweep":
        return runner.cmd_qos_sweep(args.thetas, args.class_index)
    if args.command == "game":
        return runner.cmd_game(args.price, args.random_start, args.start_seed)
    if args.command == "price-sweep":
        return runner.cmd_price_sweep(args.prices, args.fixed_d)
    if args.command == "price":
        return runner.cmd_price()
    if args.command == "compare":
        return runner.cmd_compare(args.history)
    if args.command == "simulate":
        return runner.cmd_simulate(args.histogram, args.device, args.klass)
    return runner.cmd_qos_report(args.strict)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replications is not None:
        overrides["sim"] = {"replications": args.replications}

    history = None
    run_id = None
    code = EXIT_OK
    summary: Dict[str, float] = {}
    converged: Optional[bool] = None
    error = None
    try:
        config = load_scenario(args.config, overrides)
        if not args.no_history:
            history = HistoryDB(history_path())
            run_id = history.start_run(args.command, args.config, config.hash, config.seed, args.out)
        runner = ExperimentRunner(config, quiet=args.quiet)
        frame, summary, converged = dispatch(runner, args)
        write_csv(frame, args.out, config.seed, config.hash)
        if runner.infeasible:
            code = EXIT_INFEASIBLE
        elif not converged:
            code = EXIT_NOT_CONVERGED
            if not args.quiet:
                print("⚠️ Iteration cap reached before convergence", file=sys.stderr)
    except MMTCError as e:
        code = e.exit_code
        error = str(e)
        print(f"❌ {error}", file=sys.stderr)
    finally:
        if history is not None and run_id is not None:
            history.complete_run(run_id, code, converged, summary, error)
            if summary:
                history.save_metrics(run_id, summary)
            history.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
