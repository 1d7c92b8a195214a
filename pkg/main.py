"""
Main Script: Simulator-in-the-Loop Vehicle State Estimation (Pipeline)
Generates twin-experiment datasets -> Tunes observer gains -> Estimates -> Compares
"""

import argparse
import dataclasses
import os
import sys
from typing import Dict, List, Optional

import pandas as pd
from dotenv import load_dotenv

from src.dataio import NoiseSpec, ScenarioSpec, generate_dataset, load_dataset, save_dataset
from src.dynamics import load_plant_file, load_vehicle_file
from src.errors import ConfigurationError, SilError
from src.harness import bar_frame, compare_report, evaluate_trace, normalize_reports, write_reports
from src.logger import configure_logging
from src.observer import (
    BenchmarkPredictor, EstimateTrace, ObserverConfig, PlantPredictor, load_gains,
    open_loop_rollout, run_observer, save_gains,
)
from src.tuner import load_tune_file, tune
from src.utils import load_yaml, resolve_path, save_yaml

# =============================================================================
# CONFIGURATION
# =============================================================================

load_dotenv()

ROOT_DIR = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(ROOT_DIR, "config", "config.yaml")
TRACE_FORMAT = "%.17g"

logger = None


def load_settings(path: Optional[str]) -> Dict:
    """Global defaults; paths inside resolve against the config directory"""
    path = path or os.getenv("SIL_CONFIG") or DEFAULT_CONFIG
    settings = load_yaml(path)
    base = os.path.dirname(os.path.abspath(path))
    for section, keys in (("vehicle", ("benchmark", "plant")),
                          ("noise", ("file",)), ("paths", ("scenarios", "runs"))):
        block = settings.setdefault(section, {}) or {}
        for key in keys:
            if block.get(key):
                block[key] = resolve_path(block[key], base)
        settings[section] = block
    return settings


def write_resolved(out_dir: str, command: str, resolved: Dict):
    """Copy of everything a run depended on (no timestamps, sorted keys)"""
    save_yaml({"command": command, **resolved}, os.path.join(out_dir, "resolved_config.yaml"))


def save_trace(trace: EstimateTrace, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    trace.to_frame().to_csv(path, index=False, float_format=TRACE_FORMAT, lineterminator="\n")


def read_observer(path: str, settings: Dict, predictor: Optional[str] = None) -> ObserverConfig:
    """Observer config with the global xbridge timeout as default"""
    data = load_yaml(path)
    data.setdefault("timeout", float((settings.get("xbridge") or {}).get("timeout", 5.0)))
    config = ObserverConfig.from_dict(data, os.path.dirname(os.path.abspath(path)))
    if predictor:
        config = config.with_predictor(predictor)
    return config


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_generate(args, settings: Dict) -> int:
    sim = settings.get("simulation") or {}
    scenario_path = args.scenario
    if not os.path.exists(scenario_path) and settings["paths"].get("scenarios"):
        # Bare scenario names refer to the shipped scenario directory
        scenario_path = os.path.join(settings["paths"]["scenarios"], f"{args.scenario}.yaml")
    scenario = ScenarioSpec.from_file(scenario_path)
    plant_path = args.plant_config or settings["vehicle"]["plant"]
    plant = load_plant_file(plant_path)
    noise_path = args.noise_config or settings["noise"].get("file")
    noise = NoiseSpec.from_file(noise_path) if noise_path else NoiseSpec.default()
    dt = float(sim.get("dt", 0.01))
    substeps = int(sim.get("substeps", 10))

    logger.log_stage_start(f"generate {scenario.name}")
    dataset = generate_dataset(scenario, plant, noise, args.seed, dt=dt, substeps=substeps,
                               progress=True)
    path = os.path.join(args.out, f"{scenario.name}.csv")
    save_dataset(dataset, path)
    write_resolved(args.out, "generate", {
        "seed": args.seed, "dt": dt, "substeps": substeps,
        "scenario": scenario.to_dict(), "plant": plant.to_dict(), "noise": noise.to_dict(),
    })
    logger.log_stage_end(f"generate {scenario.name}", {
        "Samples": dataset.n_samples, "Load clamps": dataset.metadata["load_clamps"], "File": path,
    })
    return 0


def cmd_tune(args, settings: Dict) -> int:
    dataset = load_dataset(args.dataset, role="training")
    config = read_observer(args.observer_config, settings, args.predictor)
    tune_config, spec = load_tune_file(args.tune_config)
    if args.seed is not None:
        tune_config = dataclasses.replace(tune_config, seed=args.seed)

    logger.log_stage_start("tune")
    history_path = os.path.join(args.out, "history.csv")
    result = tune(dataset, config, spec, tune_config, history_path=history_path, progress=True)
    gains = result.best_gains()
    save_gains(gains, os.path.join(args.out, "gains.yaml"))
    write_resolved(args.out, "tune", {
        "dataset": os.path.abspath(args.dataset), "observer": config.to_dict(),
        "tuning": tune_config.to_dict(), "cost": spec.to_dict(),
    })
    logger.log_stage_end("tune", {
        "Evaluations": len(result.history), "Best J": f"{result.best_cost:.6g}",
        **{name: f"{value:.6g}" for name, value in gains.items()},
    })
    return 0


def cmd_estimate(args, settings: Dict) -> int:
    dataset = load_dataset(args.dataset)
    config = read_observer(args.observer_config, settings, args.predictor)
    if args.gains:
        config = config.with_gains(load_gains(args.gains))

    logger.log_stage_start("estimate")
    if args.open_loop:
        trace = open_loop_rollout(dataset, config)
    else:
        trace = run_observer(dataset, config)
    path = os.path.join(args.out, f"{dataset.name}_trace.csv")
    save_trace(trace, path)
    write_resolved(args.out, "estimate", {
        "dataset": os.path.abspath(args.dataset), "observer": config.to_dict(),
        "open_loop": bool(args.open_loop),
    })
    logger.log_stage_end("estimate", {"Samples": trace.n_samples, "File": path})
    return 0


def cmd_evaluate(args, settings: Dict) -> int:
    dataset = load_dataset(args.dataset, role="training")
    eps_v = float((settings.get("simulation") or {}).get("eps_v", 0.5))
    reports = []
    for path in args.trace:
        trace = EstimateTrace.from_frame(pd.read_csv(path, float_precision="round_trip"), eps_v)
        name = os.path.splitext(os.path.basename(path))[0]
        reports.append(evaluate_trace(trace, dataset, name))
    normalize_reports(reports)
    write_reports(reports, args.out, dataset.name)
    write_resolved(args.out, "evaluate", {
        "dataset": os.path.abspath(args.dataset),
        "traces": [os.path.abspath(p) for p in args.trace],
    })
    return 0


def parse_contender(text: str) -> Dict[str, Optional[str]]:
    """NAME=OBSERVER.yaml[:GAINS.yaml]"""
    name, sep, rest = text.partition("=")
    if not sep or not name or not rest:
        raise ConfigurationError(f"contender must be NAME=OBSERVER.yaml[:GAINS.yaml] (got '{text}')")
    observer, _, gains = rest.partition(":")
    return {"name": name, "observer": observer, "gains": gains or None}


def cmd_compare(args, settings: Dict) -> int:
    contenders = [parse_contender(c) for c in args.contender]
    names = [c["name"] for c in contenders]
    if len(set(names)) != len(names):
        raise ConfigurationError("contender names must be unique")

    configs = {}
    for c in contenders:
        config = read_observer(c["observer"], settings)
        if c["gains"]:
            config = config.with_gains(load_gains(c["gains"]))
        configs[c["name"]] = config

    logger.log_stage_start("compare")
    all_reports = []
    for path in args.dataset:
        dataset = load_dataset(path, role="training")
        traces = {name: run_observer(dataset, config) for name, config in configs.items()}
        all_reports += compare_report(traces, dataset, args.out, show=True)
    bar_frame(all_reports).to_csv(os.path.join(args.out, "all_bars.csv"), index=False,
                                  float_format=TRACE_FORMAT, lineterminator="\n")
    write_resolved(args.out, "compare", {
        "datasets": [os.path.abspath(p) for p in args.dataset],
        "contenders": {name: config.to_dict() for name, config in configs.items()},
    })
    logger.log_stage_end("compare", {"Datasets": len(args.dataset), "Contenders": len(configs)})
    return 0


def cmd_serve(args, settings: Dict) -> int:
    from src.xbridge import PredictorServer

    sim = settings.get("simulation") or {}
    dt = float(sim.get("dt", 0.01))
    substeps = int(sim.get("substeps", 10))
    if args.predictor == "benchmark":
        params, tires = load_vehicle_file(args.vehicle_config or settings["vehicle"]["benchmark"])
        predictor = BenchmarkPredictor(params, tires, dt, substeps)
    else:
        predictor = PlantPredictor(load_plant_file(args.vehicle_config or settings["vehicle"]["plant"]),
                                   dt, substeps)
    server = PredictorServer(predictor)

    if args.stdio:
        server.serve_stdio()
        return 0
    if args.listen.startswith("tcp://"):
        host, _, port = args.listen[len("tcp://"):].rpartition(":")
        if not port.isdigit():
            raise ConfigurationError(f"--listen needs tcp://HOST:PORT (got '{args.listen}')")
        tcp = server.tcp_server(host, int(port))
    elif args.listen.startswith("unix://"):
        tcp = server.unix_server(args.listen[len("unix://"):])
    else:
        raise ConfigurationError(f"unsupported listen address '{args.listen}'")
    logger.info(f"Serving {predictor.name} predictor on {args.listen} (Ctrl+C to stop)")
    try:
        tcp.serve_forever()
    except KeyboardInterrupt:
        logger.info("Server stopped")
    finally:
        tcp.server_close()
    return 0


# =============================================================================
# ARGUMENTS
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Simulator-in-the-loop vehicle state estimation")
    parser.add_argument("--config", type=str, default=None,
                        help="Global config file (default: config/config.yaml or $SIL_CONFIG)")
    parser.add_argument("--log-level", type=str, default=None,
                        help="DEBUG, INFO, WARNING or ERROR (overrides config and $SIL_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Roll out the plant over a scenario")
    p.add_argument("--scenario", required=True, help="Scenario YAML or name of a shipped scenario")
    p.add_argument("--noise-config", default=None, help="Noise YAML")
    p.add_argument("--plant-config", default=None, help="Plant vehicle YAML")
    p.add_argument("--out", default=None, help="Run directory (default: <paths.runs>/<command>)")
    p.add_argument("--seed", type=int, default=0, help="Plant and noise seed (default: 0)")

    p = sub.add_parser("tune", help="Bayesian optimization of the observer gains")
    p.add_argument("--dataset", required=True)
    p.add_argument("--observer-config", required=True)
    p.add_argument("--tune-config", required=True)
    p.add_argument("--out", default=None, help="Run directory (default: <paths.runs>/<command>)")
    p.add_argument("--seed", type=int, default=None, help="Overrides the tuning seed")
    p.add_argument("--predictor", default=None, help="benchmark, plant or extern:<address>")

    p = sub.add_parser("estimate", help="Replay a dataset through the observer")
    p.add_argument("--dataset", required=True)
    p.add_argument("--observer-config", required=True)
    p.add_argument("--gains", default=None, help="Gain fragment YAML")
    p.add_argument("--out", default=None, help="Run directory (default: <paths.runs>/<command>)")
    p.add_argument("--predictor", default=None)
    p.add_argument("--open-loop", action="store_true", help="Skip the correction")

    p = sub.add_parser("evaluate", help="Score estimate traces against ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--trace", required=True, action="append")
    p.add_argument("--out", default=None, help="Run directory (default: <paths.runs>/<command>)")

    p = sub.add_parser("compare", help="Run and compare contenders over datasets")
    p.add_argument("--dataset", required=True, action="append")
    p.add_argument("--contender", required=True, action="append",
                   help="NAME=OBSERVER.yaml[:GAINS.yaml]")
    p.add_argument("--out", default=None, help="Run directory (default: <paths.runs>/<command>)")

    p = sub.add_parser("serve", help="Expose a built-in predictor over xbridge")
    p.add_argument("--predictor", choices=["benchmark", "plant"], default="benchmark")
    p.add_argument("--vehicle-config", default=None)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--listen", help="tcp://HOST:PORT or unix:///PATH")
    group.add_argument("--stdio", action="store_true")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "tune": cmd_tune,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    global logger
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config)
    except (OSError, SilError) as e:
        configure_logging("INFO").error(f"Cannot load config: {e}")
        return 1

    log_cfg = settings.get("logging") or {}
    level = args.log_level or os.getenv("SIL_LOG_LEVEL") or log_cfg.get("level", "INFO")
    logger = configure_logging(level, log_cfg.get("file"))

    if hasattr(args, "out"):
        if args.out is None:
            args.out = os.path.join(settings["paths"].get("runs") or "runs", args.command)
        os.makedirs(args.out, exist_ok=True)
    try:
        return COMMANDS[args.command](args, settings)
    except SilError as e:
        logger.log_error_with_context(args.command, str(e), {"error": type(e).__name__})
        return 1
    except OSError as e:
        logger.error(f"{args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
