"""``lidal-sim`` command-line driver.

Configuration comes from an optional JSON file of flat keys (any
``ScenarioConfig`` field plus ``seed``, ``fidelity``, ``threads``,
``placements``, ``n_points``, ``duration_s`` and ``mf``). Command-line flags
override file values. Every run writes into its own directory under ``--out``
named ``<command>-<UTC timestamp>-<config hash>``; the directory appears only
once the run has completed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import channel, detect, exp, mimo, mobility
from .env import EnvironmentConfig, TargetState, build_environment

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

SCENARIO_KEYS = {f.name for f in fields(exp.ScenarioConfig)}
EXTRA_KEYS = {"seed", "fidelity", "threads", "placements", "n_points", "mf", "duration_s", "mode",
              "model", "room", "disting"}
BANDWIDTH_BINS_MHZ = np.arange(0.0, 2001.0, 25.0)


class ConfigError(Exception):
    """Bad or missing configuration; reported with exit code 2."""


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config_hash: str
    seed: int | None
    fidelity: str
    output_dir: str
    resolved: dict
    timing: dict

    def write(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def config_hash(resolved: dict) -> str:
    """SHA-256 of the canonical JSON form, so key order never changes the hash."""
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(file.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - SCENARIO_KEYS - EXTRA_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


# ---------------------------------------------------------------- argument parsing


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--seed", type=int, help="master seed (required for scenario runs)")
    common.add_argument("--fidelity", choices=("desk", "full"),
                        help="ray-tracer element sizes: desk 20/40 cm, full 5/20 cm")
    common.add_argument("--threads", type=int, help="worker processes (default: all CPUs)")
    common.add_argument("--out", default="runs", help="parent directory for run outputs")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="lidal-sim", description="LiDAL optical radar simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel", parents=[common], help="channel bandwidth study")
    p.add_argument("--mode", choices=("monostatic", "bistatic", "both"))
    p.add_argument("--placements", type=int, help="target placements per mode")

    p = sub.add_parser("roc", parents=[common], help="ROC curves and operating points")
    p.add_argument("--mode", choices=("monostatic", "bistatic", "both"))
    p.add_argument("--points", dest="n_points", type=int, help="points per ROC curve")

    p = sub.add_parser("scenario", parents=[common], help="Monte Carlo counting scenario")
    p.add_argument("id", choices=("1", "2", "3"))
    p.add_argument("--system", choices=exp.SYSTEMS)
    p.add_argument("--disting", choices=(*exp.DISTINGUISHERS, "all"),
                   help="distinguisher; 'all' runs both on shared snapshots")
    p.add_argument("--iterations", type=int)
    p.add_argument("--max-targets", dest="max_targets", type=int)
    p.add_argument("--mf", type=float, nargs="+", help="mobility factor(s) for scenario 3")

    p = sub.add_parser("case-study", parents=[common], help="one simulated hour of occupancy")
    p.add_argument("--system", choices=exp.SYSTEMS)
    p.add_argument("--disting", choices=exp.DISTINGUISHERS)
    p.add_argument("--behaviour", choices=("pedestrian", "nomadic", "all"))
    p.add_argument("--mobility", dest="mobility_model", choices=("pathway", "random_walk", "all"))
    p.add_argument("--duration", dest="duration_s", type=float, help="simulated seconds")

    p = sub.add_parser("mobility", parents=[common], help="export a mobility trace")
    p.add_argument("--model", choices=("random_walk", "pathway"))
    p.add_argument("--behaviour", choices=("pedestrian", "nomadic"))
    p.add_argument("--duration", dest="duration_s", type=float, help="simulated seconds")
    p.add_argument("--room", choices=("A", "B"))
    return parser


COMMAND_DEFAULTS = {
    "channel": {"mode": "both", "placements": 200, "seed": 0},
    "roc": {"mode": "both", "n_points": 101, "seed": 0},
    "scenario": {"disting": "ccm"},
    "case-study": {"behaviour": "all", "mobility_model": "all"},
    "mobility": {"model": "random_walk", "behaviour": "pedestrian", "duration_s": 600.0,
                 "room": "B", "seed": 0},
}
FLAG_KEYS = ("seed", "fidelity", "threads", "mode", "placements", "n_points", "system", "disting",
             "iterations", "max_targets", "mf", "behaviour", "mobility_model", "duration_s",
             "model", "room")


def resolve(args: argparse.Namespace) -> dict:
    """Merge command defaults, config file and flags into one flat dictionary."""
    resolved = {"fidelity": "desk", "threads": os.cpu_count() or 1}
    resolved.update(COMMAND_DEFAULTS[args.command])
    file_values = load_config(args.config)
    if "distinguisher" in file_values:
        file_values.setdefault("disting", file_values.pop("distinguisher"))
    resolved.update(file_values)
    for key in FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    resolved["command"] = args.command
    if args.command == "scenario":
        resolved["scenario"] = args.id
    if args.command in ("scenario", "case-study") and resolved.get("seed") is None:
        raise ConfigError("--seed is required for scenario and case-study runs")
    if args.command in ("scenario", "case-study"):
        for key, value in asdict(exp.ScenarioConfig()).items():
            if key not in ("scenario", "distinguisher", "behaviour", "mobility_model"):
                resolved.setdefault(key, value)
        resolved.setdefault("disting", "ccm")
        resolved.setdefault("system", "mimo")
    if resolved["threads"] < 1:
        raise ConfigError("--threads must be at least 1")
    return resolved


def scenario_config(resolved: dict, **overrides) -> exp.ScenarioConfig:
    values = {k: v for k, v in resolved.items() if k in SCENARIO_KEYS}
    if "disting" in resolved and resolved["disting"] != "all":
        values["distinguisher"] = resolved["disting"]
    values.update(overrides)
    try:
        return exp.ScenarioConfig(**values)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


# ---------------------------------------------------------------- commands


def _modes(resolved: dict) -> tuple[str, ...]:
    mode = resolved["mode"]
    return ("monostatic", "bistatic") if mode == "both" else (mode,)


def cmd_channel(resolved: dict, out: Path) -> dict:
    stats = {}
    for k, mode in enumerate(_modes(resolved)):
        rng = np.random.default_rng([resolved["seed"], 100 + k])
        rows = channel.bandwidth_study(mode, resolved["placements"], rng, resolved["fidelity"])
        bandwidth = np.array([r["bandwidth_hz"] for r in rows]) / 1e6
        with open(out / f"channel_{mode}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_m", "y_m", "heading_deg", "bandwidth_mhz", "received_power_w",
                             "rms_delay_spread_ns"])
            for r in rows:
                writer.writerow([f"{r['x_m']:.4f}", f"{r['y_m']:.4f}", r["heading_deg"],
                                 f"{r['bandwidth_hz'] / 1e6:.6f}",
                                 f"{r['received_power_w']:.6e}",
                                 f"{r['rms_delay_spread_s'] * 1e9:.6f}"])
        counts, edges = np.histogram(np.clip(bandwidth, 0, BANDWIDTH_BINS_MHZ[-1]),
                                     BANDWIDTH_BINS_MHZ)
        with open(out / f"channel_{mode}_histogram.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bandwidth_lo_mhz", "bandwidth_hi_mhz", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                writer.writerow([f"{lo:.1f}", f"{hi:.1f}", int(c)])
        env = channel.Environment(floor_reflectivity=0.0, name="channel-study")
        cfg = channel.study_config(mode)
        example = TargetState((cfg.rx_position[0] + 0.5, cfg.rx_position[1] + 0.3), 0)
        ir = channel.impulse_response(env, cfg, [example], 2, resolved["fidelity"],
                                      target_paths_only=True)
        ir.to_csv(out / f"channel_{mode}_ir.csv")
        stats[mode] = {"placements": len(rows), "mean_mhz": float(bandwidth.mean()),
                       "median_mhz": float(np.median(bandwidth)),
                       "std_mhz": float(bandwidth.std())}
    exp.write_summary_json(stats, out / "channel_stats.json")
    return stats


def cmd_roc(resolved: dict, out: Path) -> dict:
    points = {}
    with open(out / "operating_points.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "d_th", "p_fd", "p_d", "p_fd_monte_carlo", "p_d_monte_carlo"])
        for k, mode in enumerate(_modes(resolved)):
            stats = mimo.link_stats(mode)
            detect.write_roc_csv(detect.roc_curve(stats, resolved["n_points"]),
                                 out / f"roc_{mode}.csv")
            point = mimo.operating_point(mode)
            mc = mimo.operating_point_monte_carlo(mode, 100_000,
                                                  np.random.default_rng([resolved["seed"], k]))
            writer.writerow([mode, repr(point["d_th"]), f"{point['p_fd']:.6f}",
                             f"{point['p_d']:.6f}", f"{mc['p_fd']:.6f}", f"{mc['p_d']:.6f}"])
            points[mode] = {"p_fd": point["p_fd"], "p_d": point["p_d"]}
    return points


def _write_report(report: exp.MetricsReport, out: Path, stem: str) -> None:
    exp.write_rows_csv(report, out / f"{stem}_rows.csv")
    exp.write_count_summary_csv(report, out / f"{stem}_counts.csv")
    exp.write_cdf_csv(report.mape_cdf(), out / f"{stem}_mape_cdf.csv", "mape")
    exp.write_cdf_csv(report.drmse_cdf(), out / f"{stem}_drmse_cdf.csv", "drmse")


def cmd_scenario(resolved: dict, out: Path) -> dict:
    system = resolved.get("system", "mimo")
    names = (("bsm", "ccm") if resolved["disting"] == "all" else (resolved["disting"],))
    mobility_factors = resolved.get("mf")
    if mobility_factors is not None and resolved["scenario"] != "3":
        raise ConfigError("--mf applies to scenario 3 only")
    sweep = [None] if mobility_factors is None else list(mobility_factors)
    summary = {}
    for mf in sweep:
        cfg = scenario_config(resolved, system=system, mobility_factor=mf)
        reports = exp.run_scenario_paired(cfg, names, resolved["threads"])
        for name, report in reports.items():
            stem = f"scenario{cfg.scenario}_{system}_{name}"
            if mf is not None:
                stem += f"_mf{mf:.2f}"
            _write_report(report, out, stem)
            summary[stem] = report.summary()
    exp.write_summary_json(summary, out / "summary.json")
    return {k: {"max_mape": v["max_mape"], "mean_drmse": v["mean_drmse"]}
            for k, v in summary.items()}


def _choices(value: str, options: tuple[str, ...]) -> tuple[str, ...]:
    return options if value == "all" else (value,)


def cmd_case_study(resolved: dict, out: Path) -> dict:
    system = resolved.get("system", "mimo")
    summary = {}
    for behaviour in _choices(resolved["behaviour"], ("pedestrian", "nomadic")):
        for model in _choices(resolved["mobility_model"], ("pathway", "random_walk")):
            cfg = scenario_config(resolved, scenario="case_study", system=system,
                                  behaviour=behaviour, mobility_model=model)
            report = exp.run_case_study(cfg)
            stem = f"case_{system}_{behaviour}_{model}"
            exp.write_rows_csv(exp.MetricsReport(cfg, report.rows), out / f"{stem}_rows.csv")
            exp.write_cdf_csv(report.mape_cdf(), out / f"{stem}_mape_cdf.csv", "mape")
            summary[stem] = report.summary()
    exp.write_summary_json(summary, out / "summary.json")
    return {k: {"median_mape": v["median_mape"], "mean_mape": v["mean_mape"]}
            for k, v in summary.items()}


def cmd_mobility(resolved: dict, out: Path) -> dict:
    rng = np.random.default_rng([resolved["seed"], 5])
    env = build_environment(EnvironmentConfig(resolved["room"]))
    duration = resolved["duration_s"]
    behaviour = resolved["behaviour"]
    if resolved["model"] == "random_walk":
        grid = mobility.build_grid(env)
        model = (mobility.nomadic_model(grid, mobility.interest_cells(grid, env, 9, rng))
                 if behaviour == "nomadic" else mobility.uniform_model(grid))
        speed = exp.PEDESTRIAN_SPEED
        trace = mobility.simulate_walk(grid, model, speed, duration, rng, behaviour=behaviour)
        suf = mobility.suf(grid)
    else:
        paths = mobility.default_pathways()
        pauses = ({i: float(rng.uniform(*exp.NOMADIC_PAUSE_RANGE_S))
                   for i in mobility.default_path_interest()[0]} if behaviour == "nomadic" else None)
        trace = mobility.simulate_pathway(paths[0], exp.PEDESTRIAN_SPEED, duration, rng, env,
                                          pauses, behaviour=behaviour)
        suf = None
    trace.to_csv(out / "trace.csv")
    stats = {"steps": int(len(trace.times) - 1), "dwell_s": trace.dwell_time,
             "mobility_factor": mobility.mobility_factor([trace.dwell_time], duration),
             "suf": suf}
    exp.write_summary_json(stats, out / "mobility_stats.json")
    return stats


COMMANDS = {"channel": cmd_channel, "roc": cmd_roc, "scenario": cmd_scenario,
            "case-study": cmd_case_study, "mobility": cmd_mobility}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = resolve(args)
    except ConfigError as err:
        print(f"lidal-sim: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    digest = config_hash(resolved)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    final = Path(args.out) / f"{args.command}-{stamp}-{digest[:12]}"
    partial = final.with_name(final.name + ".partial")
    partial.mkdir(parents=True)
    started = time.perf_counter()
    try:
        result = COMMANDS[args.command](resolved, partial)
    except ConfigError as err:
        shutil.rmtree(partial, ignore_errors=True)
        print(f"lidal-sim: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except BaseException as err:
        shutil.rmtree(partial, ignore_errors=True)
        if isinstance(err, KeyboardInterrupt):
            raise
        print(f"lidal-sim: run failed: {err!r}", file=sys.stderr)
        return EXIT_FAILURE
    manifest = RunManifest(args.command, args.config, digest, resolved.get("seed"),
                           resolved["fidelity"], str(final), resolved,
                           {"started_utc": stamp,
                            "wall_seconds": round(time.perf_counter() - started, 3)})
    manifest.write(partial / "manifest.json")
    partial.rename(final)
    print(json.dumps(exp.json_safe({"output_dir": str(final), "result": result}), indent=2,
                     allow_nan=False))
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
