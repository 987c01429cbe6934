"""Command-line front end.

Subcommands map one-to-one onto the library's workflow: print a scenario or
grid template, generate a labeled dataset, train the network on it, simulate
one scenario, compare controllers on a shared scenario, and benchmark
per-step latency on a pinned input stream.

Exit codes: 0 on success, 2 when a simulation or training run left its
validity envelope (instability, divergence), 3 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .datasets import DatasetSpec, generate_dataset, load_dataset
from .errors import ConfigError, SimulationUnstableError, TrainingDivergedError
from .harness import (
    bench_controller,
    compare_controllers,
    load_model_for,
    run_simulation,
    write_csv,
    write_metrics_json,
)
from .mlp import RpropConfig, init_network, save_model, train
from .scenario import (
    ScenarioConfig,
    _fmt,
    default_config,
    default_config_toml,
    load_config,
    load_grid_config,
)

EXIT_OK = 0
EXIT_UNSTABLE = 2
EXIT_CONFIG = 3


def _triple(v, unit="") -> str:
    if v is None:
        return "n/a"
    return "(" + ", ".join(f"{x:.3f}" for x in v) + (f") {unit}" if unit else ")")


def default_grid_toml() -> str:
    """The default dataset grid as a commented TOML document."""
    spec = DatasetSpec()
    return f"""\
# Dataset grid: every (body, cycle time, control period) triple is one
# simulated squat cycle labeled by the receding-horizon optimizer.

[grid]
bodies = [{", ".join(_fmt(list(b)) for b in spec.bodies)}]   # [mass kg, height m]
cycle_times = {_fmt(spec.cycle_times)}   # s per squat cycle
control_dts = {_fmt(spec.control_dts)}   # s
cycles_per_run = {_fmt(spec.cycles_per_run)}
seed = {_fmt(spec.seed)}
jitter = {_fmt(spec.jitter)}   # rad of seeded initial-pose noise
servo_accel_gain = {_fmt(spec.servo_accel_gain)}
servo_damping_gain = {_fmt(spec.servo_damping_gain)}
explore_sigma = {_fmt(spec.explore_sigma)}   # N; force-target exploration amplitude
explore_tau = {_fmt(spec.explore_tau)}     # s; exploration correlation time
"""


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------


def _load_scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else default_config()
    over = {}
    if getattr(args, "controller", None):
        over["controller"] = args.controller
    if getattr(args, "duration", None) is not None:
        over["duration"] = args.duration
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "model", None):
        over["model_path"] = args.model
    return replace(cfg, **over) if over else cfg


def _cmd_simulate(args) -> int:
    cfg = _load_scenario(args)
    result, report = run_simulation(cfg)
    if args.csv_out:
        write_csv(args.csv_out, result)
        print(f"wrote {result.data.shape[0]} rows to {args.csv_out}")
    if args.metrics_out:
        write_metrics_json(args.metrics_out, report)
        print(f"wrote metrics to {args.metrics_out}")
    print(f"controller          {report.controller}")
    print(f"steps               {report.steps} ({report.steps * cfg.control_dt:.3f} s simulated)")
    print(f"stable              {report.stable}" + (f"  [{result.error}]" if result.error else ""))
    print(f"tracking rms        {_triple(report.tracking_rms, 'N*m')}")
    print(f"human torque rms    {_triple(report.human_torque_rms, 'N*m')}")
    print(f"baseline rms        {_triple(report.baseline_human_torque_rms, 'N*m')}")
    print(f"torque reduction    {_triple(report.torque_reduction_pct, '%')}")
    if report.latency_ms_mean is not None:
        print(f"controller latency  mean {report.latency_ms_mean:.4f} ms, "
              f"median {report.latency_ms_median:.4f} ms, p99 {report.latency_ms_p99:.4f} ms")
    return EXIT_OK if report.stable else EXIT_UNSTABLE


def _cmd_gen_data(args) -> int:
    spec = load_grid_config(args.grid) if args.grid else DatasetSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    ds = generate_dataset(spec, out_path=args.out, workers=args.workers)
    print(f"wrote {len(ds)} rows ({len(ds.segments)} of {spec.scenario_count()} "
          f"grid scenarios) to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    xs = ds.scaler.scale_inputs(ds.inputs)
    ys = ds.scaler.scale_targets(ds.targets)
    net = init_network(seed=args.seed)
    cfg = RpropConfig(max_epochs=args.epochs, target_mse=args.target_mse)

    def progress(epoch, m):
        if (epoch + 1) % args.log_every == 0:
            print(f"epoch {epoch + 1:5d}  scaled mse {m:.6e}")

    net, history = train(net, xs, ys, cfg, callback=progress)
    save_model(args.out, net, ds.scaler)
    print(f"trained {len(history)} epochs on {len(ds)} rows; "
          f"best scaled mse {min(history):.6e}; model saved to {args.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = _load_scenario(args)
    net, scaler = load_model_for(cfg)
    tags = [t.strip() for t in args.controllers.split(",") if t.strip()]
    table = compare_controllers(cfg, tags, net=net, scaler=scaler)
    print(f"{'controller':<10} {'stable':<7} {'tracking rms [N*m]':<28} "
          f"{'reduction [%]':<28} {'mean lat [ms]':<13} speedup")
    failed = 0
    for row in table["rows"]:
        tag = row["controller"]
        if row["report"] is None:
            failed += 1
            print(f"{tag:<10} {'-':<7} error: {row['error']}")
            continue
        rep = row["report"]
        lat = f"{rep.latency_ms_mean:.4f}" if rep.latency_ms_mean is not None else "n/a"
        speed = table["speedup"].get(tag)
        print(f"{tag:<10} {str(rep.stable):<7} {_triple(rep.tracking_rms):<28} "
              f"{_triple(rep.torque_reduction_pct):<28} {lat:<13} "
              f"{f'{speed:.1f}x' if speed else 'n/a'}")
    if args.json_out:
        doc = {
            "torque_reduction_pct": table["torque_reduction_pct"],
            "speedup": table["speedup"],
            "rows": [
                {"controller": r["controller"], "error": r["error"],
                 "report": r["report"].to_dict() if r["report"] else None}
                for r in table["rows"]
            ],
        }
        with open(args.json_out, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        print(f"wrote comparison to {args.json_out}")
    return EXIT_OK if failed < len(table["rows"]) else EXIT_UNSTABLE


def _cmd_bench(args) -> int:
    cfg = _load_scenario(args)
    net, scaler = load_model_for(cfg)
    tags = [t.strip() for t in args.controllers.split(",") if t.strip()]
    stats = bench_controller(cfg, warmup=args.warmup, iterations=args.iterations,
                             controllers=tags, net=net, scaler=scaler)
    print(f"{'controller':<10} {'mean [ms]':>10} {'median [ms]':>12} {'p99 [ms]':>10}")
    for tag in tags:
        s = stats[tag]
        print(f"{tag:<10} {s.mean_ms:>10.4f} {s.median_ms:>12.4f} {s.p99_ms:>10.4f}")
    slowest = max(s.mean_ms for s in stats.values())
    for tag in tags:
        s = stats[tag]
        if s.mean_ms < slowest:
            print(f"{tag} is {slowest / s.mean_ms:.1f}x faster than the slowest mean")
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump({t: s.to_dict() for t, s in stats.items()}, fh, indent=2)
            fh.write("\n")
        print(f"wrote benchmark to {args.json_out}")
    return EXIT_OK


def _cmd_print_default_config(args) -> int:
    sys.stdout.write(default_grid_toml() if args.grid else default_config_toml())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hybridmpc",
        description="Coupled human-exoskeleton squat simulation: optimizer, "
                    "distilled network, and hybrid controllers.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_flags(sp):
        sp.add_argument("--config", help="scenario TOML (default: built-in benchmark scenario)")
        sp.add_argument("--controller", help="override controller kind")
        sp.add_argument("--duration", type=float, help="override run length [s]")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--model", help="override trained-model path")

    sp = sub.add_parser("simulate", help="run one closed-loop scenario and score it")
    scenario_flags(sp)
    sp.add_argument("--csv-out", help="write the full time series here")
    sp.add_argument("--metrics-out", help="write the metrics report (JSON) here")
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("gen-data", help="simulate the labeled-dataset grid")
    sp.add_argument("--grid", help="grid TOML (default: built-in Table-1 grid)")
    sp.add_argument("--out", required=True, help="dataset file to write")
    sp.add_argument("--seed", type=int, help="override the grid seed")
    sp.add_argument("--workers", type=int, help="parallel scenario workers")
    sp.set_defaults(fn=_cmd_gen_data)

    sp = sub.add_parser("train", help="fit the network to a dataset")
    sp.add_argument("--data", required=True, help="dataset file from gen-data")
    sp.add_argument("--out", required=True, help="model file to write")
    sp.add_argument("--epochs", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0, help="weight-init seed")
    sp.add_argument("--target-mse", type=float, default=0.0,
                    help="stop early at this scaled MSE")
    sp.add_argument("--log-every", type=int, default=50)
    sp.set_defaults(fn=_cmd_train)

    sp = sub.add_parser("compare", help="run several controllers on one scenario")
    scenario_flags(sp)
    sp.add_argument("--controllers", default="nmpc,dnn-only,hybrid",
                    help="comma-separated controller tags")
    sp.add_argument("--json-out", help="write the comparison table (JSON) here")
    sp.set_defaults(fn=_cmd_compare)

    sp = sub.add_parser("bench", help="time controllers on a pinned input stream")
    scenario_flags(sp)
    sp.add_argument("--controllers", default="nmpc,hybrid",
                    help="comma-separated controller tags")
    sp.add_argument("--warmup", type=int, default=50)
    sp.add_argument("--iterations", type=int, default=200)
    sp.add_argument("--json-out", help="write the stats (JSON) here")
    sp.set_defaults(fn=_cmd_bench)

    sp = sub.add_parser("print-default-config", help="emit a config template to stdout")
    sp.add_argument("--grid", action="store_true",
                    help="emit the dataset-grid template instead of the scenario one")
    sp.set_defaults(fn=_cmd_print_default_config)

    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationUnstableError, TrainingDivergedError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
