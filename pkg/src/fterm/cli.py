"""Command line entry point: ``fterm simulate | train | predict``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dade import DadeConfig, train
from .forecaster import NetworkGenome, NetworkLayout, forecast_many
from .reports import emit_reports
from .simulation import SCENARIOS, SimConfig, run_simulation
from .trace import (FORMATS, PATTERNS, SyntheticSpec, aggregate_per_interval, build_windows,
                    generate_synthetic_trace, normalize_minmax, parse_trace, stack_windows)


def _load_series(args) -> dict:
    if args.trace:
        rows = parse_trace(args.format, Path(args.trace).read_bytes(), vm_id=args.vm_id)
    else:
        spec = SyntheticSpec(n_vms=args.n_vms, n_intervals=args.n_intervals, pattern=args.synthetic,
                             seed=args.seed)
        rows = generate_synthetic_trace(spec)
    return aggregate_per_interval(rows, args.interval)


def cmd_simulate(args) -> int:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.scenario:
        data["scenario"] = args.scenario
    if args.seed is not None:
        data["seed"] = args.seed
    config = SimConfig.from_dict(data)
    report = run_simulation(config)
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    emit_reports(report, args.out, formats)
    print(json.dumps({"scenario": config.scenario, "seed": config.seed, "migrations": report.migrations,
                      "availability_pct": round(report.ha.availability_pct, 6), "out": str(args.out)}))
    return 0


def cmd_train(args) -> int:
    series = _load_series(args)
    layout = NetworkLayout(l=args.lags, h=args.hidden, n_hidden_layers=args.hidden_layers)
    sets = [build_windows(normalize_minmax(s)[0], layout.l) for s in series.values() if len(s) > layout.l]
    if not sets:
        raise ValueError(f"no VM has more than l = {layout.l} intervals")
    config = DadeConfig(population_size=args.population, max_generations=args.generations, seed=args.seed)
    report = train(stack_windows(sets), layout, config)
    report.best.save(args.out)
    if args.curve:
        Path(args.curve).write_text(report.curve_csv())
    print(json.dumps({"best_rmse": report.best.fitness, "generations": report.generations, "out": args.out}))
    return 0


def cmd_predict(args) -> int:
    genome = NetworkGenome.load(args.genome)
    series = _load_series(args)
    preds = forecast_many(genome, {vm: s.values for vm, s in series.items()})
    out = {vm: {"cpu": p.denormalized.cpu, "mem": p.denormalized.mem, "bw": p.denormalized.bw,
                "insufficient_history": p.insufficient_history} for vm, p in preds.items()}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


class _JsonErrorParser(argparse.ArgumentParser):
    """Argument errors are reported as JSON on stderr, exit status 2."""

    def error(self, message):
        sys.stderr.write(json.dumps({"error": "UsageError", "message": f"{self.prog}: {message}"}) + "\n")
        sys.exit(2)


def _add_trace_args(p) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="trace file")
    src.add_argument("--synthetic", choices=PATTERNS, help="generate a synthetic trace instead")
    p.add_argument("--format", choices=FORMATS, default="canonical_csv")
    p.add_argument("--vm-id", help="VM id for single-VM formats")
    p.add_argument("--interval", type=int, default=300, help="aggregation interval in seconds")
    p.add_argument("--n-vms", type=int, default=1)
    p.add_argument("--n-intervals", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonErrorParser(prog="fterm", description="Outage prediction and fault-tolerant "
                                     "VM management simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonErrorParser)

    p = sub.add_parser("simulate", help="run one scenario and write reports")
    p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--formats", default="csv,json", help="comma list of csv, json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a forecaster and save its genome")
    _add_trace_args(p)
    p.add_argument("--out", required=True, help="genome JSON path")
    p.add_argument("--curve", help="optional training-curve CSV path")
    p.add_argument("--lags", type=int, default=6)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--hidden-layers", type=int, default=2)
    p.add_argument("--population", type=int, default=20)
    p.add_argument("--generations", type=int, default=200)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast the next interval for every VM in a trace")
    _add_trace_args(p)
    p.add_argument("--genome", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:  # reported as JSON for callers
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
