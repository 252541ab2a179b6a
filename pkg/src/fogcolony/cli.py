"""Command-line entry point: validate, run, gen, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import metrics
from .dsl import BUNDLED, PolicySyntaxError, bundled_policy_text, parse_policy
from .engine import Simulation, SimulationError
from .mobility import gen_grid_aps, gen_synthetic_trace, trace_csv
from .model import UNBOUNDED
from .scenario import ScenarioError, bundled_scenario_path, load_document, load_scenario, schema_errors
from .topology import TierSpec, build_tiered_topology, export_csv, reference_tiers, topology_to_json

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _resolve_scenario(arg: str) -> Path:
    path = Path(arg)
    if not path.exists() and not arg.endswith(".json"):
        bundled = bundled_scenario_path(arg)
        if bundled.exists():
            return bundled
    return path


def cmd_validate(args) -> int:
    target = args.path
    if target in BUNDLED:
        text, source = bundled_policy_text(target), target
    else:
        path = _resolve_scenario(target)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            _err(f"error: cannot read {path}: {exc.strerror or exc}")
            return EXIT_IO
        source = str(path)
        if path.suffix == ".json":
            return _validate_scenario(path, text)
    try:
        program = parse_policy(text, source=source)
    except PolicySyntaxError as exc:
        for d in exc.diagnostics:
            _err(f"{source}:{d.line}:{d.column}: {d.message}")
        return EXIT_INVALID
    print(f"{source}: ok ({len(program.rules)} rules)")
    return EXIT_OK


def _validate_scenario(path: Path, text: str) -> int:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        _err(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
        return EXIT_INVALID
    problems = schema_errors(doc)
    if not problems:
        try:
            load_scenario(path)
        except ScenarioError as exc:
            problems = exc.problems
    if problems:
        for p in problems:
            _err(f"{path}: {p}")
        return EXIT_INVALID
    print(f"{path}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    path = _resolve_scenario(args.scenario)
    if not path.exists():
        _err(f"error: scenario {path} not found")
        return EXIT_IO
    try:
        scenario = load_scenario(
            path, seed=args.seed, policy=args.policy, horizon=args.horizon, memory_window=args.memory_window,
        )
        report = Simulation(scenario).run()
    except ScenarioError as exc:
        for p in exc.problems:
            _err(f"{path}: {p}")
        return EXIT_INVALID
    except SimulationError as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    out = Path(args.output or scenario.output_dir)
    try:
        summary = metrics.write_artifacts(report, out)
    except OSError as exc:
        _err(f"error: cannot write to {out}: {exc.strerror or exc}")
        return EXIT_IO
    overall = summary["classes"][-1]
    print(
        f"{scenario.name} policy={summary['policy']} window={summary['memory_window']} "
        f"cycles={summary['cycles']} inhibited={overall['total_inhibited']} "
        f"replicate={overall['totals']['replicate']} migrate={overall['totals']['migrate']} "
        f"undeploy={overall['totals']['undeploy']} -> {out}"
    )
    return EXIT_OK


def _parse_tiers(text: str) -> list[TierSpec]:
    """``tier:count:hw:downlink`` items separated by commas; hw may be 'unbounded'."""
    tiers = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) not in (3, 4):
            raise ValueError(f"bad tier spec {item!r}")
        hw = UNBOUNDED if parts[2] == "unbounded" else int(parts[2])
        tiers.append(TierSpec(parts[0], int(parts[1]), hw, float(parts[3]) if len(parts) == 4 else 0.0))
    return tiers


def _write_text(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_gen_topology(args) -> int:
    try:
        tiers = reference_tiers() if args.tiers is None else _parse_tiers(args.tiers)
        aps = gen_grid_aps((args.width, args.height), args.spacing)
        topo = build_tiered_topology(tiers, aps)
    except ValueError as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    try:
        _write_text(args.out, json.dumps(topology_to_json(topo), indent=2) + "\n")
        if args.csv:
            export_csv(topo, Path(f"{args.csv}_nodes.csv"), Path(f"{args.csv}_edges.csv"))
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_IO
    if args.out:
        print(f"{args.out}: {len(topo.nodes)} nodes, {len(topo.aps())} APs")
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    try:
        schedule = gen_synthetic_trace(
            args.seed, args.users, (args.width, args.height), args.epochs, args.move_prob, args.epoch_length,
        )
    except ValueError as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID
    try:
        _write_text(args.out, trace_csv(schedule))
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_IO
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    print(f"scenario {summary['scenario']}  policy {summary['policy']}  window {summary['memory_window']}  "
          f"cycles {summary['cycles']}")
    header = f"{'class':<6} {'resp_ms':>8} {'usage':>7} {'rep/mv':>7} {'mig/mv':>7} {'und/mv':>7} " \
             f"{'r':>7} {'conv':>5} {'cmax':>5} {'inhib':>6}"
    print(header)
    for row in summary["classes"]:
        opm = row["ops_per_movement"]
        print(
            f"{row['class']:<6} {_fmt(row['avg_response_ms']):>8} {_fmt(row['usage']):>7} "
            f"{_fmt(opm['replicate']):>7} {_fmt(opm['migrate']):>7} {_fmt(opm['undeploy']):>7} "
            f"{_fmt(row['pearson_r']):>7} {_fmt(row['convergence_mean']):>5} {_fmt(row['convergence_max']):>5} "
            f"{row['total_inhibited']:>6}"
        )


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def cmd_report(args) -> int:
    try:
        base = metrics.load_summary(Path(args.run_dir))
        other = metrics.load_summary(Path(args.compare_dir)) if args.compare_dir else None
    except FileNotFoundError as exc:
        _err(f"error: {exc}")
        return EXIT_IO
    except json.JSONDecodeError as exc:
        _err(f"error: corrupt summary: {exc}")
        return EXIT_INVALID
    _print_summary(base)
    if other is None:
        return EXIT_OK
    print()
    _print_summary(other)
    print()
    a = base["classes"][-1]["total_inhibited"]
    b = other["classes"][-1]["total_inhibited"]
    if a:
        print(f"inhibited reduction: {metrics.inhibited_reduction(a, b):.1f}% ({a} -> {b})")
    else:
        print("inhibited reduction: n/a (baseline has no inhibited operations)")
    rows_b = {r["class"]: r for r in other["classes"]}
    for row in base["classes"]:
        alt = rows_b.get(row["class"])
        if alt is None:
            continue
        deltas = []
        for key in ("avg_response_ms", "usage", "convergence_mean", "total_inhibited"):
            if row[key] is not None and alt[key] is not None:
                deltas.append(f"{key} {alt[key] - row[key]:+.3f}")
        print(f"delta {row['class']}: " + ", ".join(deltas))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fogcolony", description="Decentralised declarative Fog application management simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a policy file or scenario config")
    v.add_argument("path", help="policy file, bundled policy name, or scenario .json")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run a scenario and write artifacts")
    r.add_argument("scenario", nargs="?", default="desk", help="scenario .json or bundled name (default: desk)")
    r.add_argument("--seed", type=int)
    r.add_argument("--policy", help="bundled policy name or policy file, applied to every app")
    r.add_argument("--horizon", type=float)
    r.add_argument("--memory-window", type=int, dest="memory_window")
    r.add_argument("--output", help="output directory (beats FOGCOLONY_OUTPUT and the config)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="generate a topology or trace file")
    gsub = g.add_subparsers(dest="what", required=True)
    gt = gsub.add_parser("topology")
    gt.add_argument("--tiers", help="tier:count:hw:downlink_ms,... top-down (default: four-tier 85-node layout)")
    gt.add_argument("--width", type=float, default=4000.0)
    gt.add_argument("--height", type=float, default=4000.0)
    gt.add_argument("--spacing", type=float, default=500.0)
    gt.add_argument("--out", help="JSON output file (default: stdout)")
    gt.add_argument("--csv", help="also write PREFIX_nodes.csv and PREFIX_edges.csv")
    gt.set_defaults(func=cmd_gen_topology)
    gr = gsub.add_parser("trace")
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--users", type=int, default=12)
    gr.add_argument("--width", type=float, default=2000.0)
    gr.add_argument("--height", type=float, default=2000.0)
    gr.add_argument("--epochs", type=int, default=26)
    gr.add_argument("--move-prob", type=float, default=0.25, dest="move_prob")
    gr.add_argument("--epoch-length", type=float, default=2000.0, dest="epoch_length")
    gr.add_argument("--out", help="CSV output file (default: stdout)")
    gr.set_defaults(func=cmd_gen_trace)

    rep = sub.add_parser("report", help="print the metrics of a run, optionally against another")
    rep.add_argument("run_dir")
    rep.add_argument("compare_dir", nargs="?")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; bad arguments are validation failures here
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
