"""Command-line entry point: run, compare, dump-routes, trace."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bridging import ChannelMap, Direct, ViaBridge
from .core import ticks_from_seconds
from .metrics import RunMetrics, aggregate
from .runner import compare_protocols, run_one, run_replications
from .scenario import Scenario, ScenarioError, load_scenario


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def write_run_csv(metrics: RunMetrics, path: Path) -> None:
    lines = ["metric,class,value"]
    for (metric, qual), value in sorted(metrics.metric_values().items()):
        lines.append(f"{metric},{qual},{_fmt(value)}")
    path.write_text("\n".join(lines) + "\n")


def write_aggregate_csv(aggregates: dict, path: Path) -> None:
    lines = ["protocol,metric,class,mean,std,min,max,n"]
    for protocol in sorted(aggregates):
        agg = aggregates[protocol]
        for (metric, qual), s in sorted(agg.stats.items()):
            lines.append(f"{protocol},{metric},{qual},{_fmt(s.mean)},"
                         f"{_fmt(s.std)},{_fmt(s.min)},{_fmt(s.max)},{s.n}")
    path.write_text("\n".join(lines) + "\n")


def write_report(aggregates: dict, ordering: list[str], path: Path) -> None:
    blocks = []
    for protocol in sorted(aggregates):
        agg = aggregates[protocol]
        lines = [f"protocol: {protocol}", f"  replications: {agg.n_runs}"]
        for (metric, qual), s in sorted(agg.stats.items()):
            lines.append(f"  {metric}[{qual}]:")
            lines.append(f"    mean: {_fmt(s.mean)}")
            lines.append(f"    std: {_fmt(s.std)}")
            lines.append(f"    min: {_fmt(s.min)}")
            lines.append(f"    max: {_fmt(s.max)}")
        blocks.append("\n".join(lines))
    text = "\n\n".join(blocks)
    if ordering:
        text += "\n\nordering:\n" + "\n".join(f"  {line}" for line in ordering)
    path.write_text(text + "\n")


def _load(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    if getattr(args, "until", None) is not None:
        scenario.horizon = ticks_from_seconds(args.until)
    if getattr(args, "reps", None) is not None:
        scenario.replications = args.reps
    return scenario


def _outdir(args) -> Path:
    out = Path(getattr(args, "out", None) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    scenario = _load(args)
    out = _outdir(args)
    seeds = [args.seed] if args.seed is not None else scenario.seeds()
    runs = run_replications(scenario, args.protocol, seeds=seeds,
                            workers=args.workers)
    for metrics in runs:
        write_run_csv(metrics, out / f"run_{args.protocol}_{metrics.seed}.csv")
    agg = aggregate(runs)
    write_aggregate_csv({args.protocol: agg},
                        out / f"aggregate_{args.protocol}.csv")
    pdr = agg.get("pdr", "all")
    if pdr is not None:
        print(f"{args.protocol}: pdr mean={_fmt(pdr.mean)} std={_fmt(pdr.std)} "
              f"n={pdr.n}")
    else:
        print(f"{args.protocol}: no traffic generated")
    print(f"wrote {len(runs)} run CSVs to {out}")
    return 0


def cmd_compare(args) -> int:
    scenario = _load(args)
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    out = _outdir(args)
    result = compare_protocols(scenario, protocols, workers=args.workers)
    write_aggregate_csv(result["aggregates"], out / "aggregate.csv")
    write_report(result["aggregates"], result["ordering"], out / "report.txt")
    for line in result["ordering"]:
        if line.startswith("pdr[") or line.startswith("emergency_delay"):
            print(line)
    print(f"wrote {out / 'aggregate.csv'} and {out / 'report.txt'}")
    return 0


def cmd_dump_routes(args) -> int:
    scenario = load_scenario(args.scenario)
    if not scenario.channel_map:
        print("src,dst,route_kind,ingress,bridge,egress")
        return 0
    cmap = ChannelMap(
        inbody_nodes={n.id for n in scenario.nodes if n.kind == "inbody"},
        bridge_nodes={scenario.bridge["node"]} if scenario.bridge else set())
    for record in scenario.channel_map:
        cmap.register(record)
    print("src,dst,route_kind,ingress,bridge,egress")
    for src in scenario.nodes:
        for dst in scenario.nodes:
            if src.id == dst.id:
                continue
            route = cmap.lookup_route(src.id, dst.id)
            if isinstance(route, Direct):
                key = scenario.channel_key(route.channel)
                print(f"{src.id},{dst.id},direct,{key},,{key}")
            elif isinstance(route, ViaBridge):
                print(f"{src.id},{dst.id},via_bridge,"
                      f"{scenario.channel_key(route.ingress)},{route.bridge},"
                      f"{scenario.channel_key(route.egress)}")
            else:
                print(f"{src.id},{dst.id},no_route,,,")
    return 0


def cmd_trace(args) -> int:
    scenario = _load(args)
    out = _outdir(args)
    metrics = run_one(scenario, args.protocol, args.seed, trace=True)
    trace_path = out / f"trace_{args.protocol}_{args.seed}.txt"
    trace_path.write_text("\n".join(metrics.trace_lines) + "\n")
    write_run_csv(metrics, out / f"run_{args.protocol}_{args.seed}.csv")
    print(f"wrote {trace_path} ({len(metrics.trace_lines)} dispatches)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsnsim",
        description="Body sensor network MAC simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run replications of one protocol")
    run.add_argument("--scenario", required=True)
    run.add_argument("--protocol", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--reps", type=int, default=None)
    run.add_argument("--until", type=float, default=None,
                     help="horizon override in seconds")
    run.add_argument("--out", default=None)
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(fn=cmd_run)

    cmp_ = sub.add_parser("compare", help="paired-seed protocol comparison")
    cmp_.add_argument("--scenario", required=True)
    cmp_.add_argument("--protocols", required=True,
                      help="comma-separated protocol list")
    cmp_.add_argument("--reps", type=int, default=None)
    cmp_.add_argument("--until", type=float, default=None)
    cmp_.add_argument("--out", default=None)
    cmp_.add_argument("--workers", type=int, default=1)
    cmp_.set_defaults(fn=cmd_compare)

    routes = sub.add_parser("dump-routes", help="print resolved routes as CSV")
    routes.add_argument("--scenario", required=True)
    routes.set_defaults(fn=cmd_dump_routes)

    trace = sub.add_parser("trace", help="event-trace dump for determinism diffs")
    trace.add_argument("--scenario", required=True)
    trace.add_argument("--protocol", default="csma802154")
    trace.add_argument("--seed", type=int, required=True)
    trace.add_argument("--until", type=float, default=None)
    trace.add_argument("--out", default=None)
    trace.set_defaults(fn=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
