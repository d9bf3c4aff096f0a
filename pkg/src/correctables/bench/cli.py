"""``bench`` command line: run a workload or reproduce one of the experiments as CSV."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional

from ..sim import ConfigError, LatencyMatrix
from . import experiments
from .deploy import make_deployment
from .experiments import Table
from .metrics import Metrics
from .runner import run_workload
from .workload import DISTRIBUTIONS, READ_RATIOS, WorkloadSpec

EXPERIMENTS = ("latency-gap", "divergence", "bandwidth", "tickets", "ads", "timeline", "news",
               "queue-latency", "dequeue-bandwidth")


def metrics_table(m: Metrics) -> Table:
    table = Table("run", ["metric", "value"])
    table.add("ops", m.ops)
    table.add("errors", m.errors)
    table.add("duration_ms", m.duration_ms)
    table.add("throughput_ops_per_s", m.throughput)
    table.add("icg_reads", m.icg_reads)
    table.add("divergence_rate", m.divergence_rate)
    table.add("bytes_per_op", m.bytes_per_op)
    table.add("kb_per_op", m.kb_per_op)
    table.add("misspeculations", m.misspeculations)
    for label in m.labels():
        table.add(f"{label}.mean_ms", m.mean(label))
        table.add(f"{label}.p99_ms", m.p99(label))
    return table


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--net", metavar="CONFIG", help="latency matrix config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", metavar="CSV", help="write CSV here instead of stdout")

    run = sub.add_parser("run", parents=[common], help="run one YCSB-style workload")
    run.add_argument("--workload", choices=sorted(READ_RATIOS), default="A")
    run.add_argument("--dist", choices=DISTRIBUTIONS, default="zipfian")
    run.add_argument("--objects", type=int, default=1000)
    run.add_argument("--ops", type=int, default=10_000)
    run.add_argument("--value-size", type=int, default=100)
    run.add_argument("--binding", choices=("quorum", "queue", "tiered"), default="quorum")
    run.add_argument("--icg", action="store_true", help="reads ask for every consistency level")
    run.add_argument("--clients-per-region", type=int, default=1)

    exp = sub.add_parser("experiment", parents=[common], help="reproduce one experiment")
    exp.add_argument("name", choices=EXPERIMENTS)
    exp.add_argument("--runs", type=int, help="number of seeds (divergence, tickets)")
    exp.add_argument("--ops", type=int, help="operations or requests per run")
    return parser


def _experiment(args, matrix: Optional[LatencyMatrix]) -> Table:
    name, seed = args.name, args.seed
    runs = args.runs
    extra = {}
    if name == "latency-gap":
        return experiments.latency_gap(matrix, seed, **({"probes": args.ops} if args.ops else {}))
    if name == "divergence":
        seeds = range(seed, seed + (runs or 5))
        if args.ops:
            extra["reads"] = args.ops
        return experiments.divergence(matrix, seeds, **extra)
    if name == "bandwidth":
        return experiments.bandwidth(matrix, seed, **({"ops": args.ops} if args.ops else {}))
    if name == "tickets":
        return experiments.tickets(range(seed, seed + (runs or 100)), matrix=matrix)
    if name in ("ads", "timeline"):
        fn = experiments.ads if name == "ads" else experiments.timeline
        return fn(matrix, seed, **({"requests": args.ops} if args.ops else {}))
    if name == "news":
        return experiments.news(matrix, seed, echo=lambda line: print(line, file=sys.stderr))
    if name == "queue-latency":
        return experiments.queue_latency(matrix, seed, **({"ops": args.ops} if args.ops else {}))
    return experiments.dequeue_bandwidth(matrix, seed, **({"ops": args.ops} if args.ops else {}))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        matrix = LatencyMatrix.load(args.net) if args.net else None
    except (OSError, ConfigError) as exc:
        print(f"bench: cannot load network config: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        try:
            spec = WorkloadSpec(args.workload, args.dist, args.objects, args.value_size, args.ops, args.seed)
        except ValueError as exc:
            print(f"bench: {exc}", file=sys.stderr)
            return 2
        deployment = make_deployment(args.binding, matrix, args.seed)
        table = metrics_table(run_workload(spec, deployment, icg=args.icg,
                                           clients_per_region=args.clients_per_region))
    else:
        table = _experiment(args, matrix)

    text = table.to_csv()
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
