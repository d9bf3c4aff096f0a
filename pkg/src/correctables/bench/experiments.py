"""Experiment drivers; each returns a :class:`Table` ready for CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Optional

from ..client import Operation
from ..quorum import QuorumConfig
from ..sim import LatencyMatrix
from .apps import (AdStore, Outcome, Purchase, SpecStats, TicketShop, TweetStore, ad_key, ads_fetch,
                   encode_refs, news_read, profile_key, ticket_purchase, timeline_get, timeline_key, tweet_key)
from .deploy import QueueDeployment, QuorumDeployment, TieredDeployment
from .metrics import Metrics, mean, percentile
from .runner import run_workload
from .workload import WorkloadSpec

log = logging.getLogger(__name__)

# lag range and client count at which workload A reaches the high-divergence regime
CALIBRATED_LAG = (50.0, 200.0)
CALIBRATED_CLIENTS_PER_REGION = 4


def fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.4f}"
    return str(value)


@dataclass
class Table:
    name: str
    headers: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.headers):
            raise ValueError(f"row has {len(row)} fields, expected {len(self.headers)}")
        self.rows.append(list(row))

    def column(self, header: str) -> list:
        i = self.headers.index(header)
        return [r[i] for r in self.rows]

    def find(self, **match) -> list:
        idx = {k: self.headers.index(k) for k in match}
        for row in self.rows:
            if all(row[i] == match[k] for k, i in idx.items()):
                return row
        raise KeyError(f"no row matching {match}")

    def get(self, header: str, **match):
        return self.find(**match)[self.headers.index(header)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.headers)
        for row in self.rows:
            writer.writerow([fmt(v) for v in row])
        return buf.getvalue()


# -- quorum read latencies -------------------------------------------------------

LATENCY_CONFIGS = {
    # name: (r_strong, icg, level requested when not icg)
    "C1": (2, False, "weak"),
    "C2": (2, False, "strong"),
    "C3": (3, False, "strong"),
    "CC2": (2, True, None),
    "CC3": (3, True, None),
}


def latency_gap(matrix: Optional[LatencyMatrix] = None, seed: int = 0, probes: int = 200,
                client_region: str = "IRL", coordinator: str = "FRK") -> Table:
    table = Table("latency-gap", ["config", "prelim_mean_ms", "prelim_p99_ms", "final_mean_ms",
                                  "final_p99_ms", "gap_mean_ms", "gap_p99_ms"])
    for name, (r_strong, icg, level) in LATENCY_CONFIGS.items():
        dep = QuorumDeployment(matrix, seed, QuorumConfig(r_strong=r_strong))
        keys = [b"probe%d" % i for i in range(16)]
        dep.load(keys, 100)
        lib = dep.client(client_region, coordinator)
        prelims, finals = [], []
        for i in range(probes):
            op = Operation.read(keys[i % len(keys)])
            start = dep.clock.now
            if icg:
                c = lib.invoke(op)
            else:
                c = lib.invoke_weak(op) if level == "weak" else lib.invoke_strong(op)
            dep.clock.run()
            if c.error is not None:
                raise RuntimeError(f"probe failed: {c.error}")
            if c.views:
                prelims.append(c.views[0].arrival_time - start)
            finals.append(c.final_view.arrival_time - start)
        gaps = [f - p for p, f in zip(prelims, finals)]
        table.add(name, mean(prelims), percentile(prelims, 99), mean(finals), percentile(finals, 99),
                  mean(gaps), percentile(gaps, 99))
    return table


# -- divergence -------------------------------------------------------------------

def divergence(matrix: Optional[LatencyMatrix] = None, seeds=range(5), reads: int = 10_000,
               distribution: str = "latest", objects: int = 1000, lag=CALIBRATED_LAG,
               clients_per_region: int = CALIBRATED_CLIENTS_PER_REGION) -> Table:
    table = Table("divergence", ["workload", "distribution", "seed", "lag_min_ms", "lag_max_ms",
                                 "icg_reads", "diverged", "divergence_rate"])
    for name in ("A", "B", "C"):
        total_reads = total_div = 0
        for seed in seeds:
            spec = WorkloadSpec(name, distribution, objects, 100, reads, seed)
            dep = QuorumDeployment(matrix, seed, QuorumConfig(lag_min=lag[0], lag_max=lag[1]))
            m = run_workload(spec, dep, icg=True, clients_per_region=clients_per_region, reads=reads)
            total_reads += m.icg_reads
            total_div += m.diverged
            table.add(name, distribution, seed, lag[0], lag[1], m.icg_reads, m.diverged, m.divergence_rate)
        table.add(name, distribution, "all", lag[0], lag[1], total_reads, total_div,
                  total_div / total_reads if total_reads else 0.0)
    return table


# -- bandwidth -------------------------------------------------------------------

BANDWIDTH_MODES = ("C1", "CC2", "*CC2")


def _bandwidth_run(spec: WorkloadSpec, mode: str, matrix, stale: bool = False) -> Metrics:
    config = QuorumConfig(confirmations=(mode == "*CC2"), stale_preliminary=stale)
    dep = QuorumDeployment(matrix, spec.seed, config)
    return run_workload(spec, dep, icg=(mode != "C1"), baseline="weak")


def bandwidth(matrix: Optional[LatencyMatrix] = None, seed: int = 0, ops: int = 5000,
              value_size: int = 100, objects: int = 1000) -> Table:
    """Client bytes per operation for the baseline and both ICG variants.

    Scenarios: workloads A and B, a read-only run (no divergence possible)
    and workload A with every preliminary forced stale.
    """
    table = Table("bandwidth", ["scenario", "mode", "bytes_per_op", "overhead_vs_C1", "divergence_rate"])
    scenarios = [("A", "A", False), ("B", "B", False), ("zero-divergence", "C", False),
                 ("forced-stale", "A", True)]
    for scenario, workload, stale in scenarios:
        spec = WorkloadSpec(workload, "zipfian", objects, value_size, ops, seed)
        base = None
        for mode in BANDWIDTH_MODES:
            m = _bandwidth_run(spec, mode, matrix, stale=stale and mode != "C1")
            if mode == "C1":
                base = m.bytes_per_op
            table.add(scenario, mode, m.bytes_per_op, m.bytes_per_op / base - 1.0, m.divergence_rate)
    return table


# -- queue latencies -------------------------------------------------------------

QUEUE_PLACEMENTS = {
    # name: (client region, contact replica); the leader is always IRL
    "client-at-leader": ("IRL", "IRL"),
    "client-at-follower": ("FRK", "FRK"),
    "near-remote-contact": ("IRL", "FRK"),
    "far-remote-contact": ("VRG", "IRL"),
}


def queue_latency(matrix: Optional[LatencyMatrix] = None, seed: int = 0, ops: int = 50,
                  leader: str = "IRL") -> Table:
    table = Table("queue-latency", ["placement", "client_region", "contact", "leader", "client_rtt_ms",
                                    "weak_mean_ms", "weak_p99_ms", "strong_mean_ms", "strong_p99_ms"])
    for name, (region, contact) in QUEUE_PLACEMENTS.items():
        dep = QueueDeployment(matrix, seed, leader=leader)
        dep.load(list(range(ops)), 20)
        lib = dep.client(region, contact)
        weak, strong = [], []
        for i in range(ops):
            op = Operation.enqueue(b"item-%d" % i) if i % 2 == 0 else Operation.dequeue()
            start = dep.clock.now
            c = lib.invoke(op)
            dep.clock.run()
            if c.error is not None:
                raise RuntimeError(f"queue probe failed: {c.error}")
            weak.append(c.views[0].arrival_time - start)
            strong.append(c.final_view.arrival_time - start)
        rtt = 2 * dep.net.matrix.one_way(region, contact)
        table.add(name, region, contact, leader, rtt, mean(weak), percentile(weak, 99),
                  mean(strong), percentile(strong, 99))
    return table


# -- dequeue bandwidth -----------------------------------------------------------

def dequeue_bandwidth(matrix: Optional[LatencyMatrix] = None, seed: int = 0, sizes=(10, 500, 1000),
                      ops: int = 50, payload_size: int = 20) -> Table:
    """Client bytes per dequeue at constant queue length (each dequeue is replenished)."""
    table = Table("dequeue-bandwidth", ["queue_size", "method", "bytes_per_op"])
    for size in sizes:
        for method in ("icg", "naive"):
            dep = QueueDeployment(matrix, seed)
            dep.load(list(range(size)), payload_size)
            lib = dep.client("IRL", "FRK")
            measured = 0
            for i in range(ops):
                before = dep.client_bytes()
                if method == "icg":
                    c = lib.invoke(Operation.dequeue())
                else:
                    c = lib.invoke_strong(Operation.app("naive_dequeue", b"queue"))
                dep.clock.run()
                measured += dep.client_bytes() - before
                if c.error is not None:
                    raise RuntimeError(f"dequeue failed: {c.error}")
                lib.invoke_strong(Operation.enqueue((b"r%d-" % i).ljust(payload_size, b".")))
                dep.clock.run()
            table.add(size, method, measured / ops)
    return table


# -- ticket shop -----------------------------------------------------------------

RETAILERS = (("FRK", "FRK"), ("VRG", "VRG"), ("IRL", "IRL"), ("FRK", "FRK"))


@dataclass
class ShopResult:
    confirmed: int
    sold_out: int
    failed: int
    contradicted: int
    confirmed_on_weak: int
    latencies: list
    committed_removals: int


def run_ticket_shop(seed: int, stock: int = 500, retailers: int = 4, threshold: int = 20, icg: bool = True,
                    matrix: Optional[LatencyMatrix] = None, think_ms: float = 5.0) -> ShopResult:
    if matrix is None:
        matrix = LatencyMatrix.default()
        matrix.jitter = 2.0
    dep = QueueDeployment(matrix, seed)
    dep.cluster.load(b"queue", [b"ticket-%d" % i for i in range(stock)])
    shop = TicketShop(stock, threshold)
    rng = random.Random(seed)
    purchases: list[Purchase] = []

    def start(r: int, lib):
        p = Purchase(r)
        purchases.append(p)
        ticket_purchase(lib, shop, dep.clock, p, lambda done: next_purchase(r, lib, done), icg)

    def next_purchase(r: int, lib, done: Purchase):
        if done.outcome is Outcome.SOLD_OUT:
            return
        dep.clock.call_later(rng.uniform(0.0, think_ms), start, r, lib)

    for r in range(retailers):
        region, contact = RETAILERS[r % len(RETAILERS)]
        lib = dep.client(region, contact)
        dep.clock.call_later(rng.uniform(0.0, think_ms), start, r, lib)
    dep.clock.run()
    leader_log = dep.cluster.committed(dep.cluster.leader)
    return ShopResult(
        confirmed=sum(p.outcome is Outcome.CONFIRMED for p in purchases),
        sold_out=sum(p.outcome is Outcome.SOLD_OUT for p in purchases),
        failed=sum(p.outcome is Outcome.FAILED for p in purchases),
        contradicted=sum(p.contradicted for p in purchases),
        confirmed_on_weak=sum(p.on_weak for p in purchases),
        latencies=[p.latency for p in purchases if p.outcome is Outcome.CONFIRMED],
        committed_removals=stock - len(leader_log),
    )


def tickets(seeds=range(100), stock: int = 500, retailers: int = 4, threshold: int = 20,
            matrix: Optional[LatencyMatrix] = None) -> Table:
    table = Table("tickets", ["seed", "mode", "confirmed", "sold_out", "failed", "confirmed_on_weak",
                              "contradicted", "purchase_mean_ms", "purchase_p99_ms"])
    for seed in seeds:
        for mode, icg in (("icg", True), ("strong-only", False)):
            r = run_ticket_shop(seed, stock, retailers, threshold, icg, matrix)
            table.add(seed, mode, r.confirmed, r.sold_out, r.failed, r.confirmed_on_weak, r.contradicted,
                      mean(r.latencies), percentile(r.latencies, 99))
    return table


# -- ads and timelines -----------------------------------------------------------

def _reference_fetch(kind: str, matrix, seed: int, users: int, objects: int, requests: int,
                     write_ratio: float, write_head_start: float = 45.0) -> Table:
    table = Table(kind, ["mode", "requests", "mean_ms", "p99_ms", "misspeculations", "divergence_rate"])
    rng = random.Random(seed)
    if kind == "ads":
        store = AdStore.generate(users, objects, rng)
        fetch, key_of, ref_key = ads_fetch, profile_key, ad_key
    else:
        store = TweetStore.generate(users, objects, rng)
        fetch, key_of, ref_key = timeline_get, timeline_key, tweet_key

    for mode in ("speculative", "strong-only"):
        dep = QuorumDeployment(matrix, seed)
        dep.store.load(store.items())
        lib = dep.client("IRL", "FRK")
        writer = dep.client("VRG", "IRL")
        run_rng = random.Random(seed + 1)
        stats = SpecStats()
        latencies = []
        for _ in range(requests):
            user = run_rng.randrange(users)
            if run_rng.random() < write_ratio:
                if kind == "ads":
                    refs = run_rng.sample(range(objects), run_rng.randint(1, 40))
                else:
                    refs = sorted(run_rng.sample(range(objects), 20), reverse=True)
                writer.invoke_strong(Operation.write(key_of(user), encode_refs([ref_key(x) for x in refs])))
                # let the write reach its coordinator but not yet every replica
                dep.clock.run(until=dep.clock.now + write_head_start)
            start = dep.clock.now
            c = fetch(lib, user, dep.clock, mode == "speculative", stats)
            dep.clock.run()
            if c.error is None:
                latencies.append(c.final_view.arrival_time - start)
        miss = stats.aborts if mode == "speculative" else 0
        table.add(mode, requests, mean(latencies), percentile(latencies, 99), miss,
                  miss / requests if mode == "speculative" else 0.0)
    return table


def ads(matrix: Optional[LatencyMatrix] = None, seed: int = 0, users: int = 1000, ad_count: int = 2300,
        requests: int = 500, write_ratio: float = 0.05) -> Table:
    return _reference_fetch("ads", matrix, seed, users, ad_count, requests, write_ratio)


def timeline(matrix: Optional[LatencyMatrix] = None, seed: int = 0, users: int = 1000, tweets: int = 5000,
             requests: int = 500, write_ratio: float = 0.01) -> Table:
    return _reference_fetch("timeline", matrix, seed, users, tweets, requests, write_ratio)


# -- news reader -----------------------------------------------------------------

def news(matrix: Optional[LatencyMatrix] = None, seed: int = 0, echo=None) -> Table:
    """Render counts for the warm, cold and stale-backup scenarios."""
    table = Table("news", ["scenario", "views", "renders", "rendered"])
    key = b"frontpage"

    def scenario(name: str, prepare):
        dep = TieredDeployment(matrix, seed)
        dep.store.load({key: b"headlines-v1"})
        reader = dep.client("IRL")
        prepare(dep, reader)
        rendered = []

        def render(value):
            rendered.append(value)
            if echo is not None:
                echo(f"[{name}] render {len(rendered)}: {value!r}")

        c = news_read(reader, key, render)
        dep.clock.run()
        views = len(c.views) + (1 if c.final_view is not None else 0)
        table.add(name, views, len(rendered), "|".join(v.decode() for v in rendered if v is not None))

    def warm(dep, reader):
        reader.invoke(Operation.read(key))
        dep.clock.run()

    def cold(dep, reader):
        pass

    def stale_backup(dep, reader):
        warm(dep, reader)
        other = dep.client("VRG")
        other.invoke_strong(Operation.write(key, b"headlines-v2"))
        dep.clock.run()
        other.invoke_strong(Operation.write(key, b"headlines-v3"))
        # read right after the second write lands at the primary, before it reaches the backup
        dep.clock.run(until=dep.clock.now + 2.0)

    scenario("warm", warm)
    scenario("cold", cold)
    scenario("stale-backup", stale_backup)
    return table
