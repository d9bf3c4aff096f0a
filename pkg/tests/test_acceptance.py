"""Acceptance gate: one test per criterion, summarized as pass/fail lines at the end of the run."""

import csv
import io
import random
import time

import pytest

from correctables.bench import experiments
from correctables.bench.cli import EXPERIMENTS, main

from quorum_oracle import explore
from schedules import check_schedule, oracle_counts, random_schedule, run_speculation, value_sequences


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def run_cli(args, tmp_path, name="out.csv") -> str:
    path = tmp_path / name
    assert main(args + ["--out", str(path)]) == 0
    return path.read_text()


@criterion(1, "latency gap: CC2 prelim 20ms, gap 20ms, gap(CC3) > gap(CC2), < 10s")
def test_latency_gap(tmp_path, record_property):
    start = time.perf_counter()
    table = {r["config"]: r for r in rows(run_cli(["experiment", "latency-gap"], tmp_path))}
    elapsed = time.perf_counter() - start
    prelim = float(table["CC2"]["prelim_mean_ms"])
    gap2 = float(table["CC2"]["gap_mean_ms"])
    gap3 = float(table["CC3"]["gap_mean_ms"])
    record_property("observed", f"prelim={prelim} gap2={gap2} gap3={gap3} t={elapsed:.1f}s")
    assert abs(prelim - 20.0) <= 0.5
    assert abs(gap2 - 20.0) <= 0.5
    assert gap3 > gap2
    assert elapsed < 10


@criterion(2, "queue weak latency equals client-replica RTT (2/20/83ms) per placement")
def test_queue_latency(tmp_path, record_property):
    table = rows(run_cli(["experiment", "queue-latency"], tmp_path))
    expected = {"client-at-leader": 2.0, "client-at-follower": 2.0,
                "near-remote-contact": 20.0, "far-remote-contact": 83.0}
    observed = {r["placement"]: float(r["weak_mean_ms"]) for r in table}
    record_property("observed", " ".join(f"{k}={v}" for k, v in observed.items()))
    assert set(observed) == set(expected)
    for placement, rtt in expected.items():
        assert abs(observed[placement] - rtt) <= 0.5


@criterion(3, "divergence: C = 0, A > B > 0, A >= 15% over 1e4 reads x 5 seeds, < 2 min")
def test_divergence(record_property):
    start = time.perf_counter()
    table = experiments.divergence(seeds=range(5), reads=10_000)
    elapsed = time.perf_counter() - start
    total = {r[0]: r for r in table.rows if r[2] == "all"}
    rate = {w: total[w][table.headers.index("divergence_rate")] for w in "ABC"}
    reads = {w: total[w][table.headers.index("icg_reads")] for w in "ABC"}
    record_property("observed", f"A={rate['A']:.4f} B={rate['B']:.4f} C={rate['C']:.4f} "
                                f"lag={experiments.CALIBRATED_LAG} t={elapsed:.0f}s")
    assert all(n == 50_000 for n in reads.values())
    assert total["C"][table.headers.index("diverged")] == 0
    assert rate["A"] > rate["B"] > 0
    assert rate["A"] >= 0.15
    assert elapsed < 120


@criterion(4, "bandwidth: C1 < *CC2 < CC2; zero-divergence overhead <= 25%; forced-stale *CC2 ~ CC2 (5%)")
def test_bandwidth(record_property):
    table = experiments.bandwidth()
    cost = {(r[0], r[1]): r[2] for r in table.rows}
    for scenario in ("A", "B", "zero-divergence"):
        assert cost[(scenario, "C1")] < cost[(scenario, "*CC2")] < cost[(scenario, "CC2")]
    zero = cost[("zero-divergence", "*CC2")] / cost[("zero-divergence", "C1")] - 1
    stale = abs(cost[("forced-stale", "*CC2")] - cost[("forced-stale", "CC2")]) / cost[("forced-stale", "CC2")]
    over = {s: cost[(s, "*CC2")] / cost[(s, "C1")] - 1 for s in ("A", "B")}
    unopt = {s: cost[(s, "CC2")] / cost[(s, "C1")] - 1 for s in ("A", "B")}
    record_property("observed", f"zero-div overhead={zero:.3f} stale gap={stale:.3f} "
                                f"A {over['A']:.2f}/{unopt['A']:.2f} B {over['B']:.2f}/{unopt['B']:.2f}")
    assert zero <= 0.25
    assert stale <= 0.05


@criterion(5, "dequeue bytes/op constant (<1%) across sizes 10/500/1000; naive grows linearly")
def test_dequeue_bandwidth(record_property):
    table = experiments.dequeue_bandwidth(sizes=(10, 500, 1000))
    cost = {(r[0], r[1]): r[2] for r in table.rows}
    icg = [cost[(s, "icg")] for s in (10, 500, 1000)]
    naive = [cost[(s, "naive")] for s in (10, 500, 1000)]
    record_property("observed", f"icg={icg} naive={naive}")
    assert (max(icg) - min(icg)) / min(icg) < 0.01
    # every queued item adds at least its own wire size (20-byte payload + 8-byte position)
    per_item = 28
    sizes = (10, 500, 1000)
    for (s0, b0), (s1, b1) in zip(zip(sizes, naive), list(zip(sizes, naive))[1:]):
        assert (b1 - b0) / (s1 - s0) >= per_item
    assert all(b >= per_item * s for s, b in zip(sizes, naive))


@criterion(6, "speculation algebra: all view sequences (len <= 3, 2 values) match the oracle")
def test_speculation_algebra(record_property):
    checked = agree = 0
    for confirmations in (False, True):
        for values in value_sequences(3, ("a", "b")):
            spec, abort, out = run_speculation(values, confirmations)
            checked += 1
            agree += (spec, abort) == oracle_counts(values) and out.value == ("derived", values[-1])
    record_property("observed", f"{agree}/{checked} sequences agree")
    assert checked == 28
    assert agree == checked


@criterion(7, "quorum safety: exhaustive interleavings (2 writers, 1 reader, N=3 R=2 W=2), 0 violations")
def test_quorum_safety(record_property):
    result = explore(n=3, r=2, w=2, writers=2)
    control = explore(n=3, r=1, w=1, writers=2)
    record_property("observed", f"states={result.states} reads={result.reads_checked} "
                                f"violations={result.violations} (R=W=1 control: {control.violations})")
    assert result.violations == 0
    assert result.reads_checked > 0
    assert control.violations > 0


@criterion(8, "no overselling over 100 ticket-shop runs; contradicted <= threshold")
def test_no_overselling(record_property):
    worst_contradicted = 0
    for seed in range(100):
        r = experiments.run_ticket_shop(seed, stock=500, retailers=4, threshold=20)
        assert r.confirmed <= 500, seed
        assert r.contradicted <= 20, seed
        assert r.committed_removals == 500
        worst_contradicted = max(worst_contradicted, r.contradicted)
    record_property("observed", f"max contradicted={worst_contradicted}")


@criterion(9, "state machine: 1e4 randomized schedules, monotone ranks, single terminal, replay, violations")
def test_state_machine_schedules(record_property):
    rng = random.Random(20240601)
    n = 10_000
    for _ in range(n):
        check_schedule(*random_schedule(rng))
    record_property("observed", f"{n} schedules, 0 failures")


@criterion(10, "determinism: every bench command twice with the same seed gives byte-identical CSV")
def test_determinism(tmp_path, record_property):
    small = {
        "divergence": ["--runs", "1", "--ops", "300"],
        "tickets": ["--runs", "2"],
        "ads": ["--ops", "50"],
        "timeline": ["--ops", "50"],
        "bandwidth": ["--ops", "300"],
        "latency-gap": ["--ops", "20"],
        "queue-latency": ["--ops", "10"],
        "dequeue-bandwidth": ["--ops", "10"],
        "news": [],
    }
    commands = [["experiment", name, "--seed", "3"] + small[name] for name in EXPERIMENTS]
    for binding in ("quorum", "queue", "tiered"):
        commands.append(["run", "--binding", binding, "--workload", "A", "--dist", "latest", "--ops", "400",
                         "--objects", "50", "--seed", "5", "--icg", "--clients-per-region", "2"])
    for i, cmd in enumerate(commands):
        run_cli(cmd, tmp_path, f"{i}a.csv")
        run_cli(cmd, tmp_path, f"{i}b.csv")
        first = (tmp_path / f"{i}a.csv").read_bytes()
        assert first == (tmp_path / f"{i}b.csv").read_bytes(), cmd
        assert first.count(b"\n") >= 2
    record_property("observed", f"{len(commands)} commands")
