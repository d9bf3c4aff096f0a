import random

import pytest

from correctables.client import Library, Operation
from correctables.core import CorrectableError, ErrorKind, UsageError
from correctables.quorum import (QuorumBinding, QuorumConfig, QuorumStore, VersionedValue, digest,
                                 divergence_probe, merge_lww)
from correctables.sim import DIGEST_BYTES, HEADER_BYTES, LatencyMatrix, SimClock, SimNet

from quorum_oracle import explore

REGIONS = ("FRK", "IRL", "VRG")


def deploy(config=None, jitter=0.0, seed=0):
    net = SimNet(LatencyMatrix.default(), SimClock(), seed=seed, jitter=jitter)
    store = QuorumStore(net, [(r, r) for r in REGIONS], config)
    return net, store


def client(store, name="c", region="IRL", coordinator="FRK"):
    return Library(QuorumBinding(store, name, region, coordinator))


def test_merge_lww_orders_by_timestamp_then_writer():
    a = VersionedValue(b"a", 5.0, 2)
    b = VersionedValue(b"b", 5.0, 1)
    c = VersionedValue(b"c", 4.0, 9)
    assert merge_lww([a, b, c]) is a
    assert merge_lww([c, b]) is b
    with pytest.raises(UsageError):
        merge_lww([])


def test_digest_is_eight_bytes_and_collision_free_on_sample():
    rng = random.Random(7)
    values = {rng.randbytes(100) for _ in range(10_000)}
    digests = {digest(v) for v in values}
    assert len(digests) == len(values)
    assert len(digest(b"x")) == DIGEST_BYTES
    assert digest(None) != digest(b"")


def test_config_validation():
    with pytest.raises(UsageError):
        QuorumConfig(r_weak=2, r_strong=2)
    with pytest.raises(UsageError):
        QuorumConfig(w=4)
    with pytest.raises(UsageError):
        QuorumConfig(lag_min=10, lag_max=5)


def test_icg_read_timing_and_confirmation_bytes():
    net, store = deploy()
    store.load({b"k": b"v" * 100})
    lib = client(store)
    c = lib.invoke(Operation.read(b"k"))
    net.clock.run()
    assert [v.arrival_time for v in c.views] == [20.0]
    assert c.final_view.arrival_time == 40.0
    assert c.final_view.is_confirmation and c.value == b"v" * 100
    assert net.meter.links[("FRK", "c")] == (HEADER_BYTES + 1 + 100) + (HEADER_BYTES + DIGEST_BYTES)
    assert store.confirmations_sent == 1


def test_unoptimized_final_carries_full_value():
    net, store = deploy(QuorumConfig(confirmations=False))
    store.load({b"k": b"v" * 100})
    c = client(store).invoke(Operation.read(b"k"))
    net.clock.run()
    assert not c.final_view.is_confirmation
    assert net.meter.links[("FRK", "c")] == 2 * (HEADER_BYTES + 1 + 100)


def test_r3_waits_for_farthest_replica():
    net, store = deploy(QuorumConfig(r_strong=3))
    store.load({b"k": b"v"})
    c = client(store).invoke_strong(Operation.read(b"k"))
    net.clock.run()
    assert c.final_view.arrival_time == 20 + 90


def test_missing_key_reads_none():
    net, store = deploy()
    c = client(store).invoke(Operation.read(b"nope"))
    net.clock.run()
    assert c.value is None and c.state == "final"


def test_write_then_strong_read_elsewhere_with_w2():
    net, store = deploy(QuorumConfig(w=2, lag_min=500, lag_max=500))
    store.load({b"k": b"old"})
    writer = client(store, "w", "VRG", "IRL")
    reader = client(store, "r", "FRK", "VRG")
    w = writer.invoke_strong(Operation.write(b"k", b"new"))
    w.await_final(1000, clock=net.clock)
    r = reader.invoke_strong(Operation.read(b"k"))
    assert r.await_final(1000, clock=net.clock) == b"new"


def test_divergence_probe_quiescent_is_false():
    net, store = deploy()
    store.load({b"k": b"v"})
    assert divergence_probe(client(store), b"k", net.clock) is False


def test_divergence_probe_constructed_stale_schedule():
    # write lands at IRL; FRK only hears of it after the lag, so a read
    # coordinated by FRK sees the old value first and the new one in the quorum
    net, store = deploy(QuorumConfig(lag_min=1000, lag_max=1000))
    store.load({b"k": b"old"})
    writer = client(store, "w", "IRL", "IRL")
    writer.invoke_strong(Operation.write(b"k", b"new")).await_final(100, clock=net.clock)
    reader = client(store, "r", "IRL", "FRK")
    c = reader.invoke(Operation.read(b"k"))
    net.clock.run(until=net.clock.now + 100)
    assert [v.value for v in c.views] == [b"old"]
    assert c.value == b"new" and not c.final_view.is_confirmation
    assert store.replicas["FRK"].read(b"k").value == b"old"


def test_stale_preliminary_mode_always_diverges():
    net, store = deploy(QuorumConfig(stale_preliminary=True))
    store.load({b"k": b"v" * 10})
    lib = client(store)
    assert all(divergence_probe(lib, b"k", net.clock) for _ in range(5))


def test_timestamps_strictly_increase_per_coordinator():
    net, store = deploy()
    lib = client(store, "w", "FRK", "FRK")
    versions = [lib.invoke_strong(Operation.write(b"k", b"%d" % i)) for i in range(3)]
    net.clock.run()
    stamps = [c.value.timestamp for c in versions]
    assert stamps == sorted(set(stamps))
    assert store.replicas["VRG"].read(b"k").value == b"2"


def test_write_levels_each_get_a_view():
    net, store = deploy()
    c = client(store).invoke(Operation.write(b"k", b"v"))
    net.clock.run()
    assert len(c.views) == 1 and c.final_view.is_confirmation


def test_coordinator_down_times_out():
    net, store = deploy(QuorumConfig(timeout_ms=300))
    net.crash("FRK")
    c = client(store).invoke(Operation.read(b"k"))
    with pytest.raises(CorrectableError) as exc:
        c.await_final(1000, clock=net.clock)
    assert exc.value.info.kind is ErrorKind.TIMEOUT
    assert net.clock.now == 300


def test_peer_down_gives_preliminary_then_timeout():
    net, store = deploy(QuorumConfig(r_strong=3, timeout_ms=500))
    store.load({b"k": b"v"})
    net.crash("VRG")
    c = client(store).invoke(Operation.read(b"k"))
    net.clock.run()
    assert [v.value for v in c.views] == [b"v"]
    assert c.error.kind is ErrorKind.TIMEOUT


def test_unsupported_operation_is_storage_error():
    net, store = deploy()
    c = client(store).invoke(Operation.dequeue())
    assert c.error.kind is ErrorKind.STORAGE_ERROR


def test_traffic_accounting_balances():
    net, store = deploy(jitter=5.0, seed=4)
    store.load({b"k": b"v"})
    lib = client(store)
    for i in range(20):
        lib.invoke(Operation.read(b"k"))
        lib.invoke_strong(Operation.write(b"k", b"%d" % i))
    net.clock.run()
    assert net.meter.balanced()
    assert net.meter.background > 0


def test_exhaustive_safety_r2_w2():
    result = explore(n=3, r=2, w=2, writers=2)
    assert result.reads_checked > 1000
    assert result.violations == 0


@pytest.mark.parametrize("r,w", [(1, 1), (2, 1), (1, 2)])
def test_exhaustive_explorer_finds_weak_quorum_violations(r, w):
    assert explore(n=3, r=r, w=w, writers=2).violations > 0


def test_randomized_strong_reads_never_older_than_acked_writes():
    for seed in range(10):
        net, store = deploy(QuorumConfig(w=2, lag_min=5, lag_max=300), jitter=30.0, seed=seed)
        store.load({b"k": b"init"})
        writers = [client(store, f"w{i}", REGIONS[i], REGIONS[(i + 1) % 3]) for i in range(2)]
        reader = client(store, "r", "VRG", "VRG")
        acked: list = []
        checks = []
        rng = random.Random(seed)

        def write(i, n):
            c = writers[i].invoke_strong(Operation.write(b"k", b"w%d-%d" % (i, n)))
            c.set_callbacks(on_final=lambda v: acked.append(v))
            if n < 15:
                net.clock.call_later(rng.uniform(0, 40), write, i, n + 1)

        def read(n):
            floor = max((v.version for v in acked), default=(0.0, 0))
            c = reader.invoke_strong(Operation.read(b"k"))
            c.set_callbacks(on_final=lambda value: checks.append((floor, value)))
            if n < 30:
                net.clock.call_later(rng.uniform(0, 30), read, n + 1)

        for i in range(2):
            write(i, 0)
        read(0)
        net.clock.run()
        stamp = {v.value: v.version for v in acked}
        stamp[b"init"] = (0.0, 0)
        assert len(checks) == 31
        for floor, value in checks:
            assert stamp[value] >= floor
