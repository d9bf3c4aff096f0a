"""N-replica last-write-wins key-value store with a coordinator that flushes a
preliminary view before gathering its read quorum.

Wire message kinds: ReadRequest, ReplicaRead, ReplicaResponse,
PreliminaryView, FinalView (full or confirmation), Response (single level),
WriteRequest, ReplicaWrite, ReplicaWriteAck, WriteAck, AntiEntropyPush.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .binding import STRONG, WEAK, Binding, ClientEndpoint, timeout_error
from .client import Library, Operation, OpKind
from .core import (
    ConsistencyLevel,
    ErrorInfo,
    ErrorKind,
    UsageError,
    View,
    canonical_bytes,
    same_value,
)
from .sim import DIGEST_BYTES, HEADER_BYTES, Message, SimNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VersionedValue:
    value: Optional[bytes]
    timestamp: float
    writer_replica: int

    @property
    def version(self) -> tuple:
        return (self.timestamp, self.writer_replica)


def merge_lww(versions: Iterable[VersionedValue]) -> VersionedValue:
    """Pick the version with the greatest (timestamp, writer_replica)."""
    versions = list(versions)
    if not versions:
        raise UsageError("merge_lww needs at least one version")
    return max(versions, key=lambda v: v.version)


def digest(value) -> bytes:
    """8-byte token standing in for a value in confirmation messages."""
    return hashlib.blake2b(canonical_bytes(value), digest_size=DIGEST_BYTES).digest()


def _value_of(v: Optional[VersionedValue]) -> Optional[bytes]:
    return None if v is None else v.value


def _wire_len(value) -> int:
    return 0 if value is None else len(value)


@dataclass
class QuorumConfig:
    n_replicas: int = 3
    r_weak: int = 1
    r_strong: int = 2
    w: int = 1
    lag_min: float = 5.0
    lag_max: float = 50.0
    confirmations: bool = True
    # test mode: preliminary views deliberately come from the previous version
    stale_preliminary: bool = False
    timeout_ms: float = 2000.0

    def __post_init__(self):
        if not 1 <= self.r_weak < self.r_strong <= self.n_replicas:
            raise UsageError(f"need 1 <= r_weak < r_strong <= N, got {self.r_weak}, {self.r_strong}, {self.n_replicas}")
        if not 1 <= self.w <= self.n_replicas:
            raise UsageError(f"need 1 <= W <= N, got W={self.w}")
        if not 0 <= self.lag_min <= self.lag_max:
            raise UsageError("replication lag range must satisfy 0 <= min <= max")


class Replica:
    def __init__(self, node: str, index: int):
        self.node = node
        self.index = index
        self.data: dict[bytes, VersionedValue] = {}
        self.previous: dict[bytes, VersionedValue] = {}

    def __repr__(self):
        return f"<Replica {self.node} keys={len(self.data)}>"

    def read(self, key: bytes) -> Optional[VersionedValue]:
        return self.data.get(key)

    def apply(self, key: bytes, version: VersionedValue) -> bool:
        cur = self.data.get(key)
        if cur is not None and cur.version >= version.version:
            return False
        if cur is not None:
            self.previous[key] = cur
        self.data[key] = version
        return True

    def stale_read(self, key: bytes) -> Optional[bytes]:
        prev = self.previous.get(key)
        if prev is not None:
            return prev.value
        cur = self.data.get(key)
        # no older version exists: fabricate a same-sized value that cannot match
        return b"" if cur is None or not cur.value else bytes(len(cur.value))


@dataclass
class CoordinatorSession:
    op_id: int
    client: str
    key: bytes
    weak: bool
    responses: list = field(default_factory=list)
    preliminary_digest: Optional[bytes] = None


@dataclass
class _WriteSession:
    op_id: int
    client: str
    version: VersionedValue
    acks: int = 1


class QuorumStore:
    """The replicas plus coordinator logic, living on a :class:`SimNet`."""

    def __init__(self, net: SimNet, nodes: Sequence[tuple], config: Optional[QuorumConfig] = None):
        self.net = net
        self.config = config or QuorumConfig(n_replicas=len(nodes))
        if self.config.n_replicas != len(nodes):
            raise UsageError(f"config says N={self.config.n_replicas} but {len(nodes)} nodes given")
        self.replicas: dict[str, Replica] = {}
        for index, (node, region) in enumerate(nodes):
            self.replicas[node] = Replica(node, index)
            net.add_node(node, region, self._handler(node))
        self._reads: dict[tuple, CoordinatorSession] = {}
        self._writes: dict[tuple, _WriteSession] = {}
        self._last_stamp: dict[str, float] = {}
        self.preliminaries_sent = 0
        self.confirmations_sent = 0

    def _handler(self, node):
        def handle(msg: Message):
            getattr(self, "_on_" + msg.kind)(node, msg)
        return handle

    def load(self, items: dict):
        """Install an initial version of every key on all replicas (no traffic)."""
        for key, value in items.items():
            key = key.encode() if isinstance(key, str) else key
            for rep in self.replicas.values():
                rep.apply(key, VersionedValue(value, 0.0, 0))

    def peers_by_distance(self, node: str) -> list[str]:
        others = [n for n in self.replicas if n != node]
        return sorted(others, key=lambda n: (self.net.latency(node, n), self.replicas[n].index))

    def _stamp(self, node: str) -> float:
        ts = max(self.net.now, self._last_stamp.get(node, -1.0) + 0.001)
        self._last_stamp[node] = ts
        return ts

    def _send(self, src, dst, kind, size, body, op_id=None, background=False):
        self.net.send(src, dst, kind, size, body, op_id=op_id, background=background)

    # -- reads -----------------------------------------------------------

    def _on_ReadRequest(self, node: str, msg: Message):
        body = msg.body
        key = body["key"]
        replica = self.replicas[node]
        local = replica.read(key)
        if not body["strong"]:
            value = _value_of(local)
            self._send(node, msg.src, "Response", HEADER_BYTES + len(key) + _wire_len(value),
                       {"value": value}, msg.op_id)
            return
        session = CoordinatorSession(msg.op_id, msg.src, key, body["weak"], [local])
        if body["weak"]:
            if self.config.stale_preliminary:
                prelim = replica.stale_read(key)
            else:
                prelim = _value_of(local)
            session.preliminary_digest = digest(prelim)
            self.preliminaries_sent += 1
            self._send(node, msg.src, "PreliminaryView", HEADER_BYTES + len(key) + _wire_len(prelim),
                       {"value": prelim}, msg.op_id)
        if len(session.responses) >= self.config.r_strong:
            self._finish_read(node, session)
            return
        self._reads[(node, msg.op_id)] = session
        for peer in self.peers_by_distance(node):
            self._send(node, peer, "ReplicaRead", HEADER_BYTES + len(key), {"key": key}, msg.op_id)

    def _on_ReplicaRead(self, node: str, msg: Message):
        key = msg.body["key"]
        version = self.replicas[node].read(key)
        size = HEADER_BYTES + len(key) + _wire_len(_value_of(version)) + DIGEST_BYTES
        self._send(node, msg.src, "ReplicaResponse", size, {"version": version}, msg.op_id)

    def _on_ReplicaResponse(self, node: str, msg: Message):
        session = self._reads.get((node, msg.op_id))
        if session is None:
            return
        session.responses.append(msg.body["version"])
        if len(session.responses) >= self.config.r_strong:
            del self._reads[(node, msg.op_id)]
            self._finish_read(node, session)

    def _finish_read(self, node: str, session: CoordinatorSession):
        present = [v for v in session.responses if v is not None]
        merged = _value_of(merge_lww(present)) if present else None
        token = digest(merged)
        if session.weak and self.config.confirmations and token == session.preliminary_digest:
            self.confirmations_sent += 1
            self._send(node, session.client, "FinalView", HEADER_BYTES + DIGEST_BYTES,
                       {"confirmation": True, "digest": token}, session.op_id)
        else:
            self._send(node, session.client, "FinalView",
                       HEADER_BYTES + len(session.key) + _wire_len(merged),
                       {"confirmation": False, "value": merged}, session.op_id)

    # -- writes ----------------------------------------------------------

    def _on_WriteRequest(self, node: str, msg: Message):
        key, value = msg.body["key"], msg.body["value"]
        replica = self.replicas[node]
        version = VersionedValue(value, self._stamp(node), replica.index)
        replica.apply(key, version)
        size = HEADER_BYTES + len(key) + len(value) + DIGEST_BYTES
        peers = self.peers_by_distance(node)
        sync, lazy = peers[: self.config.w - 1], peers[self.config.w - 1:]
        for peer in lazy:
            lag = self.net.rng.uniform(self.config.lag_min, self.config.lag_max)
            self.net.clock.call_later(lag, self._send, node, peer, "AntiEntropyPush", size,
                                      {"key": key, "version": version}, None, True)
        if not sync:
            self._send(node, msg.src, "WriteAck", HEADER_BYTES, {"version": version}, msg.op_id)
            return
        self._writes[(node, msg.op_id)] = _WriteSession(msg.op_id, msg.src, version)
        for peer in sync:
            self._send(node, peer, "ReplicaWrite", size, {"key": key, "version": version}, msg.op_id)

    def _on_ReplicaWrite(self, node: str, msg: Message):
        self.replicas[node].apply(msg.body["key"], msg.body["version"])
        self._send(node, msg.src, "ReplicaWriteAck", HEADER_BYTES, None, msg.op_id)

    def _on_ReplicaWriteAck(self, node: str, msg: Message):
        session = self._writes.get((node, msg.op_id))
        if session is None:
            return
        session.acks += 1
        if session.acks >= self.config.w:
            del self._writes[(node, msg.op_id)]
            self._send(node, session.client, "WriteAck", HEADER_BYTES, {"version": session.version}, msg.op_id)

    def _on_AntiEntropyPush(self, node: str, msg: Message):
        self.replicas[node].apply(msg.body["key"], msg.body["version"])


class QuorumBinding(Binding):
    """Client-side binding: levels weak (R=1) and strong (R=r_strong)."""

    def __init__(self, store: QuorumStore, client_id: str, region: str, coordinator: str,
                 timeout_ms: Optional[float] = None):
        if coordinator not in store.replicas:
            raise UsageError(f"{coordinator} is not a replica")
        self.store = store
        self.coordinator = coordinator
        self.endpoint = ClientEndpoint(store.net, client_id, region,
                                       timeout_ms if timeout_ms is not None else store.config.timeout_ms)

    def consistency_levels(self) -> list[ConsistencyLevel]:
        return [WEAK, STRONG]

    def submit_operation(self, op: Operation, levels: Sequence[ConsistencyLevel], callback) -> None:
        if op.kind is OpKind.READ:
            self._read(op, levels, callback)
        elif op.kind is OpKind.WRITE:
            self._write(op, levels, callback)
        else:
            raise NotImplementedError(f"quorum store does not support {op.kind.value}")

    def _read(self, op: Operation, levels, callback):
        weak, strong = WEAK in levels, STRONG in levels
        ep = self.endpoint
        seen = {}

        def on_reply(msg: Message):
            body = msg.body
            if msg.kind == "PreliminaryView":
                seen["prelim"] = body["value"]
                callback(View(body["value"], WEAK, arrival_time=ep.now))
                if "final" in seen:
                    on_reply(seen.pop("final"))
                return
            if weak and strong and "prelim" not in seen:
                seen["final"] = msg
                return
            ep.close(op_id)
            level = STRONG if strong else WEAK
            if body.get("confirmation"):
                if digest(seen.get("prelim")) != body["digest"]:
                    callback(ErrorInfo(ErrorKind.STORAGE_ERROR, "confirmation does not match preliminary view"))
                    return
                callback(View(None, level, is_confirmation=True, arrival_time=ep.now))
            else:
                callback(View(body["value"], level, arrival_time=ep.now))

        op_id = ep.open(on_reply, lambda: callback(timeout_error(f"read {op.key!r}")))
        ep.send(self.coordinator, "ReadRequest", HEADER_BYTES + len(op.key),
                {"key": op.key, "weak": weak, "strong": strong}, op_id)

    def _write(self, op: Operation, levels, callback):
        ep = self.endpoint

        def on_reply(msg: Message):
            ep.close(op_id)
            version = msg.body["version"]
            for i, level in enumerate(levels):
                callback(View(version, level, is_confirmation=i > 0, arrival_time=ep.now))

        op_id = ep.open(on_reply, lambda: callback(timeout_error(f"write {op.key!r}")))
        ep.send(self.coordinator, "WriteRequest", HEADER_BYTES + len(op.key) + len(op.payload),
                {"key": op.key, "value": op.payload}, op_id)


def divergence_probe(lib: Library, key, clock, timeout_ms: float = 5000.0) -> bool:
    """Issue a two-level read and report whether the preliminary differed from the final view."""
    c = lib.invoke(Operation.read(key))
    final = c.await_final(timeout_ms, clock=clock)
    views = c.views
    if not views:
        raise UsageError("divergence probe needs a binding that delivers a preliminary view")
    return not same_value(views[0].value, final)
