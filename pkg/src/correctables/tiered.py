"""Primary-backup storage fronted by a client-side write-through cache.

:class:`CacheBinding` exposes three levels (cache, backup, primary).
:class:`PrimaryBackupBinding` is the minimal two-level binding that queries
the closest backup and then the primary, one after the other.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .binding import STRONG, WEAK, Binding, ClientEndpoint, OrderedDelivery, timeout_error
from .client import Library, Operation, OpKind
from .core import ConsistencyLevel, Correctable, ErrorInfo, View, same_value
from .quorum import digest
from .sim import DIGEST_BYTES, HEADER_BYTES, Message, SimNet

CACHE = ConsistencyLevel(0, "cache")
BACKUP = ConsistencyLevel(1, "backup")
PRIMARY = ConsistencyLevel(2, "primary")

VERSION_BYTES = 8


@dataclass
class CacheEntry:
    key: bytes
    value: bytes
    version: int
    cached_at: float


class TieredStore:
    """A primary (the only write serializer) and one lagging backup."""

    def __init__(self, net: SimNet, primary: tuple, backup: tuple, backup_lag_ms: float = 20.0):
        self.net = net
        self.primary, primary_region = primary
        self.backup, backup_region = backup
        self.backup_lag_ms = backup_lag_ms
        self.data: dict[str, dict[bytes, tuple[int, bytes]]] = {self.primary: {}, self.backup: {}}
        net.add_node(self.primary, primary_region, self._handler(self.primary))
        net.add_node(self.backup, backup_region, self._handler(self.backup))

    def _handler(self, node):
        def handle(msg: Message):
            getattr(self, "_on_" + msg.kind)(node, msg)
        return handle

    def load(self, items: dict):
        for key, value in items.items():
            key = key.encode() if isinstance(key, str) else key
            for node in (self.primary, self.backup):
                self.data[node][key] = (0, value)

    def current(self, node: str, key: bytes) -> Optional[tuple[int, bytes]]:
        return self.data[node].get(key)

    def _on_Get(self, node: str, msg: Message):
        key, known = msg.body["key"], msg.body["known"]
        version, value = self.data[node].get(key, (-1, None))
        if known is not None and digest(value) == known:
            body = {"confirmation": True, "version": version}
            size = HEADER_BYTES + DIGEST_BYTES + VERSION_BYTES
        else:
            body = {"confirmation": False, "version": version, "value": value}
            size = HEADER_BYTES + VERSION_BYTES + (len(value) if value is not None else 0)
        self.net.send(node, msg.src, "GetReply", size, body, op_id=msg.op_id)

    def _on_Put(self, node: str, msg: Message):
        if node != self.primary:
            raise RuntimeError("writes must go to the primary")
        key, value = msg.body["key"], msg.body["value"]
        version = self.data[node].get(key, (0, None))[0] + 1
        self.data[node][key] = (version, value)
        self.net.send(node, msg.src, "PutAck", HEADER_BYTES + VERSION_BYTES, {"version": version}, op_id=msg.op_id)
        size = HEADER_BYTES + VERSION_BYTES + len(key) + len(value)
        self.net.clock.call_later(self.backup_lag_ms, self.net.send, node, self.backup, "Replicate", size,
                                  {"key": key, "version": version, "value": value}, None, True)

    def _on_Replicate(self, node: str, msg: Message):
        key = msg.body["key"]
        if self.data[node].get(key, (-1, None))[0] < msg.body["version"]:
            self.data[node][key] = (msg.body["version"], msg.body["value"])


class CacheBinding(Binding):
    """Three-level binding; the cache is private to this client."""

    def __init__(self, store: TieredStore, client_id: str, region: str, timeout_ms: float = 2000.0):
        self.store = store
        self.endpoint = ClientEndpoint(store.net, client_id, region, timeout_ms)
        self.cache: dict[bytes, CacheEntry] = {}

    def consistency_levels(self) -> list[ConsistencyLevel]:
        return [CACHE, BACKUP, PRIMARY]

    def submit_operation(self, op: Operation, levels: Sequence[ConsistencyLevel], callback) -> None:
        if op.kind is OpKind.READ:
            self._get(op.key, levels, callback)
        elif op.kind is OpKind.WRITE:
            self._put(op.key, op.payload, levels, callback)
        else:
            raise NotImplementedError(f"tiered store does not support {op.kind.value}")

    def _get(self, key: bytes, levels, callback):
        ep = self.endpoint
        entry = self.cache.get(key)
        known = digest(entry.value) if entry is not None else None
        last = {}
        top = levels[-1]

        def emit(view):
            if isinstance(view, ErrorInfo):
                callback(view)
                return
            # a view held back for rank order reaches the application only now
            view = replace(view, arrival_time=ep.now)
            # only flag a confirmation when it matches the view right before it
            if view.is_confirmation and not ("value" in last and same_value(last["value"], view.value)):
                view = replace(view, is_confirmation=False)
            last["value"] = view.value
            if view.level == top and "version" in last_versions.get(view.level.rank, {}):
                self._refresh(key, view.value, last_versions[view.level.rank]["version"])
            callback(view)

        last_versions: dict[int, dict] = {}
        delivery = OrderedDelivery(levels, emit)

        if CACHE in levels:
            if entry is not None:
                ep.net.clock.call_later(0, lambda: delivery.offer(View(entry.value, CACHE, arrival_time=ep.now)))
            elif len(levels) == 1:
                # cache-only request on a miss closes with not-found
                ep.net.clock.call_later(0, lambda: delivery.offer(View(None, CACHE, arrival_time=ep.now)))
            else:
                delivery.skip(CACHE)

        tiers = {}
        if BACKUP in levels:
            tiers[self.store.backup] = BACKUP
        if PRIMARY in levels:
            tiers[self.store.primary] = PRIMARY
        if not tiers:
            return
        outstanding = set(tiers)

        def on_reply(msg: Message):
            level = tiers[msg.src]
            outstanding.discard(msg.src)
            if not outstanding:
                ep.close(op_id)
            body = msg.body
            if body["confirmation"]:
                view = View(entry.value, level, is_confirmation=True, arrival_time=ep.now)
            else:
                view = View(body["value"], level, arrival_time=ep.now)
                last_versions[level.rank] = {"version": body["version"]}
            delivery.offer(view)

        op_id = ep.open(on_reply, lambda: delivery.fail(timeout_error(f"get {key!r}")))
        for node in tiers:
            ep.send(node, "Get", HEADER_BYTES + len(key) + DIGEST_BYTES, {"key": key, "known": known}, op_id)

    def _refresh(self, key: bytes, value, version: int):
        if value is None:
            return
        entry = self.cache.get(key)
        if entry is None or entry.version < version:
            self.cache[key] = CacheEntry(key, value, version, self.endpoint.now)

    def _put(self, key: bytes, value: bytes, levels, callback):
        ep = self.endpoint

        def on_reply(msg: Message):
            ep.close(op_id)
            version = msg.body["version"]
            entry = self.cache.get(key)
            if entry is None or entry.version < version:
                self.cache[key] = CacheEntry(key, value, version, ep.now)
            for i, level in enumerate(levels):
                callback(View(version, level, is_confirmation=i > 0, arrival_time=ep.now))

        op_id = ep.open(on_reply, lambda: callback(timeout_error(f"put {key!r}")))
        ep.send(self.store.primary, "Put", HEADER_BYTES + len(key) + len(value), {"key": key, "value": value}, op_id)


def tiered_get(lib: Library, key, levels=None) -> Correctable:
    return lib.invoke(Operation.read(key), levels)


def tiered_put(lib: Library, key, value: bytes) -> Correctable:
    return lib.invoke_strong(Operation.write(key, value))


class PrimaryBackupBinding(Binding):
    """Two levels: WEAK from the closest backup, then STRONG from the primary."""

    def __init__(self, store: TieredStore, client_id: str, region: str, timeout_ms: float = 2000.0):
        self.store = store
        self.endpoint = ClientEndpoint(store.net, client_id, region, timeout_ms)

    def consistency_levels(self) -> list[ConsistencyLevel]:
        return [WEAK, STRONG]

    def submit_operation(self, op: Operation, levels: Sequence[ConsistencyLevel], callback) -> None:
        if op.kind is not OpKind.READ:
            raise NotImplementedError("this binding only reads")
        steps = []
        if WEAK in levels:
            steps.append((self.store.backup, WEAK))
        if STRONG in levels:
            steps.append((self.store.primary, STRONG))
        self._query(op.key, steps, callback)

    def _query(self, key: bytes, steps, callback):
        if not steps:
            return
        ep = self.endpoint
        (node, level), rest = steps[0], steps[1:]

        def on_reply(msg: Message):
            ep.close(op_id)
            callback(View(msg.body.get("value"), level, arrival_time=ep.now))
            self._query(key, rest, callback)

        op_id = ep.open(on_reply, lambda: callback(timeout_error(f"read {key!r} at {level}")))
        ep.send(node, "Get", HEADER_BYTES + len(key), {"key": key, "known": None}, op_id)
