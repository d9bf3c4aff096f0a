"""Leader-ordered replicated FIFO queue.

The contact replica answers a weak view at once by simulating the operation
on its local state, forwards the operation to a static leader, and answers
the strong view once the operation has been committed by a majority and
applied locally.

Wire message kinds: QueueRequest, WeakReply, Forward, Propose, Ack, Commit,
StrongReply (item, null or confirmation), ReadQueue / QueueContents (the
read-whole-queue baseline).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .binding import STRONG, WEAK, Binding, ClientEndpoint, timeout_error
from .client import Operation, OpKind
from .core import ConsistencyLevel, ErrorInfo, ErrorKind, UsageError, View
from .quorum import digest
from .sim import DIGEST_BYTES, HEADER_BYTES, Message, SimNet

POSITION_BYTES = 8
MAX_PAYLOAD = 20


@dataclass(frozen=True)
class QueueItem:
    payload: bytes
    position: int

    @property
    def wire_size(self) -> int:
        return len(self.payload) + POSITION_BYTES


def _item_size(item: Optional[QueueItem]) -> int:
    return 0 if item is None else item.wire_size


@dataclass
class QueueOp:
    op_id: int
    kind: str  # "enqueue" | "dequeue" | "remove"
    queue: bytes
    payload: Optional[bytes] = None
    position: Optional[int] = None
    origin: str = ""
    client: str = ""
    reply: bool = True

    @property
    def wire_size(self) -> int:
        size = len(self.queue) + len(self.payload or b"")
        return size + (POSITION_BYTES if self.position is not None else 0)


@dataclass
class BroadcastRound:
    seq: int
    op: QueueOp
    acks: set = field(default_factory=set)


class QueueReplica:
    def __init__(self, node: str, index: int):
        self.node = node
        self.index = index
        self.queues: dict[bytes, deque] = {}
        self.next_position: dict[bytes, int] = {}
        self.last_committed_seq = 0
        self.log: list[int] = []
        self.proposals: dict[int, QueueOp] = {}
        self.commit_notices: set[int] = set()
        self.pending_local: dict[int, QueueOp] = {}
        self.weak_digests: dict[int, bytes] = {}

    def __repr__(self):
        return f"<QueueReplica {self.node} seq={self.last_committed_seq}>"

    def queue(self, name: bytes) -> deque:
        return self.queues.setdefault(name, deque())

    def head(self, name: bytes) -> Optional[QueueItem]:
        q = self.queues.get(name)
        return q[0] if q else None

    def simulate(self, op: QueueOp):
        """The weak result: what this replica believes the operation will return."""
        if op.kind == "enqueue":
            pending = sum(1 for p in self.pending_local.values() if p.kind == "enqueue" and p.queue == op.queue)
            return QueueItem(op.payload, self.next_position.get(op.queue, 1) + pending)
        if op.kind == "dequeue":
            return self.head(op.queue)
        raise UsageError(f"no weak semantics for {op.kind}")

    def apply(self, op: QueueOp):
        q = self.queue(op.queue)
        if op.kind == "enqueue":
            pos = self.next_position.get(op.queue, 1)
            self.next_position[op.queue] = pos + 1
            item = QueueItem(op.payload, pos)
            q.append(item)
            return item
        if op.kind == "dequeue":
            return q.popleft() if q else None
        if op.kind == "remove":
            for item in q:
                if item.position == op.position:
                    q.remove(item)
                    return item
            return None
        raise UsageError(f"unknown queue operation {op.kind}")


class QueueCluster:
    """Replicas of the queue plus the static leader's broadcast state."""

    def __init__(self, net: SimNet, nodes: Sequence[tuple], leader: str,
                 max_payload: int = MAX_PAYLOAD, timeout_ms: float = 5000.0):
        self.net = net
        self.replicas: dict[str, QueueReplica] = {}
        for index, (node, region) in enumerate(nodes):
            self.replicas[node] = QueueReplica(node, index)
            net.add_node(node, region, self._handler(node))
        if leader not in self.replicas:
            raise UsageError(f"leader {leader} is not a replica")
        self.leader = leader
        self.majority = len(self.replicas) // 2 + 1
        self.max_payload = max_payload
        self.timeout_ms = timeout_ms
        self.next_seq = 1
        self.commit_index = 0
        self.rounds: dict[int, BroadcastRound] = {}

    def _handler(self, node):
        def handle(msg: Message):
            getattr(self, "_on_" + msg.kind)(node, msg)
        return handle

    @property
    def followers(self) -> list[str]:
        return [n for n in self.replicas if n != self.leader]

    def load(self, queue: bytes, payloads):
        """Pre-populate a queue identically on every replica (no traffic)."""
        for rep in self.replicas.values():
            for payload in payloads:
                rep.apply(QueueOp(0, "enqueue", queue, payload))

    def committed(self, node: str, queue: bytes = b"queue") -> list[QueueItem]:
        return list(self.replicas[node].queues.get(queue, ()))

    def check_prefix_agreement(self) -> bool:
        leader_log = self.replicas[self.leader].log
        for node in self.followers:
            log = self.replicas[node].log
            if len(log) > len(leader_log) or leader_log[: len(log)] != log:
                return False
        return True

    def _send(self, src, dst, kind, size, body, op_id):
        self.net.send(src, dst, kind, size, body, op_id=op_id)

    # -- contact replica -------------------------------------------------

    def _on_QueueRequest(self, node: str, msg: Message):
        body = msg.body
        rep = self.replicas[node]
        op: QueueOp = replace(body["op"], origin=node, client=msg.src, reply=body["strong"])
        if body["weak"]:
            result = rep.simulate(op)
            if body["strong"]:
                rep.weak_digests[op.op_id] = digest(result)
            self._send(node, msg.src, "WeakReply", HEADER_BYTES + _item_size(result), {"item": result}, op.op_id)
        rep.pending_local[op.op_id] = op
        if node == self.leader:
            self._propose(op)
        else:
            self._send(node, self.leader, "Forward", HEADER_BYTES + op.wire_size, {"op": op}, op.op_id)

    def _on_ReadQueue(self, node: str, msg: Message):
        items = list(self.replicas[node].queues.get(msg.body["queue"], ()))
        size = HEADER_BYTES + sum(item.wire_size for item in items)
        self._send(node, msg.src, "QueueContents", size, {"items": items}, msg.op_id)

    # -- broadcast -------------------------------------------------------

    def _on_Forward(self, node: str, msg: Message):
        self._propose(msg.body["op"])

    def broadcast_commit(self, op: QueueOp) -> int:
        """Sequence ``op`` at the leader and start its broadcast round; returns the seq."""
        return self._propose(op)

    def _propose(self, op: QueueOp) -> int:
        seq = self.next_seq
        self.next_seq += 1
        self.replicas[self.leader].proposals[seq] = op
        self.rounds[seq] = BroadcastRound(seq, op, {self.leader})
        for follower in self.followers:
            self._send(self.leader, follower, "Propose", HEADER_BYTES + op.wire_size,
                       {"seq": seq, "op": op}, op.op_id)
        self._try_commit()
        return seq

    def _on_Propose(self, node: str, msg: Message):
        seq = msg.body["seq"]
        self.replicas[node].proposals[seq] = msg.body["op"]
        self._send(node, msg.src, "Ack", HEADER_BYTES, {"seq": seq}, msg.op_id)

    def _on_Ack(self, node: str, msg: Message):
        rnd = self.rounds.get(msg.body["seq"])
        if rnd is not None:
            rnd.acks.add(msg.src)
            self._try_commit()

    def _try_commit(self):
        # commits go out strictly in sequence order
        while True:
            rnd = self.rounds.get(self.commit_index + 1)
            if rnd is None or len(rnd.acks) < self.majority:
                return
            del self.rounds[rnd.seq]
            self.commit_index = rnd.seq
            self.replicas[self.leader].commit_notices.add(rnd.seq)
            self._apply_ready(self.leader)
            for follower in self.followers:
                self._send(self.leader, follower, "Commit", HEADER_BYTES, {"seq": rnd.seq}, rnd.op.op_id)

    def _on_Commit(self, node: str, msg: Message):
        self.replicas[node].commit_notices.add(msg.body["seq"])
        self._apply_ready(node)

    def _apply_ready(self, node: str):
        rep = self.replicas[node]
        while True:
            seq = rep.last_committed_seq + 1
            if seq not in rep.commit_notices or seq not in rep.proposals:
                return
            rep.commit_notices.discard(seq)
            op = rep.proposals.pop(seq)
            result = rep.apply(op)
            rep.last_committed_seq = seq
            rep.log.append(op.op_id)
            if op.origin == node:
                rep.pending_local.pop(op.op_id, None)
                weak_digest = rep.weak_digests.pop(op.op_id, None)
                if op.reply:
                    self._strong_reply(node, op, result, weak_digest)

    def _strong_reply(self, node: str, op: QueueOp, result, weak_digest):
        token = digest(result)
        if weak_digest is not None and token == weak_digest:
            self._send(node, op.client, "StrongReply", HEADER_BYTES + DIGEST_BYTES,
                       {"confirmation": True, "digest": token}, op.op_id)
        else:
            self._send(node, op.client, "StrongReply", HEADER_BYTES + _item_size(result),
                       {"confirmation": False, "item": result}, op.op_id)


class QueueBinding(Binding):
    """Client binding for the replicated queue: weak (local simulation) and strong (committed)."""

    def __init__(self, cluster: QueueCluster, client_id: str, region: str, contact: str,
                 timeout_ms: Optional[float] = None):
        if contact not in cluster.replicas:
            raise UsageError(f"{contact} is not a queue replica")
        self.cluster = cluster
        self.contact = contact
        self.endpoint = ClientEndpoint(cluster.net, client_id, region,
                                       timeout_ms if timeout_ms is not None else cluster.timeout_ms)

    def consistency_levels(self) -> list[ConsistencyLevel]:
        return [WEAK, STRONG]

    def submit_operation(self, op: Operation, levels: Sequence[ConsistencyLevel], callback) -> None:
        if op.kind is OpKind.ENQUEUE:
            if len(op.payload) > self.cluster.max_payload:
                raise UsageError(f"queue payloads are limited to {self.cluster.max_payload} bytes")
            self._submit("enqueue", op, levels, callback)
        elif op.kind is OpKind.DEQUEUE:
            self._submit("dequeue", op, levels, callback)
        elif op.kind is OpKind.APP and op.name == "naive_dequeue":
            self._naive_dequeue(op, levels, callback)
        else:
            raise NotImplementedError(f"queue binding does not support {op.name or op.kind.value}")

    def _submit(self, kind: str, op: Operation, levels, callback):
        weak, strong = WEAK in levels, STRONG in levels
        ep = self.endpoint
        seen = {}

        def on_reply(msg: Message):
            if msg.kind == "WeakReply":
                seen["weak"] = msg.body["item"]
                if not strong:
                    ep.close(qop.op_id)
                    callback(View(msg.body["item"], WEAK, arrival_time=ep.now))
                    return
                callback(View(msg.body["item"], WEAK, arrival_time=ep.now))
                return
            ep.close(qop.op_id)
            if msg.body["confirmation"]:
                if "weak" not in seen or digest(seen["weak"]) != msg.body["digest"]:
                    callback(ErrorInfo(ErrorKind.STORAGE_ERROR, "confirmation does not match weak view"))
                    return
                callback(View(None, STRONG, is_confirmation=True, arrival_time=ep.now))
            else:
                callback(View(msg.body["item"], STRONG, arrival_time=ep.now))

        op_id = ep.open(on_reply, lambda: callback(timeout_error(f"{kind} on {op.key!r}")))
        qop = QueueOp(op_id, kind, op.key, op.payload)
        ep.send(self.contact, "QueueRequest", HEADER_BYTES + qop.wire_size,
                {"op": qop, "weak": weak, "strong": strong}, op_id)

    def _naive_dequeue(self, op: Operation, levels, callback):
        """Baseline recipe: read the whole queue, then try to remove its head; retry on conflict."""
        ep = self.endpoint
        queue = op.key

        def deliver(item):
            for i, level in enumerate(levels):
                callback(View(item, level, is_confirmation=i > 0, arrival_time=ep.now))

        def on_reply(msg: Message):
            if msg.kind == "QueueContents":
                items = msg.body["items"]
                if not items:
                    ep.close(op_id)
                    deliver(None)
                    return
                qop = QueueOp(op_id, "remove", queue, position=items[0].position)
                ep.send(self.contact, "QueueRequest", HEADER_BYTES + qop.wire_size,
                        {"op": qop, "weak": False, "strong": True}, op_id)
            elif msg.body["item"] is not None:
                ep.close(op_id)
                deliver(msg.body["item"])
            else:
                ep.send(self.contact, "ReadQueue", HEADER_BYTES + len(queue), {"queue": queue}, op_id)

        op_id = ep.open(on_reply, lambda: callback(timeout_error("naive dequeue")))
        ep.send(self.contact, "ReadQueue", HEADER_BYTES + len(queue), {"queue": queue}, op_id)
