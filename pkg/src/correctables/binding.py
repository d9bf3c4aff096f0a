"""The storage-binding contract and client-side plumbing shared by the
simulated bindings."""

from __future__ import annotations

import abc
from typing import Callable, Optional, Sequence, Union

from .client import Operation
from .core import ConsistencyLevel, ErrorInfo, ErrorKind, View
from .sim import Message, SimNet

WEAK = ConsistencyLevel(0, "weak")
STRONG = ConsistencyLevel(1, "strong")

Upcall = Callable[[Union[View, ErrorInfo]], None]


class Binding(abc.ABC):
    """Adapter between the library and one storage stack.

    ``submit_operation`` must call ``callback`` once per requested level, in
    rank order, or hand it an :class:`ErrorInfo` to end the sequence early.
    """

    @abc.abstractmethod
    def consistency_levels(self) -> list[ConsistencyLevel]:
        ...

    @abc.abstractmethod
    def submit_operation(self, op: Operation, levels: Sequence[ConsistencyLevel], callback: Upcall) -> None:
        ...


def consistency_levels(b: Binding) -> list[ConsistencyLevel]:
    return b.consistency_levels()


def submit_operation(b: Binding, op: Operation, levels, callback: Upcall) -> None:
    b.submit_operation(op, levels, callback)


class ClientEndpoint:
    """A client node on the simulated network.

    Routes replies to the handler registered for their ``op_id`` and fires a
    timeout error if an operation is still open after ``timeout_ms``.
    """

    def __init__(self, net: SimNet, node_id: str, region: str, timeout_ms: float = 2000.0):
        self.net = net
        self.node_id = node_id
        self.timeout_ms = timeout_ms
        self._handlers: dict[int, Callable[[Message], None]] = {}
        self._timers: dict[int, object] = {}
        self.stray_replies = 0
        net.add_node(node_id, region, self._receive)

    @property
    def now(self) -> float:
        return self.net.clock.now

    def open(self, on_reply: Callable[[Message], None], on_timeout: Callable[[], None],
             timeout_ms: Optional[float] = None) -> int:
        op_id = self.net.next_op_id()
        self._handlers[op_id] = on_reply
        delay = self.timeout_ms if timeout_ms is None else timeout_ms

        def expire():
            if op_id in self._handlers:
                self.close(op_id)
                on_timeout()

        self._timers[op_id] = self.net.clock.call_later(delay, expire)
        return op_id

    def close(self, op_id: int):
        self._handlers.pop(op_id, None)
        timer = self._timers.pop(op_id, None)
        if timer is not None:
            timer.cancel()

    def send(self, dst: str, kind: str, size: int, body=None, op_id: Optional[int] = None):
        self.net.send(self.node_id, dst, kind, size, body, op_id=op_id)

    def _receive(self, msg: Message):
        handler = self._handlers.get(msg.op_id)
        if handler is None:
            self.stray_replies += 1
            return
        handler(msg)


def timeout_error(what: str) -> ErrorInfo:
    return ErrorInfo(ErrorKind.TIMEOUT, what)


class OrderedDelivery:
    """Hands views to the upcall strictly in rank order.

    Replies for different levels may arrive out of order; a view is held back
    until every weaker requested level has been delivered or skipped.
    """

    def __init__(self, levels: Sequence[ConsistencyLevel], callback: Upcall):
        self.levels = list(levels)
        self.callback = callback
        self._ready: dict[int, Optional[View]] = {}
        self._next = 0
        self.finished = False

    def offer(self, view: View):
        self._ready[view.level.rank] = view
        self._flush()

    def skip(self, level: ConsistencyLevel):
        self._ready[level.rank] = None
        self._flush()

    def fail(self, err: ErrorInfo):
        if not self.finished:
            self.finished = True
            self.callback(err)

    def _flush(self):
        while not self.finished and self._next < len(self.levels):
            rank = self.levels[self._next].rank
            if rank not in self._ready:
                return
            view = self._ready.pop(rank)
            self._next += 1
            if self._next == len(self.levels):
                self.finished = True
            if view is not None:
                self.callback(view)
