"""Deterministic discrete-event simulation: virtual clock, WAN latency matrix,
message delivery and byte accounting.

All times are virtual milliseconds.  Nothing here sleeps.
"""

from __future__ import annotations

import heapq
import itertools
import random
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

HEADER_BYTES = 48
DIGEST_BYTES = 8

# One-way delays between the three EC2 regions of the evaluation (client in
# IRL): IRL-FRK RTT 20ms, IRL-VRG RTT 83ms.  Same-region hops cost 1ms.
DEFAULT_NET_CONFIG = """\
# one-way delays in milliseconds
intra 1.0
jitter 0
FRK IRL 10
IRL VRG 41.5
FRK VRG 45
"""


class ConfigError(ValueError):
    pass


@dataclass
class Event:
    time: float
    seq: int
    fn: Callable
    args: tuple = ()
    cancelled: bool = False

    def cancel(self):
        self.cancelled = True

    def __lt__(self, other):
        return (self.time, self.seq) < (other.time, other.seq)


class SimClock:
    """Virtual clock plus the pending-event queue.

    Events fire in time order; events scheduled for the same instant fire in
    the order they were scheduled.
    """

    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._lock = threading.Lock()
        self.fired = 0

    def __len__(self):
        return sum(1 for ev in self._queue if not ev.cancelled)

    def schedule_at(self, at: float, fn: Callable, *args) -> Event:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        with self._lock:
            ev = Event(float(at), next(self._seq), fn, args)
            heapq.heappush(self._queue, ev)
        return ev

    def call_later(self, delay: float, fn: Callable, *args) -> Event:
        return self.schedule_at(self.now + max(delay, 0.0), fn, *args)

    def next_time(self) -> Optional[float]:
        with self._lock:
            while self._queue and self._queue[0].cancelled:
                heapq.heappop(self._queue)
            return self._queue[0].time if self._queue else None

    def step(self, deadline: Optional[float] = None) -> bool:
        """Fire the next event if it is due by ``deadline``; False when nothing fired."""
        with self._lock:
            while self._queue and self._queue[0].cancelled:
                heapq.heappop(self._queue)
            if not self._queue or (deadline is not None and self._queue[0].time > deadline):
                return False
            ev = heapq.heappop(self._queue)
        self.now = ev.time
        self.fired += 1
        ev.fn(*ev.args)
        return True

    def advance(self, until: float) -> list[Event]:
        """Fire every event due at or before ``until`` and move the clock there."""
        if until < self.now:
            raise ValueError(f"clock is monotone: {until} < {self.now}")
        fired = []
        while True:
            with self._lock:
                while self._queue and self._queue[0].cancelled:
                    heapq.heappop(self._queue)
                if not self._queue or self._queue[0].time > until:
                    break
                ev = heapq.heappop(self._queue)
            self.now = ev.time
            self.fired += 1
            ev.fn(*ev.args)
            fired.append(ev)
        self.now = until
        return fired

    def run(self, until: Optional[float] = None, max_events: Optional[int] = None) -> int:
        """Drain the queue (optionally bounded); returns the number of events fired."""
        count = 0
        while max_events is None or count < max_events:
            if not self.step(until):
                break
            count += 1
        if until is not None and self.now < until:
            self.now = until
        return count


class LatencyMatrix:
    """Symmetric one-way region-to-region delays."""

    def __init__(self, links: dict, intra: float = 1.0, jitter: float = 0.0):
        self.intra = float(intra)
        self.jitter = float(jitter)
        self._links: dict[tuple[str, str], float] = {}
        for (a, b), ms in links.items():
            self._links[(a, b)] = float(ms)
            self._links[(b, a)] = float(ms)

    @property
    def regions(self) -> list[str]:
        return sorted({a for a, _ in self._links})

    def one_way(self, a: str, b: str) -> float:
        if a == b:
            return self.intra
        try:
            return self._links[(a, b)]
        except KeyError:
            raise ConfigError(f"no latency configured between {a} and {b}") from None

    def rtt(self, a: str, b: str) -> float:
        return 2 * self.one_way(a, b)

    @classmethod
    def parse(cls, text: str) -> "LatencyMatrix":
        """Parse the plain-text format (``intra MS``, ``jitter MS``, ``A B MS`` lines)."""
        links, intra, jitter = {}, 1.0, 0.0
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "intra" and len(parts) == 2:
                    intra = float(parts[1])
                elif parts[0] == "jitter" and len(parts) == 2:
                    jitter = float(parts[1])
                elif len(parts) == 3:
                    links[(parts[0], parts[1])] = float(parts[2])
                else:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"line {lineno}: cannot parse {raw!r}") from None
        if any(ms < 0 for ms in links.values()) or intra < 0 or jitter < 0:
            raise ConfigError("delays must be non-negative")
        return cls(links, intra, jitter)

    @classmethod
    def load(cls, path) -> "LatencyMatrix":
        return cls.parse(Path(path).read_text())

    @classmethod
    def default(cls) -> "LatencyMatrix":
        return cls.parse(DEFAULT_NET_CONFIG)


@dataclass
class Message:
    kind: str
    src: str
    dst: str
    size: int
    body: Any = None
    op_id: Optional[int] = None
    background: bool = False
    sent_at: float = 0.0


class TrafficMeter:
    """Byte counters per directed link, per operation, and for background traffic."""

    def __init__(self):
        self.links: dict[tuple[str, str], int] = defaultdict(int)
        self.per_op: dict[int, int] = defaultdict(int)
        self.background = 0
        self.messages = 0

    def record(self, msg: Message):
        self.links[(msg.src, msg.dst)] += msg.size
        self.messages += 1
        if msg.background:
            self.background += msg.size
        else:
            self.per_op[msg.op_id] += msg.size

    def total(self) -> int:
        return sum(self.links.values())

    def op_total(self) -> int:
        return sum(self.per_op.values())

    def balanced(self) -> bool:
        return self.total() == self.op_total() + self.background

    def bytes_touching(self, nodes: Iterable[str]) -> int:
        nodes = set(nodes)
        return sum(n for (a, b), n in self.links.items() if a in nodes or b in nodes)


@dataclass
class _Node:
    region: str
    handler: Callable[[Message], None]


class SimNet:
    """Message transport between registered nodes over a :class:`LatencyMatrix`.

    Links are FIFO per ordered node pair (as over a TCP connection): jitter
    may stretch a delivery but never lets a message overtake an earlier one
    on the same link.  ``delay_override(msg)`` may return a one-way delay to
    use instead of the matrix; tests use it to force particular interleavings.
    """

    def __init__(self, matrix: Optional[LatencyMatrix] = None, clock: Optional[SimClock] = None,
                 seed: int = 0, jitter: Optional[float] = None):
        self.matrix = matrix if matrix is not None else LatencyMatrix.default()
        self.clock = clock if clock is not None else SimClock()
        self.jitter = self.matrix.jitter if jitter is None else float(jitter)
        self.rng = random.Random(seed)
        self.meter = TrafficMeter()
        self.delay_override: Optional[Callable[[Message], Optional[float]]] = None
        self._nodes: dict[str, _Node] = {}
        self._down: set[str] = set()
        self._op_ids = itertools.count(1)
        self._link_tail: dict[tuple[str, str], float] = {}

    @property
    def now(self) -> float:
        return self.clock.now

    def add_node(self, node_id: str, region: str, handler: Callable[[Message], None]):
        if node_id in self._nodes:
            raise ConfigError(f"node {node_id} already registered")
        self._nodes[node_id] = _Node(region, handler)

    def region(self, node_id: str) -> str:
        return self._node(node_id).region

    def nodes(self) -> list[str]:
        return list(self._nodes)

    def _node(self, node_id: str) -> _Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise ConfigError(f"unknown node {node_id!r}") from None

    def next_op_id(self) -> int:
        return next(self._op_ids)

    def latency(self, src: str, dst: str) -> float:
        if src == dst:
            return 0.0
        return self.matrix.one_way(self._node(src).region, self._node(dst).region)

    def crash(self, node_id: str):
        self._node(node_id)
        self._down.add(node_id)

    def recover(self, node_id: str):
        self._down.discard(node_id)

    def is_up(self, node_id: str) -> bool:
        return node_id not in self._down

    def send(self, src: str, dst: str, kind: str, size: int, body: Any = None,
             op_id: Optional[int] = None, background: bool = False) -> Optional[float]:
        """Send a message; returns its delivery time, or None if the sender is down."""
        self._node(src)
        target = self._node(dst)
        if not background and op_id is None:
            raise ValueError("foreground messages must carry an op_id")
        if src in self._down:
            return None
        msg = Message(kind, src, dst, int(size), body, op_id, background, self.clock.now)
        delay = None
        if self.delay_override is not None:
            delay = self.delay_override(msg)
        if delay is None:
            delay = self.latency(src, dst)
            if self.jitter > 0 and src != dst:
                delay += self.rng.uniform(0.0, self.jitter)
        self.meter.record(msg)
        at = max(self.clock.now + delay, self._link_tail.get((src, dst), 0.0))
        self._link_tail[(src, dst)] = at
        self.clock.schedule_at(at, self._deliver, msg, target)
        return at

    def _deliver(self, msg: Message, target: _Node):
        if msg.dst in self._down:
            return
        target.handler(msg)
