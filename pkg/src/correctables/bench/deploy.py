"""Simulated deployments: a clock, a network, one storage stack and its clients."""

from __future__ import annotations

from typing import Optional

from ..client import Library, Operation
from ..consensus_queue import QueueBinding, QueueCluster
from ..quorum import QuorumBinding, QuorumConfig, QuorumStore
from ..sim import LatencyMatrix, SimClock, SimNet
from ..tiered import CacheBinding, TieredStore

REPLICA_REGIONS = ("FRK", "IRL", "VRG")
# each client talks to a replica outside its own region
REMOTE_CONTACT = {"IRL": "FRK", "FRK": "IRL", "VRG": "IRL"}


class Deployment:
    kind = "base"

    def __init__(self, matrix: Optional[LatencyMatrix] = None, seed: int = 0):
        self.clock = SimClock()
        self.net = SimNet(matrix if matrix is not None else LatencyMatrix.default(), self.clock, seed=seed)
        self._clients = 0
        self.client_nodes: list[str] = []

    def _client_name(self, region: str) -> str:
        self._clients += 1
        name = f"client-{region}-{self._clients}"
        self.client_nodes.append(name)
        return name

    def client(self, region: str, contact: Optional[str] = None) -> Library:
        raise NotImplementedError

    def load(self, keys: list, value_size: int):
        raise NotImplementedError

    def read_op(self, key: bytes) -> Operation:
        return Operation.read(key)

    def write_op(self, key: bytes, value: bytes) -> Operation:
        return Operation.write(key, value)

    def client_bytes(self) -> int:
        return self.net.meter.bytes_touching(self.client_nodes)


def initial_value(index: int, size: int) -> bytes:
    return (b"v0-%d-" % index).ljust(size, b".")[:size]


class QuorumDeployment(Deployment):
    kind = "quorum"

    def __init__(self, matrix=None, seed=0, config: Optional[QuorumConfig] = None):
        super().__init__(matrix, seed)
        self.store = QuorumStore(self.net, [(r, r) for r in REPLICA_REGIONS], config)

    def client(self, region, contact=None):
        binding = QuorumBinding(self.store, self._client_name(region), region, contact or REMOTE_CONTACT[region])
        return Library(binding)

    def load(self, keys, value_size):
        self.store.load({k: initial_value(i, value_size) for i, k in enumerate(keys)})


class QueueDeployment(Deployment):
    """Reads map to dequeues and writes to enqueues; keys are ignored."""

    kind = "queue"

    def __init__(self, matrix=None, seed=0, leader: str = "IRL"):
        super().__init__(matrix, seed)
        self.cluster = QueueCluster(self.net, [(r, r) for r in REPLICA_REGIONS], leader)

    def client(self, region, contact=None):
        binding = QueueBinding(self.cluster, self._client_name(region), region, contact or REMOTE_CONTACT[region])
        return Library(binding)

    def load(self, keys, value_size):
        size = min(value_size, self.cluster.max_payload)
        self.cluster.load(b"queue", [initial_value(i, size) for i in range(len(keys))])

    def read_op(self, key):
        return Operation.dequeue()

    def write_op(self, key, value):
        return Operation.enqueue(value[: self.cluster.max_payload])


class TieredDeployment(Deployment):
    kind = "tiered"

    def __init__(self, matrix=None, seed=0, primary: str = "VRG", backup: str = "FRK",
                 backup_lag_ms: float = 20.0):
        super().__init__(matrix, seed)
        self.store = TieredStore(self.net, ("primary", primary), ("backup", backup), backup_lag_ms)

    def client(self, region, contact=None):
        return Library(CacheBinding(self.store, self._client_name(region), region))

    def load(self, keys, value_size):
        self.store.load({k: initial_value(i, value_size) for i, k in enumerate(keys)})


def make_deployment(kind: str, matrix=None, seed: int = 0, **options) -> Deployment:
    classes = {"quorum": QuorumDeployment, "queue": QueueDeployment, "tiered": TieredDeployment}
    if kind not in classes:
        raise ValueError(f"unknown binding {kind!r}")
    return classes[kind](matrix, seed, **options)
