"""YCSB-style workload description and key choosers."""

from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass

READ_RATIOS = {"A": 0.50, "B": 0.95, "C": 1.00}
DISTRIBUTIONS = ("zipfian", "latest")
ZIPF_THETA = 0.99

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    distribution: str = "zipfian"
    object_count: int = 1000
    value_size: int = 100
    ops: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.name not in READ_RATIOS:
            raise ValueError(f"unknown workload {self.name!r}; expected one of {sorted(READ_RATIOS)}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.object_count < 1 or self.ops < 0 or self.value_size < 0:
            raise ValueError("object_count must be >= 1, ops and value_size >= 0")

    @property
    def read_ratio(self) -> float:
        return READ_RATIOS[self.name]


def fnv1a_64(n: int) -> int:
    h = _FNV_OFFSET
    for byte in n.to_bytes(8, "little", signed=False):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def ycsb_key(index: int) -> bytes:
    """Hashed record name in the style of YCSB (``user`` + decimal hash)."""
    return b"user%d" % fnv1a_64(index)


class ZipfianGenerator:
    """Draws ranks in [0, n) with P(rank i) proportional to 1 / (i + 1) ** theta."""

    def __init__(self, n: int, theta: float = ZIPF_THETA):
        if n < 1:
            raise ValueError("need at least one item")
        self.n = n
        self.theta = theta
        self._cum = list(itertools.accumulate(1.0 / (i + 1) ** theta for i in range(n)))
        self._total = self._cum[-1]

    def next(self, rng) -> int:
        return min(bisect.bisect_right(self._cum, rng.random() * self._total), self.n - 1)


class KeyChooser:
    """Key-index source for one workload.

    ``zipfian`` maps the drawn rank straight to a key index.  ``latest``
    maps it onto the recency order of written keys, newest first.
    """

    def __init__(self, object_count: int, distribution: str = "zipfian", theta: float = ZIPF_THETA):
        if distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {distribution!r}")
        self.distribution = distribution
        self.zipf = ZipfianGenerator(object_count, theta)
        # oldest first; initial load inserts keys in index order
        self._recency = list(range(object_count))

    @classmethod
    def for_spec(cls, spec: WorkloadSpec) -> "KeyChooser":
        return cls(spec.object_count, spec.distribution)

    def draw(self, rng) -> int:
        rank = self.zipf.next(rng)
        if self.distribution == "zipfian":
            return rank
        return self._recency[-1 - rank]

    def record_write(self, index: int):
        if self.distribution == "latest":
            self._recency.remove(index)
            self._recency.append(index)


def key_distribution_draw(chooser: KeyChooser, rng) -> int:
    return chooser.draw(rng)
