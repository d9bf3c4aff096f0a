from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field


def percentile(samples, p: float) -> float:
    """Nearest-rank percentile."""
    if not samples:
        return float("nan")
    ordered = sorted(samples)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


def mean(samples) -> float:
    return math.fsum(samples) / len(samples) if samples else float("nan")


@dataclass
class Metrics:
    latencies: dict = field(default_factory=lambda: defaultdict(list))
    ops: int = 0
    duration_ms: float = 0.0
    icg_reads: int = 0
    diverged: int = 0
    client_bytes: int = 0
    errors: int = 0
    misspeculations: int = 0

    def record(self, label: str, latency_ms: float):
        self.latencies[label].append(latency_ms)

    def mean(self, label: str) -> float:
        return mean(self.latencies.get(label, ()))

    def p99(self, label: str) -> float:
        return percentile(self.latencies.get(label, ()), 99)

    @property
    def throughput(self) -> float:
        """Completed operations per simulated second."""
        return self.ops / self.duration_ms * 1000.0 if self.duration_ms > 0 else 0.0

    @property
    def divergence_rate(self) -> float:
        return self.diverged / self.icg_reads if self.icg_reads else 0.0

    @property
    def bytes_per_op(self) -> float:
        return self.client_bytes / self.ops if self.ops else 0.0

    @property
    def kb_per_op(self) -> float:
        return self.bytes_per_op / 1024.0

    def labels(self) -> list[str]:
        return sorted(self.latencies)
