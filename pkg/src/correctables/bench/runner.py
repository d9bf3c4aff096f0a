"""Closed-loop workload driver running inside the simulated clock."""

from __future__ import annotations

import logging
import random
from typing import Optional, Sequence

from ..core import Correctable, same_value
from .deploy import REPLICA_REGIONS, Deployment
from .metrics import Metrics
from .workload import KeyChooser, WorkloadSpec, ycsb_key

log = logging.getLogger(__name__)


def dataset_keys(spec: WorkloadSpec) -> list[bytes]:
    return [ycsb_key(i) for i in range(spec.object_count)]


def run_workload(spec: WorkloadSpec, deployment: Deployment, icg: bool = True,
                 baseline: str = "weak", regions: Sequence[str] = REPLICA_REGIONS,
                 clients_per_region: int = 1, load: bool = True, reads: Optional[int] = None) -> Metrics:
    """Issue ``spec.ops`` operations from closed-loop clients and collect metrics.

    With ``reads`` set, the run instead stops issuing once that many reads
    have been issued, however many writes that takes.

    With ``icg`` reads ask for every level the binding offers; otherwise they
    ask only for the ``baseline`` level ("weak" = first level, "strong" = last).
    Writes always ask for the strongest level.
    """
    keys = dataset_keys(spec)
    if load:
        deployment.load(keys, spec.value_size)
    chooser = KeyChooser.for_spec(spec)
    clock = deployment.clock
    metrics = Metrics()
    libs = [deployment.client(region) for region in regions for _ in range(clients_per_region)]
    rngs = [random.Random(spec.seed * 7919 + i) for i in range(len(libs))]
    start_time = clock.now
    bytes_before = deployment.client_bytes()
    issued = reads_issued = 0

    def finish(c: Correctable, label: str, started: float, i: int):
        if c.error is not None:
            metrics.errors += 1
            log.debug("operation failed: %s", c.error)
        else:
            for view in c.views:
                metrics.record(f"{label}.{view.level.name}", view.arrival_time - started)
            final = c.final_view
            metrics.record(f"{label}.{final.level.name}" if label == "read" else label,
                           final.arrival_time - started)
            if label == "read" and icg and c.views:
                metrics.icg_reads += 1
                if not same_value(c.views[0].value, final.value):
                    metrics.diverged += 1
        metrics.ops += 1
        metrics.duration_ms = clock.now - start_time
        issue(i)

    def issue(i: int):
        nonlocal issued, reads_issued
        if (reads_issued >= reads) if reads is not None else (issued >= spec.ops):
            return
        issued += 1
        lib, rng = libs[i], rngs[i]
        index = chooser.draw(rng)
        started = clock.now
        if rng.random() < spec.read_ratio:
            reads_issued += 1
            op = deployment.read_op(keys[index])
            if icg:
                c = lib.invoke(op)
            elif baseline == "strong":
                c = lib.invoke_strong(op)
            else:
                c = lib.invoke_weak(op)
            label = "read"
        else:
            chooser.record_write(index)
            c = lib.invoke_strong(deployment.write_op(keys[index], rng.randbytes(spec.value_size)))
            label = "write"
        c.set_callbacks(on_final=lambda _v: finish(c, label, started, i),
                        on_error=lambda _e: finish(c, label, started, i))

    for i in range(len(libs)):
        issue(i)
    clock.run()
    metrics.client_bytes = deployment.client_bytes() - bytes_before
    return metrics

