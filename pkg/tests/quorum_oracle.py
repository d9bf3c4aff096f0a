"""Exhaustive interleaving explorer for quorum reads and writes on one key.

The model is event-level: a write is stamped and applied at its coordinator,
reaches every other replica in any order, and may be acknowledged once W
replicas hold it.  A strong read starts at a coordinator (whose local copy
counts as the first response), collects further replica responses in any
order and completes after R of them, merging with the library's own LWW
rule.  Every reachable state is visited once (memoized DFS); a violation is
a completed read that returns something older than a write acknowledged
before the read started.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from correctables.quorum import Replica, VersionedValue, merge_lww


@dataclass
class ExploreResult:
    schedules: int = 0
    states: int = 0
    reads_checked: int = 0
    violations: int = 0


def _apply(reps: tuple, j: int, version: VersionedValue) -> tuple:
    rep = Replica(f"r{j}", j)
    rep.data[b"k"] = reps[j]
    rep.apply(b"k", version)
    return reps[:j] + (rep.read(b"k"),) + reps[j + 1:]


def explore(n: int = 3, r: int = 2, w: int = 2, writers: int = 2) -> ExploreResult:
    result = ExploreResult()
    initial = tuple(VersionedValue(b"init", 0.0, 0) for _ in range(n))
    for coords in itertools.product(range(n), repeat=writers + 1):
        write_coords, read_coord = coords[:writers], coords[writers]
        seen: set = set()
        # writer state: None (not issued) or (version, applied replicas, acked)
        start = (initial, (None,) * writers, None, 0)
        stack = [start]
        result.schedules += 1
        while stack:
            state = stack.pop()
            if state in seen:
                continue
            seen.add(state)
            reps, wstate, rstate, clock = state
            for i, ws in enumerate(wstate):
                if ws is None:
                    c = write_coords[i]
                    version = VersionedValue(b"w%d" % i, float(clock + 1), c)
                    new = wstate[:i] + ((version, frozenset([c]), False),) + wstate[i + 1:]
                    stack.append((_apply(reps, c, version), new, rstate, clock + 1))
                    continue
                version, applied, acked = ws
                for j in range(n):
                    if j not in applied:
                        new = wstate[:i] + ((version, applied | {j}, acked),) + wstate[i + 1:]
                        stack.append((_apply(reps, j, version), new, rstate, clock))
                if not acked and len(applied) >= w:
                    new = wstate[:i] + ((version, applied, True),) + wstate[i + 1:]
                    stack.append((reps, new, rstate, clock))
            if rstate is None:
                required = max((ws[0].version for ws in wstate if ws is not None and ws[2]),
                               default=(0.0, 0))
                responses = ((read_coord, reps[read_coord]),)
                stack.append((reps, wstate, _maybe_finish(required, responses, r, result), clock))
            elif rstate != "done":
                required, responses = rstate
                answered = {j for j, _ in responses}
                for j in range(n):
                    if j not in answered:
                        more = responses + ((j, reps[j]),)
                        stack.append((reps, wstate, _maybe_finish(required, more, r, result), clock))
        result.states += len(seen)
    return result


def _maybe_finish(required, responses, r, result: ExploreResult):
    if len(responses) < r:
        return (required, responses)
    merged = merge_lww(v for _, v in responses)
    result.reads_checked += 1
    if merged.version < required:
        result.violations += 1
    return "done"
