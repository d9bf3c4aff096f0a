"""Random producer schedules and an independent reference model of Correctable closure.

Shared by the property tests and the acceptance gate.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from correctables.core import ConsistencyLevel, ErrorInfo, ErrorKind, View, create_correctable

LEVELS = [ConsistencyLevel(r, f"L{r}") for r in range(5)]


@dataclass
class Step:
    action: str  # "update" | "final" | "error"
    rank: int = 0
    value: int = 0
    confirmation: bool = False


def random_schedule(rng: random.Random):
    n_levels = rng.randint(1, 4)
    steps = []
    for _ in range(rng.randint(0, 6)):
        action = rng.choices(["update", "final", "error"], weights=[6, 3, 1])[0]
        steps.append(Step(action, rng.randint(0, n_levels), rng.randint(0, 2), rng.random() < 0.3))
    attach_at = rng.randint(0, len(steps))
    return n_levels, steps, attach_at


def expected_outcome(n_levels: int, steps) -> dict:
    """What a conforming Correctable must end up with, derived step by step."""
    top = n_levels - 1
    state, last_rank, views, late, violations = "updating", -1, [], 0, 0
    final = None
    for s in steps:
        if state != "updating":
            late += 1
            continue
        if s.action == "error":
            state = "error"
            continue
        closing = s.action == "final"
        valid = (s.rank <= top and s.rank > last_rank and (s.rank == top) == closing
                 and not (s.confirmation and not views))
        if not valid:
            violations += 1
            state = "binding_violation"
            continue
        value = views[-1] if s.confirmation else s.value
        if closing:
            state, final = "final", value
        else:
            views.append(value)
            last_rank = s.rank
    return {"state": state, "views": views, "final": final, "late": late, "violations": violations}


def play(completer, steps):
    for s in steps:
        if s.action == "error":
            completer.close_error(ErrorInfo(ErrorKind.STORAGE_ERROR, "injected"))
            continue
        view = View(s.value, LEVELS[s.rank], is_confirmation=s.confirmation)
        if s.action == "final":
            completer.close_final(view)
        else:
            completer.deliver_update(view)


def value_sequences(max_len: int = 3, alphabet=(0, 1)):
    for n in range(1, max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def oracle_counts(values):
    """Distinct maximal runs of equal consecutive values: one run each, one abort per change."""
    runs = len([k for k, _ in itertools.groupby(values)])
    return runs, runs - 1


def run_speculation(values, confirmations=False):
    levels = LEVELS[: len(values)]
    c, done = create_correctable(levels)
    counts = {"spec": 0, "abort": 0}

    def spec(v):
        counts["spec"] += 1
        return ("derived", v)

    def abort(result):
        counts["abort"] += 1

    out = c.speculate(spec, abort)
    prev = None
    for i, v in enumerate(values):
        conf = confirmations and i > 0 and v == prev
        view = View(None if conf else v, levels[i], is_confirmation=conf)
        (done.close_final if i == len(values) - 1 else done.deliver_update)(view)
        prev = v
    return counts["spec"], counts["abort"], out


def check_schedule(n_levels, steps, attach_at):
    """Run one schedule twice (handlers attached first vs. part-way) against the model."""
    expected = expected_outcome(n_levels, steps)
    traces = []
    for attach in (0, attach_at):
        c, done = create_correctable(LEVELS[:n_levels])
        calls = []
        handlers = dict(on_update=lambda v: calls.append(("update", v)),
                        on_final=lambda v: calls.append(("final", v)),
                        on_error=lambda e: calls.append(("error", e.kind)))
        play(done, steps[:attach])
        c.set_callbacks(**handlers)
        play(done, steps[attach:])
        traces.append(calls)

        ranks = [v.level.rank for v in c.views]
        assert ranks == sorted(set(ranks))
        assert [v.value for v in c.views] == expected["views"]
        terminal = [k for k, _ in calls if k != "update"]
        assert len(terminal) == (0 if expected["state"] == "updating" else 1)
        if expected["state"] == "final":
            assert c.state == "final" and c.final_view.value == expected["final"]
        elif expected["state"] == "binding_violation":
            assert c.error.kind is ErrorKind.BINDING_VIOLATION
        elif expected["state"] == "error":
            assert c.error.kind is ErrorKind.STORAGE_ERROR
        assert c.diagnostics.late_deliveries == expected["late"]
        assert c.diagnostics.violations == expected["violations"]
    assert traces[0] == traces[1]
