"""Correctable placeholders.

A Correctable starts out *updating*, receives zero or more preliminary views
(each at a strictly stronger consistency level than the one before), and then
closes exactly once, either with a final view or with an error.  The producer
side is a separate :class:`Completer` handle so that applications only ever
see the read-only half.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

log = logging.getLogger(__name__)

UPDATING = "updating"
FINAL = "final"
ERROR = "error"


@dataclass(frozen=True)
class ConsistencyLevel:
    """An ordered consistency label; rank 0 is the weakest."""

    rank: int
    name: str

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError(f"rank must be non-negative, got {self.rank}")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class View:
    value: Any
    level: ConsistencyLevel
    is_confirmation: bool = False
    arrival_time: float = 0.0


class ErrorKind(enum.Enum):
    TIMEOUT = "timeout"
    BINDING_VIOLATION = "binding_violation"
    STORAGE_ERROR = "storage_error"
    SPECULATION_ABORTED = "speculation_aborted"


@dataclass(frozen=True)
class ErrorInfo:
    kind: ErrorKind
    message: str = ""

    @property
    def retryable(self) -> bool:
        return self.kind is ErrorKind.TIMEOUT


class CorrectableError(Exception):
    """Raised by :meth:`Correctable.await_final` when the operation did not succeed."""

    def __init__(self, info: ErrorInfo):
        super().__init__(f"{info.kind.value}: {info.message}")
        self.info = info


class UsageError(ValueError):
    pass


@dataclass
class Diagnostics:
    """Counters for deliveries a Correctable refused to act upon."""

    late_deliveries: int = 0
    violations: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def count_late(self):
        with self._lock:
            self.late_deliveries += 1

    def count_violation(self):
        with self._lock:
            self.violations += 1


def _jsonable(obj):
    if isinstance(obj, (bytes, bytearray, memoryview)):
        return {"__bytes__": bytes(obj).hex()}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {"__type__": type(obj).__name__, **dataclasses.asdict(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (set, frozenset)):
        return sorted(obj, key=canonical_bytes)
    raise TypeError(f"cannot canonically serialize {type(obj).__name__}")


def canonical_bytes(value: Any) -> bytes:
    """Deterministic byte encoding used for every value comparison in the library."""
    if isinstance(value, (bytes, bytearray, memoryview)):
        return b"b:" + bytes(value)
    if isinstance(value, str):
        return b"s:" + value.encode("utf-8")
    text = json.dumps(value, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return b"j:" + text.encode("utf-8")


def same_value(a: Any, b: Any) -> bool:
    return canonical_bytes(a) == canonical_bytes(b)


def validate_levels(levels: Sequence[ConsistencyLevel]) -> tuple:
    levels = tuple(levels)
    if not levels:
        raise UsageError("at least one consistency level is required")
    for prev, cur in zip(levels, levels[1:]):
        if cur.rank <= prev.rank:
            raise UsageError(f"levels must have strictly increasing ranks: {prev} then {cur}")
    names = [lvl.name for lvl in levels]
    if len(set(names)) != len(names):
        raise UsageError(f"duplicate level names in {names}")
    return levels


class Correctable:
    """Placeholder for the incrementally improving result of one operation.

    Handlers registered with :meth:`set_callbacks` receive plain values:
    ``on_update(value)`` for each preliminary view, ``on_final(value)`` for
    the closing view and ``on_error(ErrorInfo)``.  The :class:`View` objects
    (level, arrival time, confirmation flag) stay available through
    :attr:`views` and :attr:`final_view`.
    """

    def __init__(self, levels: Sequence[ConsistencyLevel], diagnostics: Optional[Diagnostics] = None):
        self.levels = validate_levels(levels)
        self.diagnostics = diagnostics if diagnostics is not None else Diagnostics()
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._state = UPDATING
        self._views: list[View] = []
        self._final: Optional[View] = None
        self._error: Optional[ErrorInfo] = None
        self._history: list[tuple[str, Any]] = []
        self._callbacks: Optional[dict] = None
        self._observers: list[Callable[[str, Any], None]] = []

    def __repr__(self):
        if self._state == FINAL:
            detail = repr(self._final.value)
        elif self._state == ERROR:
            detail = self._error.kind.value
        else:
            detail = f"{len(self._views)} views"
        return f"<Correctable {self._state} {detail}>"

    @property
    def state(self) -> str:
        return self._state

    @property
    def done(self) -> bool:
        return self._state != UPDATING

    @property
    def views(self) -> list[View]:
        """Preliminary views delivered so far (the closing view is not included)."""
        with self._lock:
            return list(self._views)

    @property
    def final_view(self) -> Optional[View]:
        return self._final

    @property
    def error(self) -> Optional[ErrorInfo]:
        return self._error

    @property
    def value(self) -> Any:
        """Most recent value: the final one if closed, else the latest preliminary."""
        with self._lock:
            if self._final is not None:
                return self._final.value
            if self._views:
                return self._views[-1].value
            return None

    # -- consumer side -------------------------------------------------

    def set_callbacks(self, on_update=None, on_final=None, on_error=None) -> "Correctable":
        """Attach handlers; transitions that already happened are replayed in order."""
        with self._lock:
            if self._callbacks is not None:
                raise UsageError("set_callbacks may only be called once per Correctable")
            self._callbacks = {"update": on_update, "final": on_final, "error": on_error}
            for kind, payload in self._history:
                self._call_handler(kind, payload)
        return self

    def speculate(self, spec_fn: Callable[[Any], Any], abort_fn: Optional[Callable[[Any], Any]] = None) -> "Correctable":
        """Run ``spec_fn`` on each new distinct view; see :class:`_Speculation`."""
        out = Correctable([self.levels[-1]], self.diagnostics)
        spec = _Speculation(out, spec_fn, abort_fn)
        self._observe(spec.on_event)
        return out

    def await_final(self, timeout_ms: float, clock=None) -> Any:
        """Block until the Correctable closes and return the final value.

        Without ``clock`` this waits on wall-clock time for another thread to
        complete the Correctable.  With a simulation ``clock`` it instead runs
        simulated events until the Correctable closes or ``timeout_ms`` of
        virtual time elapses.  A timeout raises :class:`CorrectableError`
        with kind TIMEOUT and leaves the Correctable untouched.
        """
        if clock is None:
            with self._cond:
                self._cond.wait_for(lambda: self.done, timeout=max(timeout_ms, 0) / 1000.0)
        else:
            deadline = clock.now + timeout_ms
            while not self.done and clock.step(deadline):
                pass
            if not self.done and clock.now < deadline:
                clock.advance(deadline)
        with self._lock:
            if self._state == FINAL:
                return self._final.value
            if self._state == ERROR:
                raise CorrectableError(self._error)
        raise CorrectableError(ErrorInfo(ErrorKind.TIMEOUT, f"not closed within {timeout_ms}ms"))

    # -- producer side (reached through Completer) ---------------------

    def _deliver_update(self, view: View):
        with self._lock:
            if self.done:
                self.diagnostics.count_late()
                return
            problem = self._check_level(view, closing=False)
            if problem is None and view.is_confirmation and not self._views:
                problem = "confirmation without a preceding view"
            if problem is not None:
                self._violation(problem)
                return
            view = self._materialize(view)
            self._views.append(view)
            self._transition("update", view)

    def _close_final(self, view: View):
        with self._lock:
            if self.done:
                self.diagnostics.count_late()
                return
            problem = self._check_level(view, closing=True)
            if problem is None and view.is_confirmation and not self._views:
                problem = "confirmation without a preceding view"
            if problem is not None:
                self._violation(problem)
                return
            self._final = self._materialize(view)
            self._state = FINAL
            self._transition("final", self._final)

    def _close_error(self, err: ErrorInfo):
        with self._lock:
            if self.done:
                self.diagnostics.count_late()
                return
            self._fail(err)

    def _check_level(self, view: View, closing: bool) -> Optional[str]:
        top = self.levels[-1]
        if view.level not in self.levels:
            return f"level {view.level} was not requested"
        if self._views and view.level.rank <= self._views[-1].level.rank:
            return f"level {view.level} does not follow {self._views[-1].level}"
        if closing and view.level != top:
            return f"closing view must be at {top}, got {view.level}"
        if not closing and view.level == top:
            return f"preliminary view delivered at the final level {top}"
        return None

    def _materialize(self, view: View) -> View:
        # a confirmation stands for the value of the immediately preceding view
        if view.is_confirmation:
            return dataclasses.replace(view, value=self._views[-1].value)
        return view

    def _violation(self, message: str):
        self.diagnostics.count_violation()
        self._fail(ErrorInfo(ErrorKind.BINDING_VIOLATION, message))

    def _fail(self, err: ErrorInfo):
        self._error = err
        self._state = ERROR
        self._transition("error", err)

    def _transition(self, kind: str, payload):
        self._history.append((kind, payload))
        if self._callbacks is not None:
            self._call_handler(kind, payload)
        for observer in list(self._observers):
            try:
                observer(kind, payload)
            except Exception:
                log.exception("internal observer failed on %s", kind)
        if kind != "update":
            self._cond.notify_all()

    def _call_handler(self, kind: str, payload):
        handler = self._callbacks.get(kind)
        if handler is None:
            return
        arg = payload if kind == "error" else payload.value
        try:
            handler(arg)
        except Exception:
            log.exception("on_%s handler raised", kind)

    def _observe(self, observer: Callable[[str, Any], None]):
        """Internal subscription used by combinators; replays past transitions."""
        with self._lock:
            for kind, payload in self._history:
                observer(kind, payload)
            self._observers.append(observer)


class Completer:
    """Producer handle for one Correctable."""

    def __init__(self, correctable: Correctable):
        self.correctable = correctable

    def deliver_update(self, view: View):
        self.correctable._deliver_update(view)

    def close_final(self, view: View):
        self.correctable._close_final(view)

    def close_error(self, err: ErrorInfo):
        self.correctable._close_error(err)


def create_correctable(expected_levels: Sequence[ConsistencyLevel], diagnostics: Optional[Diagnostics] = None):
    """Return a fresh ``(Correctable, Completer)`` pair."""
    c = Correctable(expected_levels, diagnostics)
    return c, Completer(c)


class _Speculation:
    """State for one ``speculate`` call.

    ``spec_fn`` runs on the first view and again whenever a view's value
    differs from the one it last ran on; each re-run is preceded by
    ``abort_fn`` on the stale result.  If ``spec_fn`` returns a Correctable,
    the output closes only once that Correctable has closed as well.
    """

    def __init__(self, out: Correctable, spec_fn, abort_fn):
        self.out = out
        self.spec_fn = spec_fn
        self.abort_fn = abort_fn
        self.ran = False
        self.last_key: Optional[bytes] = None
        self.result: Any = None
        self.dead = False
        self.spec_calls = 0
        self.abort_calls = 0

    def on_event(self, kind: str, payload):
        if self.dead:
            return
        if kind == "error":
            self._abort()
            self.dead = True
            self.out._close_error(payload)
            return
        view: View = payload
        key = canonical_bytes(view.value)
        if not self.ran or key != self.last_key:
            self._abort()
            if not self._run(view.value, key):
                return
        if kind == "final":
            self.dead = True
            self._finish(view)

    def _run(self, value, key) -> bool:
        self.spec_calls += 1
        try:
            self.result = self.spec_fn(value)
        except Exception as exc:
            log.exception("speculation function raised")
            self.dead = True
            self.out._close_error(ErrorInfo(ErrorKind.SPECULATION_ABORTED, repr(exc)))
            return False
        self.ran = True
        self.last_key = key
        return True

    def _abort(self):
        if not self.ran:
            return
        self.abort_calls += 1
        if self.abort_fn is None:
            return
        try:
            self.abort_fn(self.result)
        except Exception:
            log.exception("abort function raised; continuing")

    def _finish(self, source_final: View):
        level = self.out.levels[-1]
        result = self.result
        if not isinstance(result, Correctable):
            self.out._close_final(View(result, level, arrival_time=source_final.arrival_time))
            return

        def relay(kind, payload):
            if kind == "final":
                arrival = max(source_final.arrival_time, payload.arrival_time)
                self.out._close_final(View(payload.value, level, arrival_time=arrival))
            elif kind == "error":
                self.out._close_error(payload)

        result._observe(relay)


def speculate(c: Correctable, spec_fn, abort_fn=None) -> Correctable:
    return c.speculate(spec_fn, abort_fn)


def set_callbacks(c: Correctable, on_update=None, on_final=None, on_error=None) -> Correctable:
    return c.set_callbacks(on_update=on_update, on_final=on_final, on_error=on_error)


def await_final(c: Correctable, timeout_ms: float, clock=None):
    return c.await_final(timeout_ms, clock=clock)
