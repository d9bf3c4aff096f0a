"""Application-facing API: invoke_weak, invoke_strong and invoke."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Union

from .core import (
    ConsistencyLevel,
    Correctable,
    Diagnostics,
    ErrorInfo,
    ErrorKind,
    UsageError,
    View,
    create_correctable,
    validate_levels,
)

if TYPE_CHECKING:
    from .binding import Binding

log = logging.getLogger(__name__)


class OpKind(enum.Enum):
    READ = "read"
    WRITE = "write"
    ENQUEUE = "enqueue"
    DEQUEUE = "dequeue"
    APP = "app"


@dataclass
class Operation:
    kind: OpKind
    key: bytes = b""
    payload: Optional[bytes] = None
    name: Optional[str] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.key, str):
            self.key = self.key.encode()
        if self.kind in (OpKind.WRITE, OpKind.ENQUEUE) and self.payload is None:
            raise UsageError(f"{self.kind.value} requires a payload")
        if self.kind in (OpKind.READ, OpKind.DEQUEUE) and self.payload is not None:
            raise UsageError(f"{self.kind.value} does not take a payload")
        if self.kind is OpKind.APP and not self.name:
            raise UsageError("application-specific operations need a name")

    @classmethod
    def read(cls, key) -> "Operation":
        return cls(OpKind.READ, key)

    @classmethod
    def write(cls, key, value: bytes) -> "Operation":
        return cls(OpKind.WRITE, key, value)

    @classmethod
    def enqueue(cls, payload: bytes, queue=b"queue") -> "Operation":
        return cls(OpKind.ENQUEUE, queue, payload)

    @classmethod
    def dequeue(cls, queue=b"queue") -> "Operation":
        return cls(OpKind.DEQUEUE, queue)

    @classmethod
    def app(cls, name: str, key=b"", payload: Optional[bytes] = None, **metadata) -> "Operation":
        return cls(OpKind.APP, key, payload, name, dict(metadata))


LevelSpec = Union[ConsistencyLevel, str]


class Library:
    """Turns storage operations into Correctables through a single binding."""

    def __init__(self, binding: "Binding"):
        self.binding = binding
        self.diagnostics = Diagnostics()
        self._levels = validate_levels(binding.consistency_levels())

    @property
    def levels(self) -> tuple:
        return self._levels

    def invoke_weak(self, op: Operation) -> Correctable:
        return self.invoke(op, [self._levels[0]])

    def invoke_strong(self, op: Operation) -> Correctable:
        return self.invoke(op, [self._levels[-1]])

    def invoke(self, op: Operation, levels: Optional[Iterable[LevelSpec]] = None) -> Correctable:
        requested = self._resolve(levels)
        c, completer = create_correctable(requested, self.diagnostics)
        top = requested[-1]

        def upcall(result):
            if isinstance(result, ErrorInfo):
                completer.close_error(result)
            elif result.level == top:
                completer.close_final(result)
            else:
                completer.deliver_update(result)

        try:
            self.binding.submit_operation(op, requested, upcall)
        except UsageError:
            raise
        except Exception as exc:
            log.warning("binding rejected %s: %s", op.kind.value, exc)
            completer.close_error(ErrorInfo(ErrorKind.STORAGE_ERROR, str(exc)))
        return c

    def _resolve(self, levels) -> tuple:
        if levels is None:
            return self._levels
        by_name = {lvl.name: lvl for lvl in self._levels}
        chosen = []
        for lvl in levels:
            name = lvl if isinstance(lvl, str) else lvl.name
            if name not in by_name or (not isinstance(lvl, str) and lvl != by_name[name]):
                raise UsageError(f"level {name!r} is not offered by this binding")
            chosen.append(by_name[name])
        if not chosen:
            raise UsageError("invoke needs at least one consistency level")
        chosen = sorted(set(chosen), key=lambda lvl: lvl.rank)
        return tuple(chosen)


def invoke_weak(lib: Library, op: Operation) -> Correctable:
    return lib.invoke_weak(op)


def invoke_strong(lib: Library, op: Operation) -> Correctable:
    return lib.invoke_strong(op)


def invoke(lib: Library, op: Operation, levels=None) -> Correctable:
    return lib.invoke(op, levels)


__all__ = ["Library", "Operation", "OpKind", "View", "invoke", "invoke_strong", "invoke_weak"]
