"""Correctables: incremental consistency guarantees over replicated storage."""

from .binding import STRONG, WEAK, Binding
from .client import Library, Operation, OpKind, invoke, invoke_strong, invoke_weak
from .core import (
    Completer,
    ConsistencyLevel,
    Correctable,
    CorrectableError,
    Diagnostics,
    ErrorInfo,
    ErrorKind,
    UsageError,
    View,
    await_final,
    create_correctable,
    set_callbacks,
    speculate,
)

__version__ = "0.1.0"

__all__ = [
    "Binding",
    "Completer",
    "ConsistencyLevel",
    "Correctable",
    "CorrectableError",
    "Diagnostics",
    "ErrorInfo",
    "ErrorKind",
    "Library",
    "OpKind",
    "Operation",
    "STRONG",
    "UsageError",
    "View",
    "WEAK",
    "await_final",
    "create_correctable",
    "invoke",
    "invoke_strong",
    "invoke_weak",
    "set_callbacks",
    "speculate",
]
