"""Execution trace and shared-memory access events.

All events produced during one run, whether scheduler lifecycle events or
guarded-cell accesses, draw their logical timestamps from one shared
``EventClock``, so the union of both streams is totally ordered.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator


class TaskState(str, Enum):
    PENDING = "pending"
    READY = "ready"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class EventKind(str, Enum):
    READY = "ready"
    START = "start"
    FINISH = "finish"
    STEAL = "steal"
    RESIZE = "resize"
    BLOCK = "block"
    SIGNAL = "signal"


class AccessKind(str, Enum):
    READ = "read"
    WRITE = "write"
    RECOLOR = "recolor"


@dataclass(frozen=True)
class TraceEvent:
    ts: int
    worker: int
    entity: str
    instance: int
    kind: EventKind
    note: str = ""
    wall: float = 0.0  # auxiliary only, never used for correctness

    @property
    def key(self) -> tuple[str, int]:
        return (self.entity, self.instance)


@dataclass(frozen=True)
class AccessEvent:
    cell: str
    entity: str
    instance: int
    worker: int
    kind: AccessKind
    ts: int
    serialized: bool = False
    note: str = ""

    @property
    def key(self) -> tuple[str, int]:
        return (self.entity, self.instance)


@dataclass
class ExecutionTrace:
    events: list[TraceEvent] = field(default_factory=list)
    partial: bool = False

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def task_keys(self) -> set[tuple[str, int]]:
        return {e.key for e in self.events if e.entity}


class EventClock:
    """Monotonically increasing logical timestamp source, thread safe."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._now = 0

    def next(self) -> int:
        with self._lock:
            self._now += 1
            return self._now

    @property
    def now(self) -> int:
        with self._lock:
            return self._now


_TSV_HEADER = "ts\twall\tworker\tentity\tinstance\tkind\tnote"


def write_trace_tsv(trace: ExecutionTrace, path: str | Path) -> Path:
    """Write a trace as tab-separated text, one event per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_TSV_HEADER]
    for e in trace.events:
        note = e.note.replace("\t", " ").replace("\n", " ")
        lines.append(f"{e.ts}\t{e.wall:.6f}\t{e.worker}\t{e.entity}\t"
                     f"{e.instance}\t{e.kind.value}\t{note}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_trace_tsv(path: str | Path) -> ExecutionTrace:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _TSV_HEADER:
        raise ValueError(f"{path}: not a trace file")
    events = []
    for ln in lines[1:]:
        ts, wall, worker, entity, instance, kind, note = ln.split("\t", 6)
        events.append(TraceEvent(ts=int(ts), wall=float(wall), worker=int(worker),
                                 entity=entity, instance=int(instance),
                                 kind=EventKind(kind), note=note))
    return ExecutionTrace(events=events)
