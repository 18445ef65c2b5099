"""Trace verification and crash dumps.

``verify_trace`` checks the one property the runtime promises about hard
constraints: every instance of the predecessor finished before any instance
of the successor started. ``dump_core`` freezes a run's evidence (graph
segment, trace, task states, races) into one loadable, atomically written
file so a failure never loses its context.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import IoFailureError, TruncatedRecordError, UnknownTaskInTraceError
from .graph import Hypergraph
from .manifest import _Reader, _Writer, emit_graph_segment, load_graph_segment
from .memguard import RaceClass, RacePair, RaceReport
from .tracing import (
    AccessEvent,
    AccessKind,
    EventKind,
    ExecutionTrace,
    TaskState,
    TraceEvent,
)

DUMP_MAGIC = b"GSCD"
DUMP_VERSION = 1


@dataclass(frozen=True)
class Violation:
    source: str
    target: str
    detail: str

    def __str__(self) -> str:
        return f"{self.source} -> {self.target}: {self.detail}"


def verify_trace(g: Hypergraph, trace: ExecutionTrace) -> list[Violation]:
    """List every hard edge whose endpoints violate finish-before-start."""
    for ev in trace.events:
        if ev.entity and ev.entity not in g.vertices:
            raise UnknownTaskInTraceError(
                f"trace mentions unknown entity '{ev.entity}'")

    starts: dict[str, dict[int, int]] = {}
    finishes: dict[str, dict[int, int]] = {}
    for ev in trace.events:
        if ev.kind is EventKind.START:
            starts.setdefault(ev.entity, {})[ev.instance] = ev.ts
        elif ev.kind is EventKind.FINISH:
            finishes.setdefault(ev.entity, {})[ev.instance] = ev.ts

    violations: list[Violation] = []
    for a, b in sorted(g.hard_pairs()):
        b_starts = starts.get(b)
        if not b_starts:
            continue  # successor never started; nothing to violate
        first_start = min(b_starts.values())
        a_starts = starts.get(a, {})
        a_finishes = finishes.get(a, {})
        if not a_starts:
            violations.append(Violation(a, b, f"'{b}' started but '{a}' never ran"))
            continue
        unfinished = sorted(set(a_starts) - set(a_finishes))
        if unfinished:
            violations.append(Violation(
                a, b, f"'{b}' started while '{a}' instances {unfinished} "
                      f"had not finished"))
            continue
        last_finish = max(a_finishes.values())
        if last_finish >= first_start:
            violations.append(Violation(
                a, b, f"'{a}' finished at ts={last_finish} after '{b}' "
                      f"started at ts={first_start}"))
    return violations


# ---------------------------------------------------------------------------
# core dump format
# ---------------------------------------------------------------------------

_STATE_ENC = {TaskState.PENDING: 0, TaskState.READY: 1, TaskState.RUNNING: 2,
              TaskState.DONE: 3, TaskState.FAILED: 4}
_STATE_DEC = {v: k for k, v in _STATE_ENC.items()}
_EVENT_ENC = {k: i for i, k in enumerate(EventKind)}
_EVENT_DEC = {i: k for i, k in enumerate(EventKind)}
_ACCESS_ENC = {k: i for i, k in enumerate(AccessKind)}
_ACCESS_DEC = {i: k for i, k in enumerate(AccessKind)}
_RACE_ENC = {RaceClass.GENERAL: 0, RaceClass.DATA: 1}
_RACE_DEC = {v: k for k, v in _RACE_ENC.items()}


@dataclass
class CoreDump:
    graph: Hypergraph
    trace: ExecutionTrace
    cause: str
    task_states: dict[tuple[str, int], TaskState] = field(default_factory=dict)
    access_events: list[AccessEvent] = field(default_factory=list)
    races: RaceReport | None = None
    version: int = DUMP_VERSION


def _trace_block(trace: ExecutionTrace, cause: str,
                 task_states: Mapping[tuple[str, int], TaskState]) -> bytes:
    w = _Writer()
    w.u8(1 if trace.partial else 0)
    w.string(cause)
    w.u32(len(task_states))
    for (entity, instance) in sorted(task_states):
        w.string(entity)
        w.i32(instance)
        w.u8(_STATE_ENC[task_states[(entity, instance)]])
    w.u32(len(trace.events))
    for e in trace.events:
        w.parts.append(struct.pack("<Qd", e.ts, e.wall))
        w.i32(e.worker)
        w.string(e.entity)
        w.i32(e.instance)
        w.u8(_EVENT_ENC[e.kind])
        w.string(e.note)
    return w.bytes_()


def _read_trace_block(data: bytes) -> tuple[ExecutionTrace, str,
                                            dict[tuple[str, int], TaskState]]:
    r = _Reader(data, context="trace block")
    partial = bool(r.u8())
    cause = r.string()
    states: dict[tuple[str, int], TaskState] = {}
    for i in range(r.u32()):
        r.context = f"task state record {i}"
        entity = r.string()
        instance = r.i32()
        states[(entity, instance)] = _STATE_DEC[r.u8()]
    events: list[TraceEvent] = []
    n_events = r.u32()
    for i in range(n_events):
        r.context = f"trace event record {i}"
        ts, wall = struct.unpack("<Qd", r._need(16))
        events.append(TraceEvent(ts=ts, wall=wall, worker=r.i32(),
                                 entity=r.string(), instance=r.i32(),
                                 kind=_EVENT_DEC[r.u8()], note=r.string()))
    return ExecutionTrace(events=events, partial=partial), cause, states


def _access_record(w: _Writer, ev: AccessEvent) -> None:
    w.string(ev.cell)
    w.string(ev.entity)
    w.i32(ev.instance)
    w.i32(ev.worker)
    w.u8(_ACCESS_ENC[ev.kind])
    w.parts.append(struct.pack("<Q", ev.ts))
    w.u8(1 if ev.serialized else 0)
    w.string(ev.note)


def _read_access(r: _Reader) -> AccessEvent:
    return AccessEvent(cell=r.string(), entity=r.string(), instance=r.i32(),
                       worker=r.i32(), kind=_ACCESS_DEC[r.u8()],
                       ts=struct.unpack("<Q", r._need(8))[0],
                       serialized=bool(r.u8()), note=r.string())


def _race_block(access_events: Iterable[AccessEvent],
                races: RaceReport | None) -> bytes:
    w = _Writer()
    events = list(access_events)
    w.u32(len(events))
    for ev in events:
        _access_record(w, ev)
    pairs = races.pairs if races is not None else []
    w.u32(len(pairs))
    for p in pairs:
        _access_record(w, p.first)
        _access_record(w, p.second)
        w.u8(_RACE_ENC[p.classification])
        w.string(p.disposition)
    return w.bytes_()


def _read_race_block(data: bytes) -> tuple[list[AccessEvent], RaceReport]:
    r = _Reader(data, context="race block")
    events = []
    for i in range(r.u32()):
        r.context = f"access event record {i}"
        events.append(_read_access(r))
    pairs = []
    n_pairs = r.u32()
    for i in range(n_pairs):
        r.context = f"race pair record {i}"
        first = _read_access(r)
        second = _read_access(r)
        pairs.append(RacePair(first, second, _RACE_DEC[r.u8()],
                              disposition=r.string()))
    return events, RaceReport(pairs=pairs)


def dump_core(g: Hypergraph, trace: ExecutionTrace, cause: str,
              path: str | Path,
              task_states: Mapping[tuple[str, int], TaskState] | None = None,
              access_events: Iterable[AccessEvent] = (),
              races: RaceReport | None = None) -> Path:
    """Write a complete dump atomically; retries once to the temp directory.

    Partial traces are allowed and flagged inside the trace block, so a
    dump taken mid-run still loads.
    """
    blocks = [
        emit_graph_segment(g),
        _trace_block(trace, cause, dict(task_states or {})),
        _race_block(access_events, races),
    ]
    head = DUMP_MAGIC + struct.pack("<HH", DUMP_VERSION, 0)
    body = head + b"".join(struct.pack("<I", len(b)) + b for b in blocks)

    def attempt(target: Path) -> Path:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(body)
        os.replace(tmp, target)
        return target

    path = Path(path)
    try:
        return attempt(path)
    except OSError as first_error:
        fallback = Path(tempfile.gettempdir()) / path.name
        try:
            return attempt(fallback)
        except OSError as second_error:
            raise IoFailureError(
                f"could not write dump to {path} ({first_error}) nor to "
                f"{fallback} ({second_error})")


def load_core_dump(path: str | Path) -> CoreDump:
    data = Path(path).read_bytes()
    if data[:4] != DUMP_MAGIC:
        raise TruncatedRecordError(
            f"bad dump magic {data[:4]!r} (expected {DUMP_MAGIC!r})")
    version = struct.unpack("<H", data[4:6])[0]
    if version != DUMP_VERSION:
        raise TruncatedRecordError(f"dump version {version} unsupported")
    pos = 8
    blocks: list[bytes] = []
    for i in range(3):
        if pos + 4 > len(data):
            raise TruncatedRecordError(f"dump truncated before block {i}")
        (length,) = struct.unpack("<I", data[pos:pos + 4])
        pos += 4
        if pos + length > len(data):
            raise TruncatedRecordError(f"dump truncated inside block {i}")
        blocks.append(data[pos:pos + length])
        pos += length

    graph = load_graph_segment(blocks[0])
    trace, cause, states = _read_trace_block(blocks[1])
    access_events, races = _read_race_block(blocks[2])
    return CoreDump(graph=graph, trace=trace, cause=cause, task_states=states,
                    access_events=access_events, races=races, version=version)


def summarize_dump(dump: CoreDump) -> str:
    lines = [
        f"core dump v{dump.version}",
        f"cause: {dump.cause or '(none)'}",
        f"graph: {len(dump.graph.vertices)} vertices, "
        f"{len(dump.graph.edges)} edges",
        f"trace: {len(dump.trace.events)} events"
        + (" (partial)" if dump.trace.partial else ""),
    ]
    by_state: dict[TaskState, int] = {}
    for state in dump.task_states.values():
        by_state[state] = by_state.get(state, 0) + 1
    if by_state:
        summary = ", ".join(f"{state.value}={count}"
                            for state, count in sorted(by_state.items(),
                                                       key=lambda kv: kv[0].value))
        lines.append(f"tasks: {summary}")
    failed = sorted(k for k, s in dump.task_states.items()
                    if s is TaskState.FAILED)
    for entity, instance in failed:
        lines.append(f"failed task: {entity}#{instance}")
    if dump.races is not None and not dump.races.empty:
        lines.append(f"races: {len(dump.races.pairs)} conflicting pairs")
    else:
        lines.append("races: none recorded")
    return "\n".join(lines)
