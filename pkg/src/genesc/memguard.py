"""Guarded shared-memory cells: shadowing, coloring, and race analysis.

Two protection policies exist. SHADOW serializes all access through the
cell's lock, so concurrent writers can interleave but never tear. COLOR
binds the cell to one owner (an entity or a worker); a foreign access either
raises a signal or blocks until the cell is recolored, per configuration.

Race analysis is post hoc: it rebuilds happens-before from hard precedence
edges plus per-worker execution order (steals transfer tasks, not ordering
guarantees) and flags every unordered conflicting pair with at least one
write. A pair is a data race only if neither side went through shadow
serialization; shadow-serialized conflicts are general races.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable

from .errors import (
    ColorViolationSignal,
    TimestampDomainMismatchError,
)
from .graph import Hypergraph
from .tracing import (
    AccessEvent,
    AccessKind,
    EventClock,
    EventKind,
    ExecutionTrace,
)

BLOCK_TIMEOUT = 5.0  # seconds a blocked contender waits for a recolor

#: Owner tags admitted by a cell color.
OWNER_ENTITY = "entity"
OWNER_WORKER = "worker"


class Policy(str, Enum):
    SHADOW = "shadow"
    COLOR = "color"


class ColoredCell:
    """One guarded cell: an opaque payload plus an ownership color."""

    def __init__(self, cell_id: str, value: Any = None,
                 policy: Policy = Policy.COLOR,
                 color: tuple[str, Any] | None = None):
        self.id = cell_id
        self.value = value
        self.policy = Policy(policy)
        self.color = color  # None (unowned) or (OWNER_ENTITY, id) / (OWNER_WORKER, wid)
        self._lock = threading.Lock()
        self._changed = threading.Condition(self._lock)

    def __repr__(self) -> str:
        return (f"ColoredCell({self.id!r}, policy={self.policy.value}, "
                f"color={self.color})")


class MemGuard:
    """Runtime side of cell access: enforcement plus full access logging.

    One guard lives per run and shares the scheduler's event clock, so
    access events and trace events interleave in a single timestamp order.
    ``enforce_hook(kind, entity, instance, worker, note)`` lets the
    scheduler record block/signal events in its trace.
    """

    def __init__(self, clock: EventClock | None = None,
                 on_violation: str = "signal",
                 enforce_hook: Callable[..., None] | None = None):
        if on_violation not in {"signal", "block"}:
            raise ValueError(f"on_violation must be signal or block, "
                             f"got {on_violation!r}")
        self.clock = clock if clock is not None else EventClock()
        self.on_violation = on_violation
        self.enforce_hook = enforce_hook
        self.events: list[AccessEvent] = []
        self._elock = threading.Lock()

    def _log(self, cell: ColoredCell, entity: str, instance: int, worker: int,
             kind: AccessKind, note: str = "") -> None:
        ev = AccessEvent(cell=cell.id, entity=entity, instance=instance,
                         worker=worker, kind=kind, ts=self.clock.next(),
                         serialized=cell.policy is Policy.SHADOW, note=note)
        with self._elock:
            self.events.append(ev)

    def _owner_matches(self, cell: ColoredCell, entity: str, worker: int) -> bool:
        if cell.color is None:
            return True
        tag, owner = cell.color
        if tag == OWNER_ENTITY:
            return owner == entity
        if tag == OWNER_WORKER:
            return owner == worker
        return False

    def _enforce_color(self, cell: ColoredCell, entity: str, instance: int,
                       worker: int) -> None:
        # caller holds cell._lock
        if cell.policy is not Policy.COLOR or self._owner_matches(cell, entity, worker):
            return
        accessor = f"{entity}#{instance}@w{worker}"
        if self.on_violation == "block":
            if self.enforce_hook:
                self.enforce_hook(EventKind.BLOCK, entity, instance, worker,
                                  f"cell={cell.id}")
            deadline = BLOCK_TIMEOUT
            ok = cell._changed.wait_for(
                lambda: self._owner_matches(cell, entity, worker),
                timeout=deadline)
            if ok:
                return
            if self.enforce_hook:
                self.enforce_hook(EventKind.SIGNAL, entity, instance, worker,
                                  f"cell={cell.id} blocked-timeout")
            raise ColorViolationSignal(cell.id, accessor + " (block timeout)",
                                       cell.color)
        if self.enforce_hook:
            self.enforce_hook(EventKind.SIGNAL, entity, instance, worker,
                              f"cell={cell.id}")
        raise ColorViolationSignal(cell.id, accessor, cell.color)

    def read(self, cell: ColoredCell, entity: str, instance: int = 0,
             worker: int = 0) -> Any:
        with cell._lock:
            self._enforce_color(cell, entity, instance, worker)
            value = cell.value
            self._log(cell, entity, instance, worker, AccessKind.READ)
            return value

    def write(self, cell: ColoredCell, entity: str, instance: int = 0,
              worker: int = 0, value: Any = None) -> None:
        with cell._lock:
            if cell.policy is Policy.COLOR and cell.color is None:
                # first-touch rule: an unowned color cell binds to its first writer
                cell.color = (OWNER_ENTITY, entity)
                self._log(cell, entity, instance, worker, AccessKind.RECOLOR,
                          note=f"first-touch -> {cell.color}")
            else:
                self._enforce_color(cell, entity, instance, worker)
            cell.value = value
            self._log(cell, entity, instance, worker, AccessKind.WRITE)

    def recolor(self, cell: ColoredCell, owner: tuple[str, Any] | None) -> None:
        """Administrative handoff of a cell to a new owner (or to unowned)."""
        with cell._lock:
            cell.color = owner
            self._log(cell, "", -1, -1, AccessKind.RECOLOR,
                      note=f"recolor -> {owner}")
            cell._changed.notify_all()


# ---------------------------------------------------------------------------
# post-hoc race analysis
# ---------------------------------------------------------------------------

class RaceClass(str, Enum):
    GENERAL = "general"
    DATA = "data"


@dataclass(frozen=True)
class RacePair:
    first: AccessEvent
    second: AccessEvent
    classification: RaceClass
    disposition: str = "none"  # blocked / signaled accesses never commit


@dataclass
class RaceReport:
    pairs: list[RacePair] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.pairs

    def count(self, cls: RaceClass) -> int:
        return sum(1 for p in self.pairs if p.classification is cls)


def _task_order(trace: ExecutionTrace,
                hard_pairs: set[tuple[str, str]]) -> dict[tuple[str, int],
                                                          set[tuple[str, int]]]:
    """Reachability over tasks from hard edges plus per-worker run order."""
    starts: dict[tuple[str, int], int] = {}
    workers: dict[tuple[str, int], int] = {}
    for ev in trace.events:
        if ev.kind is EventKind.START:
            starts[ev.key] = ev.ts
            workers[ev.key] = ev.worker

    instances: dict[str, list[tuple[str, int]]] = {}
    for key in starts:
        instances.setdefault(key[0], []).append(key)

    succ: dict[tuple[str, int], set[tuple[str, int]]] = {k: set() for k in starts}
    for a, b in hard_pairs:
        for ka in instances.get(a, ()):
            for kb in instances.get(b, ()):
                succ[ka].add(kb)

    by_worker: dict[int, list[tuple[str, int]]] = {}
    for key, wid in workers.items():
        by_worker.setdefault(wid, []).append(key)
    for keys in by_worker.values():
        keys.sort(key=lambda k: starts[k])
        for prev, nxt in zip(keys, keys[1:]):
            succ[prev].add(nxt)

    reach: dict[tuple[str, int], set[tuple[str, int]]] = {}
    # In a constraint-safe trace every ordering edge advances the start
    # timestamp, so reverse start order is a reverse topological order.
    forward = all(starts[a] < starts[b] for a, bs in succ.items() for b in bs)
    if forward:
        for key in sorted(succ, key=lambda k: starts[k], reverse=True):
            out: set[tuple[str, int]] = set()
            for nxt in succ[key]:
                out.add(nxt)
                out |= reach.get(nxt, set())
            reach[key] = out
    else:
        # forged or violating trace: fall back to explicit BFS per task
        for key in succ:
            seen: set[tuple[str, int]] = set()
            frontier = list(succ[key])
            while frontier:
                nxt = frontier.pop()
                if nxt in seen:
                    continue
                seen.add(nxt)
                frontier.extend(succ[nxt])
            reach[key] = seen
    return reach


def analyze_races(trace: ExecutionTrace, events: Iterable[AccessEvent],
                  g: Hypergraph) -> RaceReport:
    """Flag unordered conflicting cell accesses from a completed run.

    Events and trace must share one timestamp domain: every task-attributed
    access event must fall inside that task's start/finish window in the
    trace.
    """
    events = list(events)
    window: dict[tuple[str, int], list[int | None]] = {}
    for ev in trace.events:
        if ev.kind is EventKind.START:
            window.setdefault(ev.key, [None, None])[0] = ev.ts
        elif ev.kind is EventKind.FINISH:
            window.setdefault(ev.key, [None, None])[1] = ev.ts

    for ev in events:
        if not ev.entity:
            continue  # administrative recolor, outside any task
        if ev.key not in window or window[ev.key][0] is None:
            raise TimestampDomainMismatchError(
                f"access event for unknown task {ev.key} at ts={ev.ts}")
        start, finish = window[ev.key]
        if ev.ts < start or (finish is not None and ev.ts > finish):
            raise TimestampDomainMismatchError(
                f"access event ts={ev.ts} outside task {ev.key} window "
                f"[{start}, {finish}]")

    reach = _task_order(trace, g.hard_pairs())

    def ordered(a: tuple[str, int], b: tuple[str, int]) -> bool:
        return b in reach.get(a, ()) or a in reach.get(b, ())

    by_cell: dict[str, list[AccessEvent]] = {}
    for ev in events:
        if ev.kind is AccessKind.RECOLOR or not ev.entity:
            continue
        by_cell.setdefault(ev.cell, []).append(ev)

    pairs: list[RacePair] = []
    for cell_events in by_cell.values():
        cell_events.sort(key=lambda e: e.ts)
        for i, a in enumerate(cell_events):
            for b in cell_events[i + 1:]:
                if a.key == b.key:
                    continue
                if a.kind is not AccessKind.WRITE and b.kind is not AccessKind.WRITE:
                    continue
                if ordered(a.key, b.key):
                    continue
                cls = (RaceClass.DATA if not a.serialized and not b.serialized
                       else RaceClass.GENERAL)
                pairs.append(RacePair(a, b, cls))
    return RaceReport(pairs=pairs)
