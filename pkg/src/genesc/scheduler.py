"""Precedence-aware work-stealing execution of a flattened hypergraph.

Dispatch model: every vertex expands into one task per data partition.
Readiness is tracked at the vertex level with dependency counters over hard
edges; a vertex's tasks enter the finishing worker's queue when its counter
hits zero. Idle workers steal from the oldest end of a random non-empty
peer. Among locally ready tasks, those whose soft predecessors are all done
are preferred; remaining ties are broken pseudorandomly per worker, so any
ready task may legally start next. The pool is resized by one worker at a
time, evaluated every RESIZE_QUANTUM task completions against ready-queue
watermarks.

Sequential mode runs the same graph one task at a time in a seeded
topological order on a single worker, with no stealing; for race-free
programs its outputs equal the parallel outputs.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import diagnostics
from .entity import AUTO_PARTITIONS, Cardinality, KernelRegistry, StreamEntity
from .errors import (
    CyclicHardConstraintsError,
    InputShapeMismatchError,
    KernelPanicError,
    UnknownKernelError,
)
from .graph import (
    Hypergraph,
    analyze,
    flatten,
    scheduling_soft_pairs,
    topological_order,
    validate_hard_acyclic,
)
from .memguard import ColoredCell, MemGuard
from .tracing import (
    AccessEvent,
    EventClock,
    EventKind,
    ExecutionTrace,
    TaskState,
    TraceEvent,
)

log = logging.getLogger(__name__)

RESIZE_QUANTUM = 64
_SCHEDULER_WORKER = -1  # worker id used for events the scheduler itself emits
_STALL_TIMEOUT = 300.0


class Mode(str, Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"


@dataclass
class SchedulerConfig:
    min_workers: int = 1
    max_workers: int = 4
    watermark_low: int = 2
    watermark_high: int = 8
    seed: int = 0
    mode: Mode = Mode.PARALLEL
    on_color_violation: str = "signal"  # or "block"

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        if not (1 <= self.min_workers <= self.max_workers):
            raise ValueError(
                f"need 1 <= min_workers <= max_workers, got "
                f"{self.min_workers}..{self.max_workers}")
        if self.watermark_low >= self.watermark_high:
            raise ValueError("watermark_low must be below watermark_high")

    @classmethod
    def from_file(cls, path: str | Path) -> "SchedulerConfig":
        """Load ``key = value`` lines; '#' starts a comment."""
        kwargs: dict[str, Any] = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in {"min_workers", "max_workers", "watermark_low",
                       "watermark_high", "seed"}:
                kwargs[key] = int(value)
            elif key == "mode":
                kwargs[key] = Mode(value)
            elif key == "on_color_violation":
                kwargs[key] = value
            else:
                raise ValueError(f"{path}:{lineno}: unknown key '{key}'")
        return cls(**kwargs)


@dataclass(frozen=True)
class Partition:
    index: int
    count: int
    lo: int
    hi: int

    @property
    def size(self) -> int:
        return self.hi - self.lo


@dataclass
class Task:
    entity: str
    instance: int
    part: Partition | None = None
    state: TaskState = TaskState.PENDING

    @property
    def key(self) -> tuple[str, int]:
        return (self.entity, self.instance)


@dataclass
class RunReport:
    outputs: dict[str, Any]
    trace: ExecutionTrace
    worker_timeline: list[tuple[int, int]]
    violations: list
    access_events: list[AccessEvent] = field(default_factory=list)
    task_states: dict[tuple[str, int], TaskState] = field(default_factory=dict)
    steals: int = 0

    @property
    def ok(self) -> bool:
        return (not self.violations and not self.trace.partial
                and all(s is TaskState.DONE for s in self.task_states.values()))


@dataclass
class KernelContext:
    """What a kernel sees: its task, its data, and guarded cells."""

    task: Task
    inputs: Any
    upstream: dict[str, Any]
    cells: Mapping[str, ColoredCell]
    worker: int
    guard: MemGuard

    @property
    def part(self) -> Partition | None:
        return self.task.part

    def read(self, cell_name: str) -> Any:
        return self.guard.read(self.cells[cell_name], self.task.entity,
                               self.task.instance, self.worker)

    def write(self, cell_name: str, value: Any) -> None:
        self.guard.write(self.cells[cell_name], self.task.entity,
                         self.task.instance, self.worker, value)


def partition_map(e: StreamEntity, data: Any, n: int) -> list[Task]:
    """Split stream data into n contiguous block tasks for one entity.

    Block sizes differ by at most one. If n exceeds the element count it is
    clamped with a warning; instance outputs are reassembled in partition
    order by the runtime.
    """
    if n < 1:
        raise ValueError("partition count must be >= 1")
    if not e.inputs or e.inputs[0].cardinality is not Cardinality.STREAM:
        raise InputShapeMismatchError(
            f"entity '{e.id}': first input port must have stream cardinality "
            f"to be partitioned")
    size = len(data)
    if n > size:
        log.warning("entity '%s': %d partitions requested for %d elements; "
                    "clamping", e.id, n, size)
        n = max(size, 1) if size else 0
    if n == 0:
        return []
    base, rem = divmod(size, n)
    tasks: list[Task] = []
    lo = 0
    for i in range(n):
        hi = lo + base + (1 if i < rem else 0)
        tasks.append(Task(entity=e.id, instance=i,
                          part=Partition(index=i, count=n, lo=lo, hi=hi)))
        lo = hi
    return tasks


def resize_pool(current: int, ready_depth: int, cfg: SchedulerConfig) -> int:
    """Watermark policy: grow or shrink the pool by at most one worker."""
    if ready_depth > cfg.watermark_high and current < cfg.max_workers:
        return current + 1
    if ready_depth < cfg.watermark_low and current > cfg.min_workers:
        return current - 1
    return current


def _reassemble(parts: list[Any]) -> Any:
    if len(parts) == 1:
        return parts[0]
    if not parts:
        return []
    if all(isinstance(p, np.ndarray) for p in parts):
        return np.concatenate(parts)
    if all(isinstance(p, list) for p in parts):
        return [x for p in parts for x in p]
    return tuple(parts)


def _noop_kernel(ctx: KernelContext) -> None:
    return None


class _Run:
    """Shared state of one run; owns the trace channel and worker pool."""

    def __init__(self, g: Hypergraph, inputs: Mapping[str, Any] | None,
                 cfg: SchedulerConfig, kernels: KernelRegistry,
                 cells: Mapping[str, ColoredCell] | None,
                 dump_on_error: str | Path | None):
        if not g.is_flat:
            g = flatten(g)
        report = validate_hard_acyclic(g)
        if not report.ok:
            raise CyclicHardConstraintsError(report.cycles)
        self.g = g
        self.inputs = dict(inputs or {})
        self.cfg = cfg
        self.kernels = kernels
        self.cells = dict(cells or {})
        self.dump_on_error = Path(dump_on_error) if dump_on_error else None

        unknown = set(self.inputs) - set(g.vertices)
        if unknown:
            raise InputShapeMismatchError(
                f"inputs for unknown entities: {sorted(unknown)}")
        missing = sorted(
            v.kernel.name for v in g.vertices.values()
            if not v.kernel.name.startswith("@") and v.kernel.name not in kernels)
        if missing:
            raise UnknownKernelError(
                f"kernels not registered: {missing}")

        self.clock = EventClock()
        self.guard = MemGuard(clock=self.clock,
                              on_violation=cfg.on_color_violation,
                              enforce_hook=self._record_enforce)
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._events: list[TraceEvent] = []
        self._elock = threading.Lock()

        self.hard_succ = g.successors()
        self.hard_pred = g.predecessors()
        self.soft_pred: dict[str, set[str]] = {v: set() for v in g.vertices}
        for a, b in scheduling_soft_pairs(g):
            self.soft_pred[b].add(a)

        if cfg.mode is Mode.PARALLEL:
            width = analyze(g).width if g.vertices else cfg.min_workers
            self.initial_workers = min(max(width, cfg.min_workers),
                                       cfg.max_workers)
        else:
            self.initial_workers = 1

        self.tasks: dict[str, list[Task]] = {}
        for vid, vertex in g.vertices.items():
            self.tasks[vid] = self._expand(vertex)
        self.states: dict[tuple[str, int], TaskState] = {
            t.key: TaskState.PENDING for ts in self.tasks.values() for t in ts}
        self.remaining_deps = {v: len(self.hard_pred[v]) for v in g.vertices}
        self.remaining_inst = {v: len(self.tasks[v]) for v in g.vertices}
        self.raw_out: dict[str, dict[int, Any]] = {v: {} for v in g.vertices}
        self.outputs: dict[str, Any] = {}
        self.done_entities: set[str] = set()
        self.completions = 0
        self.steals = 0
        self.total_entities = len(g.vertices)
        self.finished = self.total_entities == 0
        self.aborted = False
        self.failure: tuple[tuple[str, int], BaseException] | None = None

        self.queues: dict[int, list[Task]] = {}
        self.injector: list[Task] = []
        self.active: set[int] = set()
        self.retired: set[int] = set()
        self.threads: list[threading.Thread] = []
        self.timeline: list[tuple[int, int]] = []
        self._next_wid = 0

    # -- event recording -----------------------------------------------------

    def _record(self, kind: EventKind, worker: int, entity: str = "",
                instance: int = -1, note: str = "") -> None:
        ev = TraceEvent(ts=self.clock.next(), worker=worker, entity=entity,
                        instance=instance, kind=kind, note=note,
                        wall=time.monotonic())
        with self._elock:
            self._events.append(ev)

    def _record_enforce(self, kind: EventKind, entity: str, instance: int,
                        worker: int, note: str) -> None:
        self._record(kind, worker, entity, instance, note)

    # -- task expansion --------------------------------------------------------

    def _expand(self, vertex: StreamEntity) -> list[Task]:
        if vertex.partitions is None:
            return [Task(entity=vertex.id, instance=0)]
        if vertex.partitions == AUTO_PARTITIONS:
            n = self.initial_workers
        else:
            n = vertex.partitions
        if vertex.id not in self.inputs:
            raise InputShapeMismatchError(
                f"data-parallel entity '{vertex.id}' needs an entry in the "
                f"run inputs to size its partitions")
        data = self.inputs[vertex.id]
        try:
            len(data)
        except TypeError:
            raise InputShapeMismatchError(
                f"input for data-parallel entity '{vertex.id}' has no length")
        return partition_map(vertex, data, n)

    # -- bookkeeping (callers hold self._lock) ----------------------------------

    def _mark_ready(self, vid: str, worker: int) -> None:
        for task in self.tasks[vid]:
            task.state = TaskState.READY
            self.states[task.key] = TaskState.READY
            self._record(EventKind.READY, worker, task.entity, task.instance)
        if not self.tasks[vid]:
            # zero-partition entity (empty stream data): complete immediately
            self._entity_done(vid, worker)

    def _entity_done(self, vid: str, worker: int) -> None:
        self.outputs[vid] = _reassemble(
            [self.raw_out[vid][i] for i in range(len(self.tasks[vid]))])
        self.done_entities.add(vid)
        for succ in sorted(self.hard_succ[vid]):
            self.remaining_deps[succ] -= 1
            if self.remaining_deps[succ] == 0 and self.cfg.mode is Mode.PARALLEL:
                # sequential mode readies vertices when the order reaches them
                self._mark_ready(succ, worker)
                # a retired worker may still be finishing its last task; its
                # queue is dead, so route successors through the injector
                if worker in self.active:
                    queue = self.queues[worker]
                else:
                    queue = self.injector
                queue.extend(self.tasks[succ])
        if len(self.done_entities) == self.total_entities:
            self.finished = True

    def _ready_depth(self) -> int:
        return sum(len(q) for q in self.queues.values()) + len(self.injector)

    # -- kernel invocation -----------------------------------------------------

    def _kernel_for(self, vertex: StreamEntity) -> Callable[..., Any]:
        if vertex.kernel.name.startswith("@"):
            return _noop_kernel
        return self.kernels.resolve(vertex.kernel.name)

    def _context(self, task: Task, worker: int) -> KernelContext:
        upstream = {p: self.outputs[p] for p in sorted(self.hard_pred[task.entity])}
        return KernelContext(task=task, inputs=self.inputs.get(task.entity),
                             upstream=upstream, cells=self.cells,
                             worker=worker, guard=self.guard)

    def _execute(self, task: Task, worker: int) -> bool:
        """Run one task; returns False when the run must abort."""
        vertex = self.g.vertices[task.entity]
        with self._lock:
            task.state = TaskState.RUNNING
            self.states[task.key] = TaskState.RUNNING
            ctx = self._context(task, worker)
        self._record(EventKind.START, worker, task.entity, task.instance)
        try:
            out = self._kernel_for(vertex)(ctx)
        except Exception as exc:  # noqa: BLE001 - kernel code is arbitrary
            with self._cond:
                task.state = TaskState.FAILED
                self.states[task.key] = TaskState.FAILED
                self._record(EventKind.FINISH, worker, task.entity,
                             task.instance, note=f"failed: {exc!r}")
                self.failure = (task.key, exc)
                self.aborted = True
                self._cond.notify_all()
            return False
        with self._cond:
            task.state = TaskState.DONE
            self.states[task.key] = TaskState.DONE
            self._record(EventKind.FINISH, worker, task.entity, task.instance)
            self.raw_out[task.entity][task.instance] = out
            self.remaining_inst[task.entity] -= 1
            if self.remaining_inst[task.entity] == 0:
                self._entity_done(task.entity, worker)
            self.completions += 1
            if (self.cfg.mode is Mode.PARALLEL
                    and self.completions % RESIZE_QUANTUM == 0):
                self._maybe_resize(worker)
            self._cond.notify_all()
        return True

    # -- parallel pool -----------------------------------------------------------

    def _spawn_worker(self) -> int:
        wid = self._next_wid
        self._next_wid += 1
        self.queues.setdefault(wid, [])
        self.active.add(wid)
        thread = threading.Thread(target=self._worker_loop, args=(wid,),
                                  name=f"genesc-w{wid}", daemon=True)
        self.threads.append(thread)
        thread.start()
        return wid

    def _maybe_resize(self, worker: int) -> None:
        current = len(self.active)
        new = resize_pool(current, self._ready_depth(), self.cfg)
        if new == current:
            return
        if new > current:
            wid = self._spawn_worker()
            self._record(EventKind.RESIZE, worker, note=f"workers={new} +w{wid}")
        else:
            victims = sorted(w for w in self.active if w != worker)
            if not victims:
                return
            victim = victims[-1]
            self.retired.add(victim)
            self.active.discard(victim)
            self.injector.extend(self.queues[victim])
            self.queues[victim] = []
            self._record(EventKind.RESIZE, worker, note=f"workers={new} -w{victim}")
        self.timeline.append((self.clock.now, len(self.active)))

    def _acquire(self, wid: int, rng: random.Random) -> Task | None:
        with self._cond:
            while True:
                if self.finished or self.aborted or wid in self.retired:
                    return None
                queue = self.queues[wid]
                if queue:
                    return self._pick(queue, rng)
                if self.injector:
                    return self.injector.pop(0)
                task = self._steal(wid, rng)
                if task is not None:
                    return task
                self._cond.wait(timeout=0.05)

    def _pick(self, queue: list[Task], rng: random.Random) -> Task:
        preferred = [i for i, t in enumerate(queue)
                     if self.soft_pred[t.entity] <= self.done_entities]
        pool = preferred or list(range(len(queue)))
        return queue.pop(pool[rng.randrange(len(pool))])

    def _steal(self, wid: int, rng: random.Random) -> Task | None:
        victims = [w for w in self.active
                   if w != wid and self.queues.get(w)]
        if not victims:
            return None
        victim = victims[rng.randrange(len(victims))]
        task = self.queues[victim].pop(0)  # oldest end
        self.steals += 1
        self._record(EventKind.STEAL, wid, task.entity, task.instance,
                     note=f"from=w{victim}")
        return task

    def _worker_loop(self, wid: int) -> None:
        rng = random.Random((self.cfg.seed << 16) ^ (wid * 0x9E3779B1 + 1))
        while True:
            task = self._acquire(wid, rng)
            if task is None:
                return
            if not self._execute(task, wid):
                return

    # -- drivers -------------------------------------------------------------------

    def run_parallel(self) -> RunReport:
        with self._lock:
            seeds = [v for v in self.g.vertices if self.remaining_deps[v] == 0]
            for vid in sorted(seeds):
                self._mark_ready(vid, _SCHEDULER_WORKER)
            for wid in range(self.initial_workers):
                self.queues[wid] = []
            pending = [t for vid in sorted(seeds) for t in self.tasks[vid]
                       if self.states[t.key] is TaskState.READY]
            for i, task in enumerate(pending):
                self.queues[i % self.initial_workers].append(task)
            self.timeline.append((self.clock.now, self.initial_workers))
        for _ in range(self.initial_workers):
            with self._lock:
                self._spawn_worker()

        deadline = time.monotonic() + _STALL_TIMEOUT
        with self._cond:
            while not (self.finished or self.aborted):
                self._cond.wait(timeout=0.1)
                if time.monotonic() > deadline:
                    raise RuntimeError("scheduler stalled; aborting run")
            self._cond.notify_all()
        for thread in self.threads:
            thread.join(timeout=10.0)
        return self._finalize()

    def run_sequential(self, seed: int) -> RunReport:
        self.timeline.append((self.clock.now, 1))
        order = topological_order(self.g, seed)
        for vid in order:
            if self.aborted:
                break
            with self._lock:
                self._mark_ready(vid, 0)
            for task in self.tasks[vid]:
                if not self._execute(task, 0):
                    break
        return self._finalize()

    def _finalize(self) -> RunReport:
        trace = ExecutionTrace(events=sorted(self._events, key=lambda e: e.ts),
                               partial=self.aborted)
        violations = diagnostics.verify_trace(self.g, trace)
        sinks = set(self.g.sinks())
        outputs = {vid: out for vid, out in self.outputs.items() if vid in sinks}
        report = RunReport(outputs=outputs, trace=trace,
                           worker_timeline=list(self.timeline),
                           violations=violations,
                           access_events=list(self.guard.events),
                           task_states=dict(self.states),
                           steals=self.steals)
        if self.aborted and self.failure is not None:
            task_key, cause = self.failure
            dump_path = None
            if self.dump_on_error is not None:
                dump_path = diagnostics.dump_core(
                    self.g, trace, cause=f"kernel panic in "
                    f"{task_key[0]}#{task_key[1]}: {cause!r}",
                    path=self.dump_on_error, task_states=self.states,
                    access_events=self.guard.events)
            raise KernelPanicError(task_key, cause, report=report,
                                   dump_path=dump_path)
        return report


def run_parallel(g: Hypergraph, inputs: Mapping[str, Any] | None,
                 cfg: SchedulerConfig, kernels: KernelRegistry,
                 cells: Mapping[str, ColoredCell] | None = None,
                 dump_on_error: str | Path | None = None) -> RunReport:
    """Execute every reachable task exactly once on a work-stealing pool.

    Raises KernelPanicError if a kernel raises; a core dump is written first
    when ``dump_on_error`` names a path.
    """
    cfg = replace(cfg, mode=Mode.PARALLEL)
    run = _Run(g, inputs, cfg, kernels, cells, dump_on_error)
    return run.run_parallel()


def run_sequential(g: Hypergraph, inputs: Mapping[str, Any] | None,
                   seed: int = 0, kernels: KernelRegistry | None = None,
                   cells: Mapping[str, ColoredCell] | None = None,
                   dump_on_error: str | Path | None = None,
                   cfg: SchedulerConfig | None = None) -> RunReport:
    """Deterministic one-task-at-a-time reduction of the same program."""
    if kernels is None:
        raise TypeError("run_sequential requires a kernel registry")
    base = cfg if cfg is not None else SchedulerConfig()
    cfg = replace(base, mode=Mode.SEQUENTIAL, seed=seed,
                  min_workers=1, max_workers=max(1, base.max_workers))
    run = _Run(g, inputs, cfg, kernels, cells, dump_on_error)
    return run.run_sequential(seed)
