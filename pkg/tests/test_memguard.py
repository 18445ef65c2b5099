"""Cell protection policies and race analysis."""

from __future__ import annotations

import random
import threading

import pytest

from genesc.entity import Direction, EntityBuilder, RelationConstraint, Strength
from genesc.errors import (
    ColorViolationSignal,
    KernelPanicError,
    TimestampDomainMismatchError,
)
from genesc.graph import build_graph, flatten
from genesc.memguard import (
    OWNER_ENTITY,
    OWNER_WORKER,
    ColoredCell,
    MemGuard,
    Policy,
    RaceClass,
    analyze_races,
)
from genesc.scheduler import SchedulerConfig, run_parallel, run_sequential
from genesc.tracing import AccessKind, EventKind, ExecutionTrace, TraceEvent

from generators import base_registry, race_scenario
from oracles import hb_conflicting_pairs


class TestCellOps:
    def test_owner_reads_own_color_cell(self):
        guard = MemGuard()
        cell = ColoredCell("c", value=41, policy=Policy.COLOR,
                           color=(OWNER_ENTITY, "me"))
        assert guard.read(cell, "me", 0, 0) == 41
        assert len(guard.events) == 1
        assert guard.events[0].kind is AccessKind.READ
        assert not guard.events[0].serialized

    def test_foreign_read_signals(self):
        guard = MemGuard(on_violation="signal")
        cell = ColoredCell("c", policy=Policy.COLOR,
                           color=(OWNER_ENTITY, "owner"))
        with pytest.raises(ColorViolationSignal) as info:
            guard.read(cell, "intruder", 0, 1)
        assert info.value.cell_id == "c"
        assert "intruder" in str(info.value)

    def test_worker_color_binding(self):
        guard = MemGuard()
        cell = ColoredCell("c", policy=Policy.COLOR, color=(OWNER_WORKER, 2))
        guard.write(cell, "anyone", 0, 2, value=5)
        with pytest.raises(ColorViolationSignal):
            guard.write(cell, "anyone", 0, 3, value=6)
        assert cell.value == 5

    def test_first_touch_autocolor(self):
        guard = MemGuard()
        cell = ColoredCell("c", policy=Policy.COLOR)
        guard.write(cell, "writer", 0, 0, value=10)
        assert cell.color == (OWNER_ENTITY, "writer")
        kinds = [e.kind for e in guard.events]
        assert kinds == [AccessKind.RECOLOR, AccessKind.WRITE]

    def test_shadow_serializes_concurrent_writers(self):
        guard = MemGuard()
        cell = ColoredCell("c", value=0, policy=Policy.SHADOW)
        errors = []

        def writer(tag):
            try:
                for i in range(200):
                    guard.write(cell, tag, 0, hash(tag) % 7, value=(tag, i))
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=writer, args=(t,))
                   for t in ("a", "b", "c")]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        # payload is never torn: it always equals something that was written
        assert cell.value[0] in {"a", "b", "c"} and 0 <= cell.value[1] < 200
        writes = [e for e in guard.events if e.kind is AccessKind.WRITE]
        assert len(writes) == 600
        assert all(e.serialized for e in writes)
        ts = [e.ts for e in guard.events]
        assert len(set(ts)) == len(ts)

    def test_recolor_unblocks_waiter(self):
        guard = MemGuard(on_violation="block")
        cell = ColoredCell("c", value="secret", policy=Policy.COLOR,
                           color=(OWNER_ENTITY, "owner"))
        got = []

        def reader():
            got.append(guard.read(cell, "later_owner", 0, 1))

        t = threading.Thread(target=reader)
        t.start()
        t.join(timeout=0.2)
        assert t.is_alive()  # still blocked
        guard.recolor(cell, (OWNER_ENTITY, "later_owner"))
        t.join(timeout=2.0)
        assert not t.is_alive()
        assert got == ["secret"]

    def test_block_events_reach_enforce_hook(self):
        hooked = []
        guard = MemGuard(on_violation="block",
                         enforce_hook=lambda *a: hooked.append(a))
        cell = ColoredCell("c", value=3, policy=Policy.COLOR,
                           color=(OWNER_ENTITY, "owner"))
        t = threading.Thread(
            target=lambda: guard.read(cell, "waiter", 0, 1))
        t.start()
        t.join(timeout=0.2)
        assert hooked and hooked[0][0] is EventKind.BLOCK
        guard.recolor(cell, (OWNER_ENTITY, "waiter"))
        t.join(timeout=2.0)
        assert not t.is_alive()

    def test_blocked_timeout_signals(self, monkeypatch):
        import genesc.memguard as memguard

        monkeypatch.setattr(memguard, "BLOCK_TIMEOUT", 0.05)
        guard = MemGuard(on_violation="block")
        cell = ColoredCell("c", policy=Policy.COLOR,
                           color=(OWNER_ENTITY, "owner"))
        with pytest.raises(ColorViolationSignal):
            guard.read(cell, "never_owner", 0, 1)


class TestAnalyzeRaces:
    def test_synthetic_planted_and_control(self):
        for seed in range(60):
            rng = random.Random(seed)
            scenario = race_scenario(rng, planted=bool(seed % 2))
            flat = flatten(scenario.graph)
            report = analyze_races(scenario.trace, scenario.access_events,
                                   flat)
            got = {frozenset({(p.first.cell, p.first.key, p.first.ts),
                              (p.second.cell, p.second.key, p.second.ts)})
                   for p in report.pairs}
            assert got == scenario.planted, f"seed {seed}"
            oracle = hb_conflicting_pairs(scenario.trace,
                                          scenario.access_events,
                                          flat.hard_pairs())
            assert got == oracle, f"seed {seed} (oracle)"

    def test_hard_edge_orders_conflicting_writes(self):
        builder = EntityBuilder(base_registry())
        cell = ColoredCell("shared", policy=Policy.SHADOW)

        def writer(ctx):
            ctx.write("shared", ctx.task.entity)

        builder.kernels.register("writer", writer)
        builder.make_entity("first", "writer")
        builder.make_entity(
            "second", "writer",
            relations=[RelationConstraint("first", Direction.AFTER,
                                          Strength.HARD)])
        g = build_graph([builder._entities["first"],
                         builder._entities["second"]])
        report = run_parallel(g, None, SchedulerConfig(min_workers=2,
                                                       max_workers=2),
                              builder.kernels, cells={"shared": cell})
        races = analyze_races(report.trace, report.access_events, flatten(g))
        assert races.empty

    def test_unordered_shadow_writers_are_general_race(self):
        report, g = _run_conflicting_pair(Policy.SHADOW)
        races = analyze_races(report.trace, report.access_events, g)
        assert len(races.pairs) == 1
        assert races.pairs[0].classification is RaceClass.GENERAL

    def test_unordered_instance_writes_are_data_race(self):
        # two instances of one entity share its color; nothing serializes
        # or orders them, which is the definition of a data race
        from genesc.entity import Cardinality, PortSpec

        barrier = threading.Barrier(2, timeout=5.0)
        builder = EntityBuilder(base_registry())
        cell = ColoredCell("acc", policy=Policy.COLOR,
                           color=(OWNER_ENTITY, "mapper"))

        def block_writer(ctx):
            barrier.wait()
            ctx.write("acc", ctx.part.index)

        builder.kernels.register("block_writer", block_writer, 1, 0)
        builder.make_entity(
            "mapper", "block_writer",
            inputs=[PortSpec("xs", "scalar-array", Cardinality.STREAM)],
            partitions=2)
        g = build_graph([builder._entities["mapper"]])
        report = run_parallel(g, {"mapper": [1, 2, 3, 4]},
                              SchedulerConfig(min_workers=2, max_workers=2),
                              builder.kernels, cells={"acc": cell})
        races = analyze_races(report.trace, report.access_events, flatten(g))
        assert len(races.pairs) == 1
        assert races.pairs[0].classification is RaceClass.DATA
        oracle = hb_conflicting_pairs(report.trace, report.access_events,
                                      flatten(g).hard_pairs())
        assert len(oracle) == 1

    def test_sequential_runs_are_race_free(self):
        # shared shadow cell plus one private color cell per entity; a
        # single-worker run orders everything, so no pair survives
        builder = EntityBuilder(base_registry())
        cells = {"shared": ColoredCell("shared", policy=Policy.SHADOW)}

        def writer(ctx):
            ctx.write("shared", ctx.task.entity)
            ctx.write(f"own_{ctx.task.entity}", 1)

        builder.kernels.register("writer", writer)
        for name in ("a", "b", "c"):
            builder.make_entity(name, "writer")
            cells[f"own_{name}"] = ColoredCell(f"own_{name}",
                                               policy=Policy.COLOR)
        g = build_graph([builder._entities[n] for n in "abc"])
        report = run_sequential(g, None, seed=1, kernels=builder.kernels,
                                cells=cells)
        races = analyze_races(report.trace, report.access_events, flatten(g))
        assert races.empty

    def test_read_read_never_reported(self):
        report, g = _run_conflicting_pair(Policy.SHADOW, kinds=("read", "read"))
        races = analyze_races(report.trace, report.access_events, g)
        assert races.empty

    def test_timestamp_domain_mismatch(self):
        trace = ExecutionTrace(events=[
            TraceEvent(1, -1, "u", 0, EventKind.READY),
            TraceEvent(2, 0, "u", 0, EventKind.START),
            TraceEvent(4, 0, "u", 0, EventKind.FINISH),
        ])
        from genesc.tracing import AccessEvent

        builder = EntityBuilder(base_registry())
        builder.make_entity("u", "noop")
        g = build_graph([builder._entities["u"]])
        stray = AccessEvent(cell="c", entity="u", instance=0, worker=0,
                            kind=AccessKind.WRITE, ts=9)
        with pytest.raises(TimestampDomainMismatchError):
            analyze_races(trace, [stray], g)
        alien = AccessEvent(cell="c", entity="ghost", instance=0, worker=0,
                            kind=AccessKind.WRITE, ts=3)
        with pytest.raises(TimestampDomainMismatchError):
            analyze_races(trace, [alien], g)

    def test_every_pair_has_a_write(self):
        for seed in range(40):
            rng = random.Random(seed)
            scenario = race_scenario(rng, planted=bool(seed % 2))
            report = analyze_races(scenario.trace, scenario.access_events,
                                   flatten(scenario.graph))
            for pair in report.pairs:
                assert (pair.first.kind is AccessKind.WRITE
                        or pair.second.kind is AccessKind.WRITE)


def _run_conflicting_pair(policy: Policy, kinds=("write", "write")):
    """Two entities with no mutual order touch one cell, forced onto
    distinct workers by a barrier so the conflict is genuinely concurrent."""
    barrier = threading.Barrier(2, timeout=5.0)
    builder = EntityBuilder(base_registry())
    cell = ColoredCell("shared", value=0, policy=policy)

    def toucher(kind):
        def kernel(ctx):
            barrier.wait()
            if kind == "write":
                ctx.write("shared", ctx.task.entity)
            else:
                ctx.read("shared")
        return kernel

    builder.kernels.register("touch_left", toucher(kinds[0]))
    builder.kernels.register("touch_right", toucher(kinds[1]))
    builder.make_entity("left", "touch_left")
    builder.make_entity("right", "touch_right")
    g = build_graph([builder._entities["left"], builder._entities["right"]])
    report = run_parallel(g, None,
                          SchedulerConfig(min_workers=2, max_workers=2),
                          builder.kernels, cells={"shared": cell})
    return report, flatten(g)


class TestEnforcementInsideRuns:
    def test_color_violation_panics_kernel(self):
        builder = EntityBuilder(base_registry())
        cell = ColoredCell("owned", policy=Policy.COLOR,
                           color=(OWNER_ENTITY, "somebody_else"))

        def intruder(ctx):
            ctx.write("owned", 1)

        builder.kernels.register("intruder", intruder)
        builder.make_entity("rogue", "intruder")
        g = build_graph([builder._entities["rogue"]])
        with pytest.raises(KernelPanicError) as info:
            run_parallel(g, None, SchedulerConfig(), builder.kernels,
                         cells={"owned": cell})
        assert isinstance(info.value.cause, ColorViolationSignal)
        report = info.value.report
        assert any(e.kind is EventKind.SIGNAL for e in report.trace.events)
