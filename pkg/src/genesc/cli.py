"""Command-line harness: run demos or manifest programs, inspect dumps.

Every flag has a GENESC_-prefixed environment variable default, e.g.
GENESC_WORKERS=2:8 or GENESC_MODE=sequential; explicit flags win. Exit
status: 0 success, 1 runtime failure (a core dump is written first when
--dump-on-error names a path), 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .diagnostics import load_core_dump, summarize_dump
from .errors import GenescError, KernelPanicError
from .kernels import standard_kernels
from .manifest import MAGIC, load_graph_segment, load_manifest_program
from .memguard import analyze_races
from .nbody import random_bodies, run_nbody, simulate_direct
from .pipeline import build_browser_pipeline
from .scheduler import Mode, SchedulerConfig, run_parallel, run_sequential
from .tracing import read_trace_tsv, write_trace_tsv


def _env(name: str, fallback=None):
    return os.environ.get(f"GENESC_{name}", fallback)


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genesc",
        description="Stream-entity runtime: run programs, inspect dumps.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a demo or a manifest program")
    what = run.add_mutually_exclusive_group(
        required=_env("DEMO") is None and _env("MANIFEST") is None)
    what.add_argument("--demo", choices=["nbody", "browser"],
                      default=_env("DEMO"))
    what.add_argument("--manifest", metavar="PATH", default=_env("MANIFEST"),
                      help="manifest text or graph segment file")
    run.add_argument("--workers", metavar="MIN[:MAX]",
                     default=_env("WORKERS", "1:4"))
    run.add_argument("--mode", choices=["parallel", "sequential"],
                     default=_env("MODE", "parallel"))
    run.add_argument("--seed", type=int, default=int(_env("SEED", "0")))
    run.add_argument("--trace", metavar="PATH", default=_env("TRACE"),
                     help="write the execution trace as TSV")
    run.add_argument("--plot", action="store_true",
                     default=_env("PLOT") is not None,
                     help="render figures next to the trace output")
    run.add_argument("--dump-on-error", metavar="PATH",
                     default=_env("DUMP_ON_ERROR"))
    run.add_argument("--n", type=int, default=int(_env("N", "64")),
                     help="body count for the nbody demo")
    run.add_argument("--steps", type=int, default=int(_env("STEPS", "10")))
    run.add_argument("--partitions", type=int,
                     default=int(_env("PARTITIONS", "4")))
    run.add_argument("--config", metavar="PATH", default=_env("CONFIG"),
                     help="scheduler config file (key = value lines)")

    report = sub.add_parser("report",
                            help="summarize a core dump or trace file")
    report.add_argument("path", metavar="PATH")
    report.add_argument("--figures", metavar="DIR", default=None,
                        help="directory for rendered figures")
    return parser


def _parse_workers(text: str) -> tuple[int, int]:
    parts = text.split(":")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise UsageError(f"bad --workers value '{text}', expected MIN[:MAX]")
    return lo, hi


class UsageError(Exception):
    pass


def _make_config(args) -> SchedulerConfig:
    if args.config:
        cfg = SchedulerConfig.from_file(args.config)
        cfg.seed = args.seed
        return cfg
    lo, hi = _parse_workers(args.workers)
    try:
        return SchedulerConfig(min_workers=lo, max_workers=hi, seed=args.seed,
                               mode=Mode(args.mode))
    except ValueError as exc:
        raise UsageError(str(exc))


def _emit_outputs(args, report) -> None:
    if args.trace:
        path = write_trace_tsv(report.trace, args.trace)
        print(f"trace written to {path}")
        if args.plot:
            from .plotting import render_trace_figures

            base = path.with_suffix("")
            for fig in render_trace_figures(report.trace, base,
                                            report.worker_timeline):
                print(f"figure written to {fig}")


def _print_report(report, races=None) -> None:
    done = sum(1 for s in report.task_states.values() if s.value == "done")
    print(f"tasks: {done}/{len(report.task_states)} done, "
          f"steals: {report.steals}, "
          f"trace events: {len(report.trace.events)}")
    print(f"hard-constraint violations: {len(report.violations)}")
    for v in report.violations:
        print(f"  VIOLATION {v}")
    if races is not None:
        print(f"races: {len(races.pairs)} conflicting pairs")
    for vid in sorted(report.outputs):
        text = repr(report.outputs[vid])
        if len(text) > 96:
            text = text[:93] + "..."
        print(f"output[{vid}] = {text}")


def _cmd_run_nbody(args) -> int:
    cfg = _make_config(args)
    bodies = random_bodies(args.n, seed=args.seed)
    started = time.perf_counter()
    result = run_nbody(bodies, steps=args.steps, partitions=args.partitions,
                       mode=args.mode, seed=args.seed, cfg=cfg)
    elapsed = time.perf_counter() - started
    oracle = simulate_direct(bodies, args.steps)
    scale = np.abs(oracle.x).max() or 1.0
    max_err = float(np.abs(result.final.x - oracle.x).max() / scale)
    print(f"nbody: N={args.n} steps={args.steps} partitions={args.partitions} "
          f"mode={args.mode} elapsed={elapsed:.3f}s")
    print(f"max relative position error vs direct oracle: {max_err:.3e}")
    print(f"hard-constraint violations: {result.total_violations}")
    last = result.reports[-1]
    _emit_outputs(args, last)
    return 0 if result.total_violations == 0 else 1


def _cmd_run_browser(args) -> int:
    cfg = _make_config(args)
    built = build_browser_pipeline()
    started = time.perf_counter()
    if Mode(args.mode) is Mode.SEQUENTIAL:
        report = run_sequential(built.graph, None, seed=args.seed,
                                kernels=built.kernels, cells=built.cells,
                                dump_on_error=args.dump_on_error)
    else:
        report = run_parallel(built.graph, None, cfg, built.kernels,
                              cells=built.cells,
                              dump_on_error=args.dump_on_error)
    elapsed = time.perf_counter() - started
    from .graph import flatten

    races = analyze_races(report.trace, report.access_events,
                          flatten(built.graph))
    print(f"browser pipeline: {len(built.cells)} sub-units, mode={args.mode}, "
          f"elapsed={elapsed:.3f}s")
    _print_report(report, races)
    _emit_outputs(args, report)
    return 0 if not report.violations and races.empty else 1


def _cmd_run_manifest(args) -> int:
    cfg = _make_config(args)
    data = Path(args.manifest).read_bytes()
    kernels = standard_kernels()
    if data[:4] == MAGIC or data.lstrip()[:1] == b"{":
        graph = load_graph_segment(data)
    else:
        graph = load_manifest_program(data, kernels)
    if Mode(args.mode) is Mode.SEQUENTIAL:
        report = run_sequential(graph, None, seed=args.seed, kernels=kernels,
                                dump_on_error=args.dump_on_error)
    else:
        report = run_parallel(graph, None, cfg, kernels,
                              dump_on_error=args.dump_on_error)
    print(f"program: {args.manifest} ({len(graph.vertices)} entities)")
    _print_report(report)
    _emit_outputs(args, report)
    return 0 if not report.violations else 1


def _cmd_report(args) -> int:
    path = Path(args.path)
    data = path.read_bytes()
    if data[:4] == b"GSCD":
        dump = load_core_dump(path)
        print(summarize_dump(dump))
        trace = dump.trace
    else:
        trace = read_trace_tsv(path)
        kinds: dict[str, int] = {}
        for ev in trace.events:
            kinds[ev.kind.value] = kinds.get(ev.kind.value, 0) + 1
        summary = ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))
        print(f"trace: {len(trace.events)} events ({summary})")
    if args.figures:
        from .plotting import render_trace_figures

        base = Path(args.figures) / path.stem
        for fig in render_trace_figures(trace, base):
            print(f"figure written to {fig}")
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    try:
        if args.command == "report":
            return _cmd_report(args)
        if args.demo == "nbody":
            return _cmd_run_nbody(args)
        if args.demo == "browser":
            return _cmd_run_browser(args)
        return _cmd_run_manifest(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except KernelPanicError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        if exc.dump_path:
            print(f"core dump written to {exc.dump_path}", file=sys.stderr)
        return 1
    except (GenescError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
