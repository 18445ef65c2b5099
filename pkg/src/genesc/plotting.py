"""Figure rendering for traces: a per-worker task timeline and the worker
count over logical time. Figures are written next to the delimited trace
output; the x axis is the logical timestamp, which is deterministic."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .tracing import EventKind, ExecutionTrace  # noqa: E402


def render_trace_figures(trace: ExecutionTrace,
                         out_base: str | Path,
                         worker_timeline: list[tuple[int, int]] | None = None
                         ) -> list[Path]:
    """Write ``<base>_timeline.png`` and ``<base>_workers.png``."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    paths = [
        _render_timeline(trace, out_base.with_name(out_base.name + "_timeline.png")),
        _render_workers(trace, worker_timeline,
                        out_base.with_name(out_base.name + "_workers.png")),
    ]
    return paths


def _render_timeline(trace: ExecutionTrace, path: Path) -> Path:
    spans: dict[tuple[str, int], list] = {}
    for ev in trace.events:
        if ev.kind is EventKind.START:
            spans.setdefault(ev.key, [None, None, ev.worker])[0] = ev.ts
            spans[ev.key][2] = ev.worker
        elif ev.kind is EventKind.FINISH and ev.key in spans:
            spans[ev.key][1] = ev.ts

    fig, ax = plt.subplots(figsize=(9, 4))
    workers = sorted({s[2] for s in spans.values()})
    row = {w: i for i, w in enumerate(workers)}
    cmap = plt.get_cmap("tab20")
    entity_color: dict[str, int] = {}
    for (entity, instance), (start, finish, worker) in sorted(spans.items()):
        if start is None:
            continue
        finish = finish if finish is not None else start + 1
        color_idx = entity_color.setdefault(entity, len(entity_color))
        ax.barh(row[worker], finish - start, left=start, height=0.7,
                color=cmap(color_idx % 20), edgecolor="black", linewidth=0.3)
    ax.set_yticks(range(len(workers)))
    ax.set_yticklabels([f"worker {w}" for w in workers])
    ax.set_xlabel("logical time")
    ax.set_title("task timeline")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _render_workers(trace: ExecutionTrace,
                    worker_timeline: list[tuple[int, int]] | None,
                    path: Path) -> Path:
    points = list(worker_timeline or [])
    if not points:
        # reconstruct from resize events if no timeline was provided
        count = 1
        points = [(0, 1)]
        for ev in trace.events:
            if ev.kind is EventKind.RESIZE and "workers=" in ev.note:
                count = int(ev.note.split("workers=")[1].split()[0])
                points.append((ev.ts, count))
    end_ts = max((ev.ts for ev in trace.events), default=points[-1][0])
    xs = [p[0] for p in points] + [end_ts]
    ys = [p[1] for p in points] + [points[-1][1]]

    fig, ax = plt.subplots(figsize=(9, 2.5))
    ax.step(xs, ys, where="post")
    ax.set_ylim(0, max(ys) + 1)
    ax.set_xlabel("logical time")
    ax.set_ylabel("workers")
    ax.set_title("worker pool size")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
