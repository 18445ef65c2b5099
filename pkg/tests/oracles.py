"""Independent reference implementations used to check the package.

Everything here is deliberately brute force and written against the
documented semantics, not against the package internals, so a test that
compares the two is a real dual check.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from genesc.graph import Hypergraph
from genesc.entity import Strength
from genesc.tracing import AccessKind, EventKind, ExecutionTrace


# --- order theory -----------------------------------------------------------

def closure_pairs(vertices: list[str],
                  pairs: set[tuple[str, str]]) -> set[tuple[str, str]]:
    """Transitive closure by Floyd-Warshall."""
    reach = {v: {w for (a, w) in pairs if a == v} for v in vertices}
    for k in vertices:
        for v in vertices:
            if k in reach[v]:
                reach[v] |= reach[k]
    return {(a, b) for a in vertices for b in reach[a]}


def leaf_closure(g: Hypergraph) -> set[tuple[str, str]]:
    """Leaf-level hard ordering of a possibly hierarchical graph.

    A leaf is a vertex with no hierarchy children. An edge between groups
    orders every leaf of every head before every leaf of every tail.
    """
    def leaves(vid: str) -> list[str]:
        kids = g.hierarchy.get(vid)
        if not kids:
            return [vid]
        return [lf for c in kids for lf in leaves(c)]

    leaf_ids = [v for v in g.vertices if not g.hierarchy.get(v)]
    pairs: set[tuple[str, str]] = set()
    for e in g.edges:
        if e.strength is not Strength.HARD:
            continue
        for h in e.heads:
            for t in e.tails:
                for a in leaves(h):
                    for b in leaves(t):
                        if a != b:
                            pairs.add((a, b))
    return closure_pairs(leaf_ids, pairs)


def all_linear_extensions(vertices: list[str],
                          pairs: set[tuple[str, str]]) -> set[tuple[str, ...]]:
    """Every linear extension of the partial order, by backtracking."""
    preds = {v: {a for (a, b) in pairs if b == v} for v in vertices}
    out: set[tuple[str, ...]] = set()

    def extend(prefix: list[str], placed: set[str]) -> None:
        if len(prefix) == len(vertices):
            out.add(tuple(prefix))
            return
        for v in vertices:
            if v not in placed and preds[v] <= placed:
                prefix.append(v)
                placed.add(v)
                extend(prefix, placed)
                placed.discard(v)
                prefix.pop()

    extend([], set())
    return out


def max_antichain_brute(vertices: list[str],
                        pairs: set[tuple[str, str]]) -> int:
    """Largest set of pairwise incomparable vertices, by enumeration."""
    closure = closure_pairs(vertices, pairs)

    def antichain(subset: tuple[str, ...]) -> bool:
        return all((a, b) not in closure and (b, a) not in closure
                   for a, b in combinations(subset, 2))

    best = 0
    for size in range(len(vertices), 0, -1):
        if size <= best:
            break
        for subset in combinations(vertices, size):
            if antichain(subset):
                best = size
                break
    return best


def longest_chain_brute(vertices: list[str],
                        pairs: set[tuple[str, str]]) -> int:
    closure = closure_pairs(vertices, pairs)
    best = 0
    for size in range(len(vertices), 0, -1):
        if size <= best:
            break
        for subset in combinations(vertices, size):
            if all((a, b) in closure or (b, a) in closure
                   for a, b in combinations(subset, 2)):
                best = size
                break
    return best


# --- trace checking -----------------------------------------------------------

def scan_trace_violations(hard_pairs: set[tuple[str, str]],
                          trace: ExecutionTrace) -> set[tuple[str, str]]:
    """Brute-force pairwise event scan for hard-edge violations."""
    events = trace.events
    bad: set[tuple[str, str]] = set()
    for a, b in hard_pairs:
        b_starts = [e.ts for e in events
                    if e.kind is EventKind.START and e.entity == b]
        if not b_starts:
            continue
        first_start = min(b_starts)
        a_instances = {e.instance for e in events
                       if e.kind is EventKind.START and e.entity == a}
        if not a_instances:
            bad.add((a, b))
            continue
        for inst in a_instances:
            fins = [e.ts for e in events
                    if e.kind is EventKind.FINISH and e.entity == a
                    and e.instance == inst]
            if not fins or max(fins) >= first_start:
                bad.add((a, b))
    return bad


def hb_conflicting_pairs(trace: ExecutionTrace, access_events,
                         hard_entity_pairs: set[tuple[str, str]]) -> set:
    """Happens-before race scan on the raw event graph.

    Nodes are individual events; edges chain events per worker, per task,
    and from finish to start along hard edges. A conflicting pair (same
    cell, different tasks, at least one write) is reported when no path
    connects the two events in either direction.
    """
    access_events = [e for e in access_events
                     if e.entity and e.kind is not AccessKind.RECOLOR]
    nodes: list[tuple] = []
    for e in trace.events:
        nodes.append(("t", e.ts, e.worker, e.key, e.kind))
    for e in access_events:
        nodes.append(("a", e.ts, e.worker, e.key, e.kind))
    nodes.sort(key=lambda n: n[1])
    index = {n: i for i, n in enumerate(nodes)}
    adj: dict[int, set[int]] = {i: set() for i in range(len(nodes))}

    by_worker: dict[int, list[tuple]] = {}
    by_task: dict[tuple, list[tuple]] = {}
    for n in nodes:
        if n[2] >= 0:
            by_worker.setdefault(n[2], []).append(n)
        by_task.setdefault(n[3], []).append(n)
    for chain in list(by_worker.values()) + list(by_task.values()):
        for prev, nxt in zip(chain, chain[1:]):
            adj[index[prev]].add(index[nxt])

    finishes: dict[str, list[tuple]] = {}
    starts: dict[str, list[tuple]] = {}
    for n in nodes:
        if n[0] == "t" and n[4] is EventKind.FINISH:
            finishes.setdefault(n[3][0], []).append(n)
        elif n[0] == "t" and n[4] is EventKind.START:
            starts.setdefault(n[3][0], []).append(n)
    for a, b in hard_entity_pairs:
        for fin in finishes.get(a, ()):
            for st in starts.get(b, ()):
                adj[index[fin]].add(index[st])

    def reachable(src: int, dst: int) -> bool:
        seen = {src}
        frontier = [src]
        while frontier:
            cur = frontier.pop()
            if cur == dst:
                return True
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return False

    by_cell: dict[str, list] = {}
    for e in access_events:
        by_cell.setdefault(e.cell, []).append(e)
    races = set()
    for cell_events in by_cell.values():
        for e1, e2 in combinations(cell_events, 2):
            if e1.key == e2.key:
                continue
            if e1.kind is not AccessKind.WRITE and e2.kind is not AccessKind.WRITE:
                continue
            n1 = index[("a", e1.ts, e1.worker, e1.key, e1.kind)]
            n2 = index[("a", e2.ts, e2.worker, e2.key, e2.kind)]
            if not reachable(n1, n2) and not reachable(n2, n1):
                races.add(frozenset({(e1.cell, e1.key, e1.ts),
                                     (e2.cell, e2.key, e2.ts)}))
    return races


# --- physics ----------------------------------------------------------------

def nbody_naive_step(x, v, m, dt, softening=1e-9, gravity=1.0):
    """Plain scalar double loop, the slowest possible reference."""
    n = len(m)
    vnew = [[0.0, 0.0, 0.0] for _ in range(n)]
    xnew = [[0.0, 0.0, 0.0] for _ in range(n)]
    for j in range(n):
        acc = [0.0, 0.0, 0.0]
        for i in range(n):
            if i == j:
                continue
            dx = [x[i][k] - x[j][k] for k in range(3)]
            r2 = dx[0] ** 2 + dx[1] ** 2 + dx[2] ** 2 + softening ** 2
            w = gravity * m[i] / (r2 * (r2 ** 0.5))
            for k in range(3):
                acc[k] += dx[k] * w
        for k in range(3):
            vnew[j][k] = v[j][k] + acc[k] * dt
            xnew[j][k] = x[j][k] + vnew[j][k] * dt
    return xnew, vnew


# --- structural comparison ------------------------------------------------------

def outputs_equal(a, b) -> bool:
    """Exact structural equality, arrays compared bitwise."""
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)
                and a.shape == b.shape and np.array_equal(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return (a.keys() == b.keys()
                and all(outputs_equal(a[k], b[k]) for k in a))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return (type(a) is type(b) and len(a) == len(b)
                and all(outputs_equal(x, y) for x, y in zip(a, b)))
    return type(a) is type(b) and a == b
