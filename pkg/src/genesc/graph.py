"""Hypergraph of inter-entity relations: build, validate, flatten, analyze.

Vertices are stream entities; edges are oriented head/tail sets. Precedence
is always evaluated on the induced pairwise relation (every head before
every tail). Graphs are immutable after build or flatten; all analysis here
is read-only.
"""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .entity import Direction, StreamEntity, Strength
from .errors import (
    CyclicHardConstraintsError,
    IdCollisionError,
    UnresolvedRelationTargetError,
)

log = logging.getLogger(__name__)


class EdgeKind(str, Enum):
    DATAFLOW = "dataflow"
    CONTROLFLOW = "controlflow"


@dataclass(frozen=True)
class HyperEdge:
    heads: frozenset[str]
    tails: frozenset[str]
    kind: EdgeKind = EdgeKind.CONTROLFLOW
    strength: Strength = Strength.HARD

    def __post_init__(self) -> None:
        if not self.heads and not self.tails:
            raise ValueError("hyperedge must have at least one member")

    @property
    def members(self) -> frozenset[str]:
        return self.heads | self.tails

    def pairs(self) -> Iterator[tuple[str, str]]:
        for h in self.heads:
            for t in self.tails:
                if h != t:
                    yield (h, t)


def edge(head: str, tail: str, kind: EdgeKind = EdgeKind.CONTROLFLOW,
         strength: Strength = Strength.HARD) -> HyperEdge:
    return HyperEdge(frozenset({head}), frozenset({tail}), kind, strength)


@dataclass
class Hypergraph:
    vertices: dict[str, StreamEntity] = field(default_factory=dict)
    edges: list[HyperEdge] = field(default_factory=list)
    hierarchy: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def is_flat(self) -> bool:
        return not self.hierarchy

    def pairs(self, strength: Strength) -> set[tuple[str, str]]:
        out: set[tuple[str, str]] = set()
        for e in self.edges:
            if e.strength is strength:
                out.update(e.pairs())
        return out

    def hard_pairs(self) -> set[tuple[str, str]]:
        return self.pairs(Strength.HARD)

    def soft_pairs(self) -> set[tuple[str, str]]:
        return self.pairs(Strength.SOFT)

    def successors(self, strength: Strength = Strength.HARD) -> dict[str, set[str]]:
        succ: dict[str, set[str]] = {v: set() for v in self.vertices}
        for a, b in self.pairs(strength):
            succ[a].add(b)
        return succ

    def predecessors(self, strength: Strength = Strength.HARD) -> dict[str, set[str]]:
        pred: dict[str, set[str]] = {v: set() for v in self.vertices}
        for a, b in self.pairs(strength):
            pred[b].add(a)
        return pred

    def sinks(self) -> list[str]:
        succ = self.successors(Strength.HARD)
        return [v for v in self.vertices if not succ[v]]

    def sources(self) -> list[str]:
        pred = self.predecessors(Strength.HARD)
        return [v for v in self.vertices if not pred[v]]


@dataclass
class ValidationReport:
    cycles: list[list[str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.cycles


@dataclass
class AnalysisReport:
    critical_path: int
    width: int
    components: int
    exact: bool
    multi_producer_dataflow: list[HyperEdge] = field(default_factory=list)


# Exact antichain computation switches to a greedy estimate above this size.
EXACT_ANALYZE_LIMIT = 20


def build_graph(root: StreamEntity | Sequence[StreamEntity]) -> Hypergraph:
    """Materialize one or more entity trees into a hypergraph.

    Every relation constraint becomes exactly one oriented controlflow edge;
    'after' constraints are normalized to a 'before' edge on the opposite
    endpoint. The hierarchy map records composite membership until flatten.
    """
    roots = [root] if isinstance(root, StreamEntity) else list(root)
    vertices: dict[str, StreamEntity] = {}
    for r in roots:
        for node in r.walk():
            if node.id in vertices:
                raise IdCollisionError(
                    f"entity id '{node.id}' appears in more than one tree")
            vertices[node.id] = node

    edges: list[HyperEdge] = []
    hierarchy: dict[str, tuple[str, ...]] = {}
    for node in vertices.values():
        if node.children:
            hierarchy[node.id] = tuple(c.id for c in node.children)
        for rc in node.relations:
            if rc.target not in vertices:
                raise UnresolvedRelationTargetError(
                    f"entity '{node.id}' relates to unknown entity '{rc.target}'")
            if rc.direction is Direction.BEFORE:
                edges.append(edge(node.id, rc.target, strength=rc.strength))
            else:
                edges.append(edge(rc.target, node.id, strength=rc.strength))
    return Hypergraph(vertices=vertices, edges=edges, hierarchy=hierarchy)


def _strongly_connected(vertices: Iterable[str],
                        pairs: set[tuple[str, str]]) -> list[list[str]]:
    """Iterative Tarjan; returns components with more than one vertex."""
    adj: dict[str, list[str]] = {v: [] for v in vertices}
    for a, b in pairs:
        if a in adj and b in adj:
            adj[a].append(b)

    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    sccs: list[list[str]] = []
    counter = 0

    for start in adj:
        if start in index:
            continue
        work = [(start, iter(adj[start]))]
        index[start] = low[start] = counter
        counter += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(adj[w])))
                    advanced = True
                    break
                elif w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                if len(comp) > 1:
                    sccs.append(sorted(comp))
    return sccs


def validate_hard_acyclic(g: Hypergraph) -> ValidationReport:
    """Report every cycle in the hard-edge subgraph; empty means schedulable."""
    return ValidationReport(cycles=_strongly_connected(g.vertices, g.hard_pairs()))


def flatten(g: Hypergraph) -> Hypergraph:
    """Replace composite vertices by their children, innermost first.

    An edge endpoint naming a composite is rewritten to that composite's
    internal hard sinks (head position) or sources (tail position), so the
    leaf-level transitive closure is preserved. Childless composites stay as
    no-op vertices, which keeps any ordering routed through them intact and
    makes flatten idempotent.
    """
    if g.is_flat:
        return Hypergraph(vertices=dict(g.vertices), edges=list(g.edges),
                          hierarchy={})

    depth: dict[str, int] = {}

    def assign_depth(vid: str, d: int) -> None:
        depth[vid] = max(d, depth.get(vid, 0))
        for child in g.hierarchy.get(vid, ()):
            assign_depth(child, d + 1)

    child_ids = {c for kids in g.hierarchy.values() for c in kids}
    for vid in g.vertices:
        if vid not in child_ids:
            assign_depth(vid, 0)

    leaves_of: dict[str, list[str]] = {}

    def leaves(vid: str) -> list[str]:
        if vid in leaves_of:
            return leaves_of[vid]
        kids = g.hierarchy.get(vid)
        if not kids:
            out = [vid]
        else:
            out = [lf for c in kids for lf in leaves(c)]
        leaves_of[vid] = out
        return out

    for vid in g.vertices:
        leaves(vid)

    edges = [(e.heads, e.tails, e.kind, e.strength) for e in g.edges]
    composites = sorted((v for v in g.vertices if v in g.hierarchy),
                        key=lambda v: -depth.get(v, 0))
    for comp in composites:
        lv = set(leaves_of[comp])
        hard_internal = set()
        for heads, tails, kind, strength in edges:
            if strength is Strength.HARD:
                for h in heads:
                    for t in tails:
                        if h != t and h in lv and t in lv:
                            hard_internal.add((h, t))
        sinks = [x for x in leaves_of[comp]
                 if not any(s == x for s, _ in hard_internal)]
        sources = [x for x in leaves_of[comp]
                   if not any(t == x for _, t in hard_internal)]
        sinks = sinks or leaves_of[comp]
        sources = sources or leaves_of[comp]
        rewritten = []
        for heads, tails, kind, strength in edges:
            if comp in heads:
                heads = (heads - {comp}) | frozenset(sinks)
            if comp in tails:
                tails = (tails - {comp}) | frozenset(sources)
            rewritten.append((frozenset(heads), frozenset(tails), kind, strength))
        edges = rewritten

    flat_vertices = {vid: ent for vid, ent in g.vertices.items()
                     if vid not in g.hierarchy}
    flat_edges = [HyperEdge(h, t, kind, strength)
                  for h, t, kind, strength in edges if h and t]
    return Hypergraph(vertices=flat_vertices, edges=flat_edges, hierarchy={})


def scheduling_soft_pairs(g: Hypergraph) -> set[tuple[str, str]]:
    """Soft precedence pairs with advisory cycles broken.

    Soft cycles are legal; each one is resolved by dropping the
    lexicographically smallest (source, target) pair inside the cycle, with
    a warning, until the soft relation is acyclic.
    """
    soft = set(g.soft_pairs())
    while True:
        sccs = _strongly_connected(g.vertices, soft)
        if not sccs:
            return soft
        for comp in sccs:
            comp_set = set(comp)
            inside = sorted((a, b) for a, b in soft
                            if a in comp_set and b in comp_set)
            if inside:
                dropped = inside[0]
                soft.discard(dropped)
                log.warning("soft-constraint cycle through %s; dropping soft "
                            "edge %s -> %s", comp, dropped[0], dropped[1])


def topological_order(g: Hypergraph, seed: int = 0) -> list[str]:
    """A linear extension of the hard partial order, deterministic per seed.

    Soft constraints act as tie-breakers: among ready vertices, those whose
    soft predecessors are already emitted are preferred. Remaining ties are
    broken pseudorandomly from the seed.
    """
    hard = g.hard_pairs()
    soft = scheduling_soft_pairs(g)
    preds: dict[str, set[str]] = {v: set() for v in g.vertices}
    succs: dict[str, set[str]] = {v: set() for v in g.vertices}
    for a, b in hard:
        preds[b].add(a)
        succs[a].add(b)
    soft_preds: dict[str, set[str]] = {v: set() for v in g.vertices}
    for a, b in soft:
        soft_preds[b].add(a)

    rng = random.Random(seed)
    ready = sorted(v for v in g.vertices if not preds[v])
    emitted: list[str] = []
    done: set[str] = set()
    remaining = {v: len(preds[v]) for v in g.vertices}
    while ready:
        preferred = [v for v in ready if soft_preds[v] <= done]
        pool = preferred or ready
        v = pool[rng.randrange(len(pool))]
        ready.remove(v)
        emitted.append(v)
        done.add(v)
        for s in sorted(succs[v]):
            remaining[s] -= 1
            if remaining[s] == 0:
                ready.append(s)
    if len(emitted) != len(g.vertices):
        raise CyclicHardConstraintsError(validate_hard_acyclic(g).cycles)
    return emitted


def _transitive_closure(vertices: list[str],
                        pairs: set[tuple[str, str]]) -> set[tuple[str, str]]:
    reach: dict[str, set[str]] = {v: set() for v in vertices}
    for a, b in pairs:
        reach[a].add(b)
    for k in vertices:
        rk = reach[k]
        for v in vertices:
            if k in reach[v]:
                reach[v] |= rk
    return {(a, b) for a, bs in reach.items() for b in bs}


def _max_antichain_exact(vertices: list[str],
                         pairs: set[tuple[str, str]]) -> int:
    """Maximum antichain size via minimum chain cover on the closure."""
    closure = _transitive_closure(vertices, pairs)
    comparable: dict[str, list[str]] = {v: [] for v in vertices}
    for a, b in closure:
        comparable[a].append(b)

    match_right: dict[str, str] = {}

    def augment(u: str, seen: set[str]) -> bool:
        for v in comparable[u]:
            if v in seen:
                continue
            seen.add(v)
            if v not in match_right or augment(match_right[v], seen):
                match_right[v] = u
                return True
        return False

    matched = 0
    for u in vertices:
        if augment(u, set()):
            matched += 1
    return len(vertices) - matched


def _level_width(vertices: list[str], pairs: set[tuple[str, str]],
                 order: list[str]) -> int:
    level: dict[str, int] = {v: 0 for v in vertices}
    preds: dict[str, list[str]] = {v: [] for v in vertices}
    for a, b in pairs:
        preds[b].append(a)
    for v in order:
        if preds[v]:
            level[v] = 1 + max(level[p] for p in preds[v])
    widths = Counter(level.values())
    return max(widths.values()) if widths else 0


def analyze(g: Hypergraph) -> AnalysisReport:
    """Critical path length, maximum antichain width, and component count.

    Width is exact up to EXACT_ANALYZE_LIMIT vertices and a level-based
    greedy estimate above that, flagged via ``exact``. Dataflow hyperedges
    with more than one producer are surfaced for inspection.
    """
    vertices = list(g.vertices)
    hard = g.hard_pairs()
    order = topological_order(g, seed=0)

    if not vertices:
        return AnalysisReport(critical_path=0, width=0, components=0, exact=True)

    chain: dict[str, int] = {v: 1 for v in vertices}
    preds: dict[str, list[str]] = {v: [] for v in vertices}
    for a, b in hard:
        preds[b].append(a)
    for v in order:
        if preds[v]:
            chain[v] = 1 + max(chain[p] for p in preds[v])
    critical = max(chain.values())

    if len(vertices) <= EXACT_ANALYZE_LIMIT:
        width = _max_antichain_exact(vertices, hard)
        exact = True
    else:
        width = _level_width(vertices, hard, order)
        exact = False

    parent: dict[str, str] = {v: v for v in vertices}

    def find(v: str) -> str:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for e in g.edges:
        members = sorted(e.members)
        for other in members[1:]:
            ra, rb = find(members[0]), find(other)
            if ra != rb:
                parent[rb] = ra
    components = len({find(v) for v in vertices})

    multi = [e for e in g.edges
             if e.kind is EdgeKind.DATAFLOW and len(e.heads) > 1]
    return AnalysisReport(critical_path=critical, width=width,
                          components=components, exact=exact,
                          multi_producer_dataflow=multi)


def structurally_equal(g1: Hypergraph, g2: Hypergraph) -> bool:
    """Same vertices (field for field), same edge multiset, same hierarchy."""
    if g1.vertices != g2.vertices:
        return False
    if Counter(g1.edges) != Counter(g2.edges):
        return False
    return g1.hierarchy == g2.hierarchy
