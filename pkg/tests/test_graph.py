"""Hypergraph build, validation, flattening, ordering, analysis."""

from __future__ import annotations

import random

import pytest

from genesc.entity import (
    Direction,
    EntityBuilder,
    RelationConstraint,
    Strength,
)
from genesc.errors import (
    CyclicHardConstraintsError,
    UnresolvedRelationTargetError,
)
from genesc.graph import (
    EdgeKind,
    HyperEdge,
    Hypergraph,
    analyze,
    build_graph,
    flatten,
    structurally_equal,
    topological_order,
    validate_hard_acyclic,
)

from generators import base_registry, inject_cycle, rand_dag, rand_hierarchy
from oracles import (
    all_linear_extensions,
    closure_pairs,
    leaf_closure,
    longest_chain_brute,
    max_antichain_brute,
)


def chain_graph(names):
    builder = EntityBuilder(base_registry())
    entities = []
    for i, name in enumerate(names):
        rels = ([RelationConstraint(names[i - 1], Direction.AFTER,
                                    Strength.HARD)] if i else [])
        entities.append(builder.make_entity(name, "noop", relations=rels))
    return build_graph(entities)


FIVE_STAGES = ["space_subdivision", "tree_construction", "mass_center_calc",
               "approximate_force", "position_update"]


class TestBuildGraph:
    def test_five_stage_chain(self):
        g = chain_graph(FIVE_STAGES)
        assert len(g.vertices) == 5
        assert len(g.edges) == 4
        assert all(e.strength is Strength.HARD for e in g.edges)
        assert all(e.kind is EdgeKind.CONTROLFLOW for e in g.edges)

    def test_single_leaf(self):
        builder = EntityBuilder(base_registry())
        g = build_graph(builder.make_entity("only", "noop"))
        assert set(g.vertices) == {"only"}
        assert g.edges == []

    def test_independent_vertex_components(self):
        builder = EntityBuilder(base_registry())
        e1 = builder.make_entity("e1", "noop")
        e2 = builder.make_entity(
            "e2", "noop",
            relations=[RelationConstraint("e1", Direction.AFTER, Strength.HARD)])
        e3 = builder.make_entity(
            "e3", "noop",
            relations=[RelationConstraint("e2", Direction.AFTER, Strength.HARD)])
        e4 = builder.make_entity("e4", "noop")
        root = builder.add_parallel(builder.add_parallel(e1, e2),
                                    builder.add_parallel(e3, e4))
        flat = flatten(build_graph(root))
        report = analyze(flat)
        assert report.components == 2

    def test_unresolved_target(self):
        builder = EntityBuilder(base_registry())
        bad = builder.make_entity(
            "bad", "noop",
            relations=[RelationConstraint("ghost", Direction.BEFORE,
                                          Strength.HARD)])
        with pytest.raises(UnresolvedRelationTargetError):
            build_graph(bad)

    def test_relation_edge_bijection(self):
        for seed in range(30):
            dag = rand_dag(random.Random(seed), n=8)
            n_constraints = sum(len(v.relations)
                                for v in dag.graph.vertices.values())
            assert n_constraints == len(dag.graph.edges)
            normalized = set()
            for v in dag.graph.vertices.values():
                for rc in v.relations:
                    pair = ((v.id, rc.target)
                            if rc.direction is Direction.BEFORE
                            else (rc.target, v.id))
                    normalized.add((pair, rc.strength))
            edge_pairs = {(next(iter(e.pairs())), e.strength)
                          for e in dag.graph.edges}
            assert normalized == edge_pairs


class TestValidate:
    def test_two_cycle(self):
        builder = EntityBuilder(base_registry())
        builder.make_entity(
            "a", "noop",
            relations=[RelationConstraint("b", Direction.BEFORE, Strength.HARD)])
        builder.make_entity(
            "b", "noop",
            relations=[RelationConstraint("a", Direction.BEFORE, Strength.HARD)])
        g = build_graph([builder._entities["a"], builder._entities["b"]])
        report = validate_hard_acyclic(g)
        assert report.cycles == [["a", "b"]]

    def test_chain_is_acyclic(self):
        assert validate_hard_acyclic(chain_graph(FIVE_STAGES)).ok

    def test_injected_cycles_always_detected(self):
        found = 0
        for seed in range(1000):
            rng = random.Random(seed)
            dag = rand_dag(rng, n=rng.randint(3, 10), p_edge=0.5)
            if not dag.hard:
                continue
            cyclic, members = inject_cycle(rng, dag)
            report = validate_hard_acyclic(cyclic)
            assert not report.ok
            assert any(members <= set(c) for c in report.cycles)
            found += 1
        assert found > 900

    def test_soft_edges_never_affect_validity(self):
        for seed in range(40):
            dag = rand_dag(random.Random(seed), n=8, p_soft=0.5)
            g = dag.graph
            hard_only = Hypergraph(
                vertices=dict(g.vertices),
                edges=[e for e in g.edges if e.strength is Strength.HARD],
                hierarchy=dict(g.hierarchy))
            assert (validate_hard_acyclic(g).cycles
                    == validate_hard_acyclic(hard_only).cycles)


class TestFlatten:
    def test_leaf_only_fixpoint(self):
        g = chain_graph(FIVE_STAGES)
        assert structurally_equal(flatten(g), g)

    def test_idempotent_on_random_hierarchies(self):
        for seed in range(60):
            root, _ = rand_hierarchy(random.Random(seed), max_leaves=9)
            g = build_graph(root)
            once = flatten(g)
            twice = flatten(once)
            assert structurally_equal(once, twice)

    def test_preserves_leaf_closure(self):
        for seed in range(60):
            root, _ = rand_hierarchy(random.Random(seed), max_leaves=9)
            g = build_graph(root)
            flat = flatten(g)
            want = leaf_closure(g)
            got = closure_pairs(sorted(flat.vertices), flat.hard_pairs())
            assert got == want, f"seed {seed}"

    def test_empty_composite_keeps_ordering(self):
        builder = EntityBuilder(base_registry())
        hub = builder.compose("hub", [])
        builder.make_entity(
            "x", "noop",
            relations=[RelationConstraint("hub", Direction.BEFORE,
                                          Strength.HARD)])
        builder.make_entity(
            "y", "noop",
            relations=[RelationConstraint("hub", Direction.AFTER,
                                          Strength.HARD)])
        g = build_graph([builder._entities["x"], hub, builder._entities["y"]])
        flat = flatten(g)
        closure = closure_pairs(sorted(flat.vertices), flat.hard_pairs())
        assert ("x", "y") in closure


class TestTopologicalOrder:
    def test_chain_unique(self):
        g = chain_graph(["a", "b", "c"])
        assert topological_order(g, seed=9) == ["a", "b", "c"]

    def test_diamond_membership(self):
        builder = EntityBuilder(base_registry())
        builder.make_entity("a", "noop")
        builder.make_entity(
            "b", "noop",
            relations=[RelationConstraint("a", Direction.AFTER, Strength.HARD)])
        builder.make_entity(
            "c", "noop",
            relations=[RelationConstraint("a", Direction.AFTER, Strength.HARD)])
        builder.make_entity(
            "d", "noop",
            relations=[RelationConstraint("b", Direction.AFTER, Strength.HARD),
                       RelationConstraint("c", Direction.AFTER, Strength.HARD)])
        g = build_graph([builder._entities[v] for v in "abcd"])
        valid = all_linear_extensions(sorted(g.vertices), g.hard_pairs())
        assert valid == {("a", "b", "c", "d"), ("a", "c", "b", "d")}
        seen = set()
        for seed in range(20):
            order = tuple(topological_order(g, seed))
            assert order in valid
            seen.add(order)
        assert len(seen) == 2  # the tie-break actually varies with the seed

    def test_deterministic_per_seed(self):
        dag = rand_dag(random.Random(5), n=10)
        first = topological_order(dag.graph, seed=42)
        for _ in range(100):
            assert topological_order(dag.graph, seed=42) == first

    def test_random_orders_are_linear_extensions(self):
        for seed in range(40):
            rng = random.Random(seed)
            dag = rand_dag(rng, n=rng.randint(2, 8))
            valid = all_linear_extensions(sorted(dag.graph.vertices),
                                          dag.graph.hard_pairs())
            order = tuple(topological_order(dag.graph, seed))
            assert order in valid

    def test_cycle_raises(self):
        rng = random.Random(11)
        dag = rand_dag(rng, n=6, p_edge=0.7)
        cyclic, _ = inject_cycle(rng, dag)
        with pytest.raises(CyclicHardConstraintsError):
            topological_order(cyclic, seed=0)

    def test_soft_tiebreak_prefers_soft_predecessor_first(self):
        builder = EntityBuilder(base_registry())
        builder.make_entity(
            "a", "noop",
            relations=[RelationConstraint("b", Direction.BEFORE,
                                          Strength.SOFT)])
        builder.make_entity("b", "noop")
        # soft a -> b: both are ready from the start, a should go first
        g = build_graph([builder._entities["a"], builder._entities["b"]])
        for seed in range(15):
            assert topological_order(g, seed) == ["a", "b"]

    def test_soft_cycle_broken_not_fatal(self):
        builder = EntityBuilder(base_registry())
        builder.make_entity(
            "a", "noop",
            relations=[RelationConstraint("b", Direction.BEFORE,
                                          Strength.SOFT)])
        builder.make_entity(
            "b", "noop",
            relations=[RelationConstraint("a", Direction.BEFORE,
                                          Strength.SOFT)])
        g = build_graph([builder._entities["a"], builder._entities["b"]])
        order = topological_order(g, seed=0)
        assert sorted(order) == ["a", "b"]


class TestAnalyze:
    def test_chain_metrics(self):
        report = analyze(chain_graph(FIVE_STAGES))
        assert report.critical_path == 5
        assert report.width == 1
        assert report.components == 1
        assert report.exact

    def test_isolated_vertices(self):
        builder = EntityBuilder(base_registry())
        ents = [builder.make_entity(f"i{k}", "noop") for k in range(7)]
        report = analyze(build_graph(ents))
        assert report.width == 7
        assert report.critical_path == 1
        assert report.components == 7

    def test_matches_bruteforce_on_random_dags(self):
        for seed in range(40):
            rng = random.Random(seed)
            dag = rand_dag(rng, n=rng.randint(2, 10))
            report = analyze(dag.graph)
            names = sorted(dag.graph.vertices)
            assert report.exact
            assert report.width == max_antichain_brute(names, dag.hard)
            assert report.critical_path == longest_chain_brute(names, dag.hard)

    def test_greedy_above_limit_is_flagged(self):
        builder = EntityBuilder(base_registry())
        ents = [builder.make_entity(f"g{k}", "noop") for k in range(25)]
        report = analyze(build_graph(ents))
        assert not report.exact
        assert report.width == 25

    def test_multi_producer_dataflow_flagged(self):
        builder = EntityBuilder(base_registry())
        ents = {n: builder.make_entity(n, "noop") for n in "abc"}
        g = build_graph(list(ents.values()))
        g.edges.append(HyperEdge(frozenset({"a", "b"}), frozenset({"c"}),
                                 EdgeKind.DATAFLOW, Strength.HARD))
        report = analyze(g)
        assert len(report.multi_producer_dataflow) == 1
