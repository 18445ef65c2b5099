"""Stream entities and the algebra that builds programs out of them.

An entity couples a kernel function with typed ports and precedence
relations to other entities. Entities are immutable once registered;
composites own private, possibly augmented copies of their children, so the
algebra never mutates an entity another expression can still see.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Iterable, Iterator

from .errors import (
    ArityMismatchError,
    DanglingWireError,
    DuplicateIdError,
    IdCollisionError,
    PortTypeMismatchError,
    SelfRelationError,
    UnknownDatatypeError,
    UnknownKernelError,
    ValidationError,
)

#: Closed registry of port datatype tags.
DATATYPES = frozenset({"scalar-array", "record", "byte-stream", "unit"})

#: Kernel name used by composite placeholder entities. Names starting with
#: "@" are reserved and run as no-ops if they survive flattening.
COMPOSITE_KERNEL = "@composite"

AUTO_PARTITIONS = "auto"


class Direction(str, Enum):
    BEFORE = "before"
    AFTER = "after"


class Strength(str, Enum):
    HARD = "hard"
    SOFT = "soft"


class Cardinality(str, Enum):
    FIXED = "fixed"
    STREAM = "stream"


@dataclass(frozen=True)
class KernelRef:
    """Reference to a registered kernel: name plus (inputs, outputs) arity."""

    name: str
    arity: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("kernel name must be non-empty")
        if self.arity[0] < 0 or self.arity[1] < 0:
            raise ValidationError(f"kernel '{self.name}': arity counts must be >= 0")


@dataclass(frozen=True)
class PortSpec:
    name: str
    datatype: str = "record"
    cardinality: Cardinality = Cardinality.FIXED

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("port name must be non-empty")
        if self.datatype not in DATATYPES:
            raise UnknownDatatypeError(
                f"port '{self.name}': datatype '{self.datatype}' is not one of "
                f"{sorted(DATATYPES)}")
        if not isinstance(self.cardinality, Cardinality):
            object.__setattr__(self, "cardinality", Cardinality(self.cardinality))


@dataclass(frozen=True)
class RelationConstraint:
    """Precedence constraint owned by one entity, pointing at another by id."""

    target: str
    direction: Direction = Direction.BEFORE
    strength: Strength = Strength.HARD

    def __post_init__(self) -> None:
        if not isinstance(self.direction, Direction):
            object.__setattr__(self, "direction", Direction(self.direction))
        if not isinstance(self.strength, Strength):
            object.__setattr__(self, "strength", Strength(self.strength))


@dataclass(frozen=True)
class StreamEntity:
    id: str
    kernel: KernelRef
    inputs: tuple[PortSpec, ...] = ()
    outputs: tuple[PortSpec, ...] = ()
    relations: tuple[RelationConstraint, ...] = ()
    children: tuple["StreamEntity", ...] = ()
    partitions: int | str | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator["StreamEntity"]:
        """Yield this entity and every descendant, preorder."""
        yield self
        for child in self.children:
            yield from child.walk()

    def leaves(self) -> Iterator["StreamEntity"]:
        for node in self.walk():
            if node.is_leaf:
                yield node

    def ids(self) -> set[str]:
        return {node.id for node in self.walk()}


@dataclass(frozen=True)
class Wire:
    """One wiring entry: a parent boundary port bound to a child port."""

    parent_port: str
    child: str
    child_port: str


@dataclass(frozen=True)
class Wiring:
    inputs: tuple[Wire, ...] = ()
    outputs: tuple[Wire, ...] = ()

    @classmethod
    def empty(cls) -> "Wiring":
        return cls()


class KernelRegistry:
    """Name to executable mapping for kernel functions.

    Kernels are callables taking a single KernelContext argument. The
    registry only binds names; entities carry KernelRef values.
    """

    def __init__(self) -> None:
        self._kernels: dict[str, tuple[Callable[..., Any], tuple[int, int]]] = {}

    def register(self, name: str, fn: Callable[..., Any],
                 inputs: int = 0, outputs: int = 0) -> KernelRef:
        if not name or name.startswith("@"):
            raise ValidationError(f"illegal kernel name: '{name}'")
        if name in self._kernels:
            raise DuplicateIdError(f"kernel '{name}' already registered")
        self._kernels[name] = (fn, (inputs, outputs))
        return KernelRef(name, (inputs, outputs))

    def ref(self, name: str) -> KernelRef:
        if name not in self._kernels:
            raise UnknownKernelError(f"kernel '{name}' is not registered")
        return KernelRef(name, self._kernels[name][1])

    def resolve(self, name: str) -> Callable[..., Any]:
        if name not in self._kernels:
            raise UnknownKernelError(f"kernel '{name}' is not registered")
        return self._kernels[name][0]

    def __contains__(self, name: str) -> bool:
        return name in self._kernels

    def names(self) -> list[str]:
        return sorted(self._kernels)


def _leaf_precedence(root: StreamEntity) -> tuple[list[StreamEntity],
                                                  set[tuple[str, str]]]:
    """Project all constraints inside root's tree down to leaf level.

    Returns root's leaves (childless descendants) and the hard precedence
    pairs among them. Composite endpoints are expanded innermost first:
    a composite in source position stands for its internal sinks, in target
    position for its internal sources.
    """
    nodes: dict[str, StreamEntity] = {}
    depth: dict[str, int] = {}

    def visit(node: StreamEntity, d: int) -> None:
        nodes[node.id] = node
        depth[node.id] = d
        for child in node.children:
            visit(child, d + 1)

    visit(root, 0)

    pairs: list[tuple[str, str, Strength]] = []
    for node in nodes.values():
        for rc in node.relations:
            if rc.target not in nodes:
                continue  # external target; resolved at graph build
            if rc.direction is Direction.BEFORE:
                pairs.append((node.id, rc.target, rc.strength))
            else:
                pairs.append((rc.target, node.id, rc.strength))

    leaves_of: dict[str, list[str]] = {}
    for node in nodes.values():
        leaves_of[node.id] = [lf.id for lf in node.leaves()]

    composites = sorted((n for n in nodes.values() if n.children),
                        key=lambda n: -depth[n.id])
    for comp in composites:
        lv = set(leaves_of[comp.id])
        hard = {(s, t) for (s, t, st) in pairs
                if st is Strength.HARD and s in lv and t in lv}
        sinks = [x for x in leaves_of[comp.id] if not any(s == x for s, _ in hard)]
        sources = [x for x in leaves_of[comp.id] if not any(t == x for _, t in hard)]
        # A cyclic interior has no sinks; fall back to all leaves and let
        # graph validation report the cycle.
        sinks = sinks or leaves_of[comp.id]
        sources = sources or leaves_of[comp.id]
        expanded: list[tuple[str, str, Strength]] = []
        for s, t, st in pairs:
            src = sinks if s == comp.id else [s]
            dst = sources if t == comp.id else [t]
            for a in src:
                for b in dst:
                    if a != b:
                        expanded.append((a, b, st))
        pairs = expanded

    hard_pairs = {(s, t) for (s, t, st) in pairs if st is Strength.HARD}
    return list(root.leaves()), hard_pairs


def entity_sinks(root: StreamEntity) -> list[StreamEntity]:
    """Leaves of root with no outgoing hard constraint inside root's tree."""
    leaves, hard = _leaf_precedence(root)
    out = [lf for lf in leaves if not any(s == lf.id for s, _ in hard)]
    return out or leaves


def entity_sources(root: StreamEntity) -> list[StreamEntity]:
    """Leaves of root with no incoming hard constraint inside root's tree."""
    leaves, hard = _leaf_precedence(root)
    out = [lf for lf in leaves if not any(t == lf.id for _, t in hard)]
    return out or leaves


def _prefixed(ports: tuple[PortSpec, ...], owner: str) -> tuple[PortSpec, ...]:
    return tuple(replace(p, name=f"{owner}.{p.name}") for p in ports)


class EntityBuilder:
    """Single-threaded factory that keeps entity ids unique.

    All algebra operations register their results here, so any id is bound
    to exactly one live entity object. Once an entity becomes a child of a
    composite it is consumed and cannot join a second composite.
    """

    def __init__(self, kernels: KernelRegistry | None = None):
        self.kernels = kernels if kernels is not None else KernelRegistry()
        self._entities: dict[str, StreamEntity] = {}
        self._consumed: dict[str, str] = {}
        self._auto = 0

    # -- construction ------------------------------------------------------

    def make_entity(self, id: str, kernel: KernelRef | str,
                    inputs: Iterable[PortSpec] = (),
                    outputs: Iterable[PortSpec] = (),
                    relations: Iterable[RelationConstraint] = (),
                    partitions: int | str | None = None) -> StreamEntity:
        if not id:
            raise ValidationError("entity id must be non-empty")
        if id in self._entities:
            raise DuplicateIdError(f"entity id '{id}' already registered")
        kref = self.kernels.ref(kernel) if isinstance(kernel, str) else kernel
        if kref.name not in self.kernels:
            raise UnknownKernelError(f"kernel '{kref.name}' is not registered")
        inputs = tuple(inputs)
        outputs = tuple(outputs)
        if kref.arity != (len(inputs), len(outputs)):
            raise ArityMismatchError(
                f"entity '{id}': kernel '{kref.name}' expects arity {kref.arity}, "
                f"got ({len(inputs)}, {len(outputs)}) ports")
        _check_port_names(id, inputs, outputs)
        relations = tuple(relations)
        for rc in relations:
            if rc.target == id:
                raise SelfRelationError(f"entity '{id}' relates to itself")
        partitions = _check_partitions(id, partitions, inputs)
        ent = StreamEntity(id=id, kernel=kref, inputs=inputs, outputs=outputs,
                           relations=relations, partitions=partitions)
        self._entities[id] = ent
        return ent

    # -- algebra -----------------------------------------------------------

    def add_parallel(self, a: StreamEntity, b: StreamEntity) -> StreamEntity:
        """Group two independent entities; no relation is added between them."""
        self._check_operands(a, b)
        cid = self._fresh_id("par")
        composite = StreamEntity(
            id=cid,
            kernel=KernelRef(COMPOSITE_KERNEL,
                             (len(a.inputs) + len(b.inputs),
                              len(a.outputs) + len(b.outputs))),
            inputs=_prefixed(a.inputs, a.id) + _prefixed(b.inputs, b.id),
            outputs=_prefixed(a.outputs, a.id) + _prefixed(b.outputs, b.id),
            children=(a, b),
        )
        self._register_composite(composite, consumed=(a, b))
        return composite

    def concat(self, first: StreamEntity, second: StreamEntity) -> StreamEntity:
        """Sequence two entities: every sink of first hard-precedes every
        source of second. Existing constraints are preserved verbatim; the
        new ones are added to private copies of first's sink leaves."""
        self._check_operands(first, second)
        _check_port_chain(first, second)
        sinks = entity_sinks(first)
        sources = entity_sources(second)
        extra = {
            s.id: tuple(RelationConstraint(t.id, Direction.BEFORE, Strength.HARD)
                        for t in sources)
            for s in sinks
        }
        first2 = _with_added_relations(first, extra)
        cid = self._fresh_id("seq")
        composite = StreamEntity(
            id=cid,
            kernel=KernelRef(COMPOSITE_KERNEL,
                             (len(first2.inputs), len(second.outputs))),
            inputs=_prefixed(first2.inputs, first2.id),
            outputs=_prefixed(second.outputs, second.id),
            children=(first2, second),
        )
        self._register_composite(composite, consumed=(first, second))
        return composite

    def compose(self, parent_id: str, children: Iterable[StreamEntity],
                wiring: Wiring | None = None,
                inputs: Iterable[PortSpec] = (),
                outputs: Iterable[PortSpec] = (),
                relations: Iterable[RelationConstraint] = ()) -> StreamEntity:
        """Build a hierarchical entity. The parent-child relation lives in
        the hierarchy itself, never in user relation sets. Wiring binds
        parent boundary ports to child ports and is validated here; data
        routing at runtime flows through predecessor results."""
        children = tuple(children)
        if not parent_id:
            raise ValidationError("entity id must be non-empty")
        if parent_id in self._entities:
            raise DuplicateIdError(f"entity id '{parent_id}' already registered")
        seen: set[str] = {parent_id}
        for ch in children:
            ids = ch.ids()
            if ids & seen:
                raise IdCollisionError(
                    f"compose('{parent_id}'): duplicate ids {sorted(ids & seen)}")
            seen |= ids
            self._check_operand(ch)
        wiring = wiring if wiring is not None else Wiring.empty()
        in_ports, out_ports = _resolve_wiring(parent_id, children, wiring,
                                              tuple(inputs), tuple(outputs))
        relations = tuple(relations)
        for rc in relations:
            if rc.target == parent_id:
                raise SelfRelationError(f"entity '{parent_id}' relates to itself")
        composite = StreamEntity(
            id=parent_id,
            kernel=KernelRef(COMPOSITE_KERNEL, (len(in_ports), len(out_ports))),
            inputs=in_ports,
            outputs=out_ports,
            relations=relations,
            children=children,
        )
        self._register_composite(composite, consumed=children)
        return composite

    # -- helpers -------------------------------------------------------------

    def _fresh_id(self, prefix: str) -> str:
        while True:
            cid = f"__{prefix}{self._auto}"
            self._auto += 1
            if cid not in self._entities:
                return cid

    def _check_operand(self, e: StreamEntity) -> None:
        if e.id in self._consumed:
            raise IdCollisionError(
                f"entity '{e.id}' is already part of composite "
                f"'{self._consumed[e.id]}'")
        for node in e.walk():
            cur = self._entities.get(node.id)
            if cur is None:
                self._entities[node.id] = node
            elif cur is not node:
                raise IdCollisionError(
                    f"entity id '{node.id}' is bound to a different entity")

    def _check_operands(self, a: StreamEntity, b: StreamEntity) -> None:
        overlap = a.ids() & b.ids()
        if overlap:
            raise IdCollisionError(f"operand id sets overlap: {sorted(overlap)}")
        self._check_operand(a)
        self._check_operand(b)

    def _register_composite(self, composite: StreamEntity,
                            consumed: tuple[StreamEntity, ...]) -> None:
        for node in composite.walk():
            self._entities[node.id] = node
        for ch in consumed:
            self._consumed[ch.id] = composite.id


def _check_port_names(owner: str, inputs: tuple[PortSpec, ...],
                      outputs: tuple[PortSpec, ...]) -> None:
    names = [p.name for p in inputs] + [p.name for p in outputs]
    if len(names) != len(set(names)):
        raise ValidationError(f"entity '{owner}': port names must be unique")


def _check_partitions(owner: str, partitions: int | str | None,
                      inputs: tuple[PortSpec, ...]) -> int | str | None:
    if partitions is None:
        return None
    if partitions == AUTO_PARTITIONS:
        pass
    elif isinstance(partitions, int):
        if partitions < 1:
            raise ValidationError(f"entity '{owner}': partitions must be >= 1")
    else:
        raise ValidationError(
            f"entity '{owner}': partitions must be 'auto' or a count")
    if not inputs or inputs[0].cardinality is not Cardinality.STREAM:
        raise ValidationError(
            f"entity '{owner}': data-parallel entities need a first input "
            f"port with stream cardinality")
    return partitions


def _check_port_chain(first: StreamEntity, second: StreamEntity) -> None:
    outs = first.outputs
    ins = second.inputs
    if len(outs) != len(ins):
        raise PortTypeMismatchError(
            f"concat('{first.id}', '{second.id}'): {len(outs)} outputs vs "
            f"{len(ins)} inputs")
    for i, (o, p) in enumerate(zip(outs, ins)):
        if o.datatype != p.datatype:
            raise PortTypeMismatchError(
                f"concat('{first.id}', '{second.id}'): port {i} types differ "
                f"({o.datatype} vs {p.datatype})")


def _with_added_relations(root: StreamEntity,
                          extra: dict[str, tuple[RelationConstraint, ...]]
                          ) -> StreamEntity:
    """Return a copy of root's tree with constraints appended to the given
    leaves. Untouched subtrees are shared, never copied."""

    def rebuild(node: StreamEntity) -> StreamEntity:
        if node.is_leaf:
            add = extra.get(node.id)
            if not add:
                return node
            return replace(node, relations=node.relations + add)
        new_children = tuple(rebuild(c) for c in node.children)
        if all(nc is c for nc, c in zip(new_children, node.children)):
            return node
        return replace(node, children=new_children)

    return rebuild(root)


def _resolve_wiring(parent_id: str, children: tuple[StreamEntity, ...],
                    wiring: Wiring, inputs: tuple[PortSpec, ...],
                    outputs: tuple[PortSpec, ...]
                    ) -> tuple[tuple[PortSpec, ...], tuple[PortSpec, ...]]:
    by_id = {c.id: c for c in children}

    def child_port(wire: Wire, side: str) -> PortSpec:
        child = by_id.get(wire.child)
        if child is None:
            raise DanglingWireError(
                f"compose('{parent_id}'): wire references unknown child "
                f"'{wire.child}'")
        ports = child.inputs if side == "in" else child.outputs
        for p in ports:
            if p.name == wire.child_port:
                return p
        raise DanglingWireError(
            f"compose('{parent_id}'): child '{wire.child}' has no "
            f"{side}put port '{wire.child_port}'")

    explicit_in = {p.name: p for p in inputs}
    explicit_out = {p.name: p for p in outputs}

    derived_in: dict[str, PortSpec] = {}
    for wire in wiring.inputs:
        cp = child_port(wire, "in")
        known = explicit_in.get(wire.parent_port) or derived_in.get(wire.parent_port)
        if known is not None and known.datatype != cp.datatype:
            raise PortTypeMismatchError(
                f"compose('{parent_id}'): input port '{wire.parent_port}' wired "
                f"to conflicting types ({known.datatype} vs {cp.datatype})")
        derived_in.setdefault(wire.parent_port,
                              replace(cp, name=wire.parent_port))

    derived_out: dict[str, PortSpec] = {}
    for wire in wiring.outputs:
        cp = child_port(wire, "out")
        if wire.parent_port in derived_out:
            raise ValidationError(
                f"compose('{parent_id}'): output port '{wire.parent_port}' has "
                f"multiple producers")
        known = explicit_out.get(wire.parent_port)
        if known is not None and known.datatype != cp.datatype:
            raise PortTypeMismatchError(
                f"compose('{parent_id}'): output port '{wire.parent_port}' wired "
                f"to conflicting type ({known.datatype} vs {cp.datatype})")
        derived_out[wire.parent_port] = replace(cp, name=wire.parent_port)

    in_ports = list(inputs) + [p for n, p in derived_in.items()
                               if n not in explicit_in]
    out_ports = list(outputs) + [p for n, p in derived_out.items()
                                 if n not in explicit_out]
    _check_port_names(parent_id, tuple(in_ports), tuple(out_ports))
    return tuple(in_ports), tuple(out_ports)
