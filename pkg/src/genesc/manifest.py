"""Manifest text format and graph-segment serialization.

The manifest is a line-oriented block grammar (whitespace and declaration
order are insignificant, ``#`` starts a comment)::

    entity <id> {
      kernel: <name>;
      input: [stream] <type> <name>;
      output: [stream] <type> <name>;
      before: [(<id>, hard|soft), ...];
      after: [(<id>, hard|soft), ...];
      children: [<id>, ...];
      partitions: auto | <n>;
    }

Graph segments serialize a built hypergraph: a binary record format (magic
``GSC1``, little-endian fixed-width integers, CRC-32 over the payload) and a
human-readable JSON alternative selected by file extension.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .entity import (
    AUTO_PARTITIONS,
    Cardinality,
    Direction,
    EntityBuilder,
    KernelRef,
    KernelRegistry,
    PortSpec,
    RelationConstraint,
    StreamEntity,
    Strength,
)
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    DuplicateDeclarationError,
    ManifestSyntaxError,
    TruncatedRecordError,
    UnresolvedNameError,
    VersionUnsupportedError,
)
from .graph import EdgeKind, HyperEdge, Hypergraph, build_graph

MAGIC = b"GSC1"
SEGMENT_VERSION = 1


# ---------------------------------------------------------------------------
# manifest tokenizer / parser
# ---------------------------------------------------------------------------

_PUNCT = set("{}[](),:;")


@dataclass(frozen=True)
class _Token:
    kind: str  # ident | int | punct | eof
    value: str
    line: int
    col: int


def _scan(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token("punct", ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit():
            start = i
            while i < n and text[i].isdigit():
                i += 1
            tokens.append(_Token("int", text[start:i], line, col))
            col += i - start
            continue
        if ch.isalpha():
            start = i
            while i < n and (text[i].isalnum() or text[i] in "_-"):
                i += 1
            tokens.append(_Token("ident", text[start:i], line, col))
            col += i - start
            continue
        raise ManifestSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("eof", "", line, col))
    return tokens


@dataclass
class EntityDecl:
    """One textual entity declaration, before name resolution."""

    id: str
    line: int
    kernel: str | None = None
    inputs: list[tuple[str, str, Cardinality]] = field(default_factory=list)
    outputs: list[tuple[str, str, Cardinality]] = field(default_factory=list)
    before: list[tuple[str, Strength]] = field(default_factory=list)
    after: list[tuple[str, Strength]] = field(default_factory=list)
    children: list[str] = field(default_factory=list)
    partitions: int | str | None = None


@dataclass
class ManifestDoc:
    declarations: list[EntityDecl]


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind: str, value: str | None = None) -> _Token:
        tok = self.take()
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value if value is not None else kind
            raise ManifestSyntaxError(
                f"expected {want!r}, found {tok.value or tok.kind!r}",
                tok.line, tok.col)
        return tok

    def parse(self) -> ManifestDoc:
        decls: list[EntityDecl] = []
        while self.peek().kind != "eof":
            decls.append(self.entity_decl())
        return ManifestDoc(declarations=decls)

    def entity_decl(self) -> EntityDecl:
        kw = self.expect("ident")
        if kw.value != "entity":
            raise ManifestSyntaxError(
                f"expected 'entity', found {kw.value!r}", kw.line, kw.col)
        name = self.expect("ident")
        decl = EntityDecl(id=name.value, line=name.line)
        self.expect("punct", "{")
        seen: set[str] = set()
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.value == "}":
                self.take()
                break
            self.field(decl, seen)
        return decl

    def field(self, decl: EntityDecl, seen: set[str]) -> None:
        name = self.expect("ident")
        if name.value not in {"kernel", "input", "output", "before", "after",
                              "children", "partitions"}:
            raise ManifestSyntaxError(
                f"unknown field {name.value!r}", name.line, name.col)
        if name.value not in {"input", "output"} and name.value in seen:
            raise ManifestSyntaxError(
                f"duplicate field {name.value!r}", name.line, name.col)
        seen.add(name.value)
        self.expect("punct", ":")

        if name.value == "kernel":
            decl.kernel = self.expect("ident").value
        elif name.value in {"input", "output"}:
            first = self.expect("ident")
            if first.value == "stream":
                card = Cardinality.STREAM
                dtype = self.expect("ident").value
            else:
                card = Cardinality.FIXED
                dtype = first.value
            pname = self.expect("ident").value
            target = decl.inputs if name.value == "input" else decl.outputs
            target.append((pname, dtype, card))
        elif name.value in {"before", "after"}:
            target = decl.before if name.value == "before" else decl.after
            target.extend(self.relation_list())
        elif name.value == "children":
            decl.children = self.ident_list()
        elif name.value == "partitions":
            tok = self.take()
            if tok.kind == "int":
                decl.partitions = int(tok.value)
            elif tok.kind == "ident" and tok.value == AUTO_PARTITIONS:
                decl.partitions = AUTO_PARTITIONS
            else:
                raise ManifestSyntaxError(
                    f"partitions must be 'auto' or a count, found {tok.value!r}",
                    tok.line, tok.col)

        if self.peek().kind == "punct" and self.peek().value == ";":
            self.take()

    def relation_list(self) -> list[tuple[str, Strength]]:
        self.expect("punct", "[")
        out: list[tuple[str, Strength]] = []
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.value == "]":
                self.take()
                return out
            self.expect("punct", "(")
            target = self.expect("ident").value
            self.expect("punct", ",")
            strength = self.expect("ident")
            if strength.value not in {"hard", "soft"}:
                raise ManifestSyntaxError(
                    f"relation strength must be hard or soft, "
                    f"found {strength.value!r}", strength.line, strength.col)
            self.expect("punct", ")")
            out.append((target, Strength(strength.value)))
            if self.peek().kind == "punct" and self.peek().value == ",":
                self.take()

    def ident_list(self) -> list[str]:
        self.expect("punct", "[")
        out: list[str] = []
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.value == "]":
                self.take()
                return out
            out.append(self.expect("ident").value)
            if self.peek().kind == "punct" and self.peek().value == ",":
                self.take()


def parse_manifest_doc(text: str | bytes) -> ManifestDoc:
    """Syntax-only pass: text to declarations, no name resolution."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ManifestSyntaxError(f"not valid UTF-8: {exc}", 1, 1) from exc
    return _Parser(_scan(text)).parse()


def parse_manifest(text: str | bytes,
                   kernels: KernelRegistry) -> list[StreamEntity]:
    """Parse declarations and resolve them into registered entities.

    Returns every declared entity in declaration order. Kernel names must
    resolve in the given registry and relation/children targets must be
    declared in the same document.
    """
    doc = parse_manifest_doc(text)
    by_id: dict[str, EntityDecl] = {}
    for decl in doc.declarations:
        if decl.id in by_id:
            raise DuplicateDeclarationError(
                f"entity '{decl.id}' declared more than once")
        by_id[decl.id] = decl

    parent_of: dict[str, str] = {}
    for decl in doc.declarations:
        for child in decl.children:
            if child not in by_id:
                raise UnresolvedNameError(
                    f"entity '{decl.id}' lists unknown child '{child}'")
            if child in parent_of:
                raise DuplicateDeclarationError(
                    f"entity '{child}' is a child of both "
                    f"'{parent_of[child]}' and '{decl.id}'")
            parent_of[child] = decl.id
        for target, _ in decl.before + decl.after:
            if target not in by_id:
                raise UnresolvedNameError(
                    f"entity '{decl.id}' relates to unknown entity '{target}'")
        if not decl.children:
            if decl.kernel is None:
                raise UnresolvedNameError(
                    f"entity '{decl.id}' declares no kernel and no children")
            if decl.kernel not in kernels:
                raise UnresolvedNameError(
                    f"entity '{decl.id}' uses unregistered kernel "
                    f"'{decl.kernel}'")

    builder = EntityBuilder(kernels)
    built: dict[str, StreamEntity] = {}

    def build(decl_id: str, trail: tuple[str, ...]) -> StreamEntity:
        if decl_id in built:
            return built[decl_id]
        if decl_id in trail:
            decl = by_id[decl_id]
            raise ManifestSyntaxError(
                f"cyclic children composition through '{decl_id}'",
                decl.line, 1)
        decl = by_id[decl_id]
        relations = tuple(
            [RelationConstraint(t, Direction.BEFORE, s) for t, s in decl.before]
            + [RelationConstraint(t, Direction.AFTER, s) for t, s in decl.after])
        inputs = tuple(PortSpec(n, d, c) for n, d, c in decl.inputs)
        outputs = tuple(PortSpec(n, d, c) for n, d, c in decl.outputs)
        if decl.children:
            kids = tuple(build(c, trail + (decl_id,)) for c in decl.children)
            ent = builder.compose(decl_id, kids, inputs=inputs,
                                  outputs=outputs, relations=relations)
        else:
            ent = builder.make_entity(decl_id, decl.kernel, inputs=inputs,
                                      outputs=outputs, relations=relations,
                                      partitions=decl.partitions)
        built[decl_id] = ent
        return ent

    return [build(decl.id, ()) for decl in doc.declarations]


def manifest_roots(entities: Iterable[StreamEntity]) -> list[StreamEntity]:
    """Entities not claimed as a child by any other entity in the list."""
    entities = list(entities)
    claimed = {c.id for e in entities for c in e.children}
    return [e for e in entities if e.id not in claimed]


def load_manifest_program(text: str | bytes,
                          kernels: KernelRegistry) -> Hypergraph:
    return build_graph(manifest_roots(parse_manifest(text, kernels)))


# ---------------------------------------------------------------------------
# graph segment: binary format
# ---------------------------------------------------------------------------

_CARD_ENC = {Cardinality.FIXED: 0, Cardinality.STREAM: 1}
_CARD_DEC = {v: k for k, v in _CARD_ENC.items()}
_DIR_ENC = {Direction.BEFORE: 0, Direction.AFTER: 1}
_DIR_DEC = {v: k for k, v in _DIR_ENC.items()}
_STR_ENC = {Strength.HARD: 0, Strength.SOFT: 1}
_STR_DEC = {v: k for k, v in _STR_ENC.items()}
_KIND_ENC = {EdgeKind.CONTROLFLOW: 0, EdgeKind.DATAFLOW: 1}
_KIND_DEC = {v: k for k, v in _KIND_ENC.items()}


class _Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def u8(self, v: int) -> None:
        self.parts.append(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self.parts.append(struct.pack("<H", v))

    def u32(self, v: int) -> None:
        self.parts.append(struct.pack("<I", v))

    def i32(self, v: int) -> None:
        self.parts.append(struct.pack("<i", v))

    def string(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self.parts.append(raw)

    def bytes_(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, context: str = "header"):
        self.data = data
        self.pos = 0
        self.context = context

    def _need(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedRecordError(
                f"segment truncated inside {self.context}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._need(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._need(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._need(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self._need(4))[0]

    def string(self) -> str:
        n = self.u16()
        return self._need(n).decode("utf-8")


def _encode_partitions(p: int | str | None) -> int:
    if p is None:
        return 0
    if p == AUTO_PARTITIONS:
        return -1
    return int(p)


def _decode_partitions(v: int) -> int | str | None:
    if v == 0:
        return None
    if v == -1:
        return AUTO_PARTITIONS
    return v


def _vertex_record(w: _Writer, ent: StreamEntity) -> None:
    w.string(ent.id)
    w.string(ent.kernel.name)
    w.u16(ent.kernel.arity[0])
    w.u16(ent.kernel.arity[1])
    w.i32(_encode_partitions(ent.partitions))
    for ports in (ent.inputs, ent.outputs):
        w.u16(len(ports))
        for p in ports:
            w.string(p.name)
            w.string(p.datatype)
            w.u8(_CARD_ENC[p.cardinality])
    w.u16(len(ent.relations))
    for rc in ent.relations:
        w.string(rc.target)
        w.u8(_DIR_ENC[rc.direction])
        w.u8(_STR_ENC[rc.strength])


def _read_ports(r: _Reader) -> tuple[PortSpec, ...]:
    count = r.u16()
    return tuple(PortSpec(r.string(), r.string(), _CARD_DEC[r.u8()])
                 for _ in range(count))


@dataclass
class _VertexRecord:
    id: str
    kernel: KernelRef
    inputs: tuple[PortSpec, ...]
    outputs: tuple[PortSpec, ...]
    relations: tuple[RelationConstraint, ...]
    partitions: int | str | None


def _read_vertex(r: _Reader) -> _VertexRecord:
    vid = r.string()
    kname = r.string()
    arity = (r.u16(), r.u16())
    partitions = _decode_partitions(r.i32())
    inputs = _read_ports(r)
    outputs = _read_ports(r)
    nrel = r.u16()
    relations = tuple(
        RelationConstraint(r.string(), _DIR_DEC[r.u8()], _STR_DEC[r.u8()])
        for _ in range(nrel))
    return _VertexRecord(vid, KernelRef(kname, arity), inputs, outputs,
                         relations, partitions)


def _payload(g: Hypergraph) -> bytes:
    w = _Writer()
    w.u32(len(g.vertices))
    w.u32(len(g.edges))
    w.u32(len(g.hierarchy))
    for vid in sorted(g.vertices):
        _vertex_record(w, g.vertices[vid])
    for e in g.edges:
        for side in (e.heads, e.tails):
            w.u16(len(side))
            for vid in sorted(side):
                w.string(vid)
        w.u8(_KIND_ENC[e.kind])
        w.u8(_STR_ENC[e.strength])
    for parent in sorted(g.hierarchy):
        w.string(parent)
        kids = g.hierarchy[parent]
        w.u16(len(kids))
        for c in kids:
            w.string(c)
    return w.bytes_()


def emit_graph_segment(g: Hypergraph, fmt: str = "binary") -> bytes:
    """Serialize a hypergraph deterministically: same graph, same bytes."""
    if fmt == "text":
        return _emit_text(g)
    if fmt != "binary":
        raise ValueError(f"unknown segment format '{fmt}'")
    payload = _payload(g)
    head = MAGIC + struct.pack("<HHII", SEGMENT_VERSION, 0, len(payload),
                               zlib.crc32(payload))
    return head + payload


def _rebuild_entities(records: dict[str, _VertexRecord],
                      hierarchy: dict[str, tuple[str, ...]]
                      ) -> dict[str, StreamEntity]:
    entities: dict[str, StreamEntity] = {}

    def build(vid: str, trail: tuple[str, ...]) -> StreamEntity:
        if vid in entities:
            return entities[vid]
        if vid in trail:
            raise TruncatedRecordError(
                f"hierarchy record cycle through '{vid}'")
        rec = records[vid]
        kids = tuple(build(c, trail + (vid,)) for c in hierarchy.get(vid, ()))
        ent = StreamEntity(id=rec.id, kernel=rec.kernel, inputs=rec.inputs,
                           outputs=rec.outputs, relations=rec.relations,
                           children=kids, partitions=rec.partitions)
        entities[vid] = ent
        return ent

    for vid in records:
        build(vid, ())
    return entities


def load_graph_segment(data: bytes | str) -> Hypergraph:
    """Load a serialized hypergraph, binary or text, sniffed by content."""
    if isinstance(data, str):
        return _load_text(data)
    if data[:4] == MAGIC:
        return _load_binary(data)
    stripped = data.lstrip()
    if stripped[:1] == b"{":
        return _load_text(data.decode("utf-8"))
    raise BadMagicError(
        f"bad segment magic: {data[:4]!r} (expected {MAGIC!r})")


def _load_binary(data: bytes) -> Hypergraph:
    if len(data) < 16:
        raise TruncatedRecordError("segment truncated inside header")
    version, _, payload_len, crc = struct.unpack("<HHII", data[4:16])
    if version != SEGMENT_VERSION:
        raise VersionUnsupportedError(f"segment version {version} unsupported")
    payload = data[16:16 + payload_len]
    if len(payload) < payload_len:
        raise TruncatedRecordError("segment truncated inside payload")
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatchError(
            f"segment checksum mismatch (stored {crc:#010x}, "
            f"computed {zlib.crc32(payload):#010x})")

    r = _Reader(payload)
    n_vertices = r.u32()
    n_edges = r.u32()
    n_hier = r.u32()
    records: dict[str, _VertexRecord] = {}
    for i in range(n_vertices):
        r.context = f"vertex record {i}"
        rec = _read_vertex(r)
        records[rec.id] = rec
    edges: list[HyperEdge] = []
    for i in range(n_edges):
        r.context = f"edge record {i}"
        heads = frozenset(r.string() for _ in range(r.u16()))
        tails = frozenset(r.string() for _ in range(r.u16()))
        edges.append(HyperEdge(heads, tails, _KIND_DEC[r.u8()],
                               _STR_DEC[r.u8()]))
    hierarchy: dict[str, tuple[str, ...]] = {}
    for i in range(n_hier):
        r.context = f"hierarchy record {i}"
        parent = r.string()
        hierarchy[parent] = tuple(r.string() for _ in range(r.u16()))

    entities = _rebuild_entities(records, hierarchy)
    vertices = {vid: entities[vid] for vid in sorted(records)}
    return Hypergraph(vertices=vertices, edges=edges, hierarchy=hierarchy)


# ---------------------------------------------------------------------------
# graph segment: text format
# ---------------------------------------------------------------------------

def _port_json(p: PortSpec) -> dict:
    return {"name": p.name, "datatype": p.datatype,
            "cardinality": p.cardinality.value}


def _vertex_json(ent: StreamEntity) -> dict:
    return {
        "id": ent.id,
        "kernel": {"name": ent.kernel.name, "arity": list(ent.kernel.arity)},
        "inputs": [_port_json(p) for p in ent.inputs],
        "outputs": [_port_json(p) for p in ent.outputs],
        "relations": [{"target": rc.target, "direction": rc.direction.value,
                       "strength": rc.strength.value} for rc in ent.relations],
        "partitions": ent.partitions,
    }


def _content_json(g: Hypergraph) -> dict:
    return {
        "vertices": [_vertex_json(g.vertices[vid]) for vid in sorted(g.vertices)],
        "edges": [{"heads": sorted(e.heads), "tails": sorted(e.tails),
                   "kind": e.kind.value, "strength": e.strength.value}
                  for e in g.edges],
        "hierarchy": [[p, list(g.hierarchy[p])] for p in sorted(g.hierarchy)],
    }


def _emit_text(g: Hypergraph) -> bytes:
    content = _content_json(g)
    canonical = json.dumps(content, sort_keys=True, separators=(",", ":"))
    doc = {"magic": MAGIC.decode(), "version": SEGMENT_VERSION,
           "checksum": zlib.crc32(canonical.encode("utf-8")), **content}
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _load_text(text: str) -> Hypergraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TruncatedRecordError(f"segment text is not valid JSON: {exc}")
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC.decode():
        raise BadMagicError(f"bad segment magic: {doc.get('magic')!r}")
    if doc.get("version") != SEGMENT_VERSION:
        raise VersionUnsupportedError(
            f"segment version {doc.get('version')} unsupported")
    content = {k: doc.get(k) for k in ("vertices", "edges", "hierarchy")}
    canonical = json.dumps(content, sort_keys=True, separators=(",", ":"))
    if zlib.crc32(canonical.encode("utf-8")) != doc.get("checksum"):
        raise ChecksumMismatchError("segment text checksum mismatch")

    try:
        records: dict[str, _VertexRecord] = {}
        for v in content["vertices"]:
            records[v["id"]] = _VertexRecord(
                id=v["id"],
                kernel=KernelRef(v["kernel"]["name"],
                                 tuple(v["kernel"]["arity"])),
                inputs=tuple(PortSpec(p["name"], p["datatype"],
                                      Cardinality(p["cardinality"]))
                             for p in v["inputs"]),
                outputs=tuple(PortSpec(p["name"], p["datatype"],
                                       Cardinality(p["cardinality"]))
                              for p in v["outputs"]),
                relations=tuple(RelationConstraint(rc["target"],
                                                   Direction(rc["direction"]),
                                                   Strength(rc["strength"]))
                                for rc in v["relations"]),
                partitions=v["partitions"],
            )
        edges = [HyperEdge(frozenset(e["heads"]), frozenset(e["tails"]),
                           EdgeKind(e["kind"]), Strength(e["strength"]))
                 for e in content["edges"]]
        hierarchy = {p: tuple(kids) for p, kids in content["hierarchy"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise TruncatedRecordError(f"malformed segment record: {exc}")
    entities = _rebuild_entities(records, hierarchy)
    vertices = {vid: entities[vid] for vid in sorted(records)}
    return Hypergraph(vertices=vertices, edges=edges, hierarchy=hierarchy)


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

TEXT_EXTENSIONS = {".gsct", ".json"}


def save_graph_segment(g: Hypergraph, path: str | Path) -> Path:
    path = Path(path)
    fmt = "text" if path.suffix in TEXT_EXTENSIONS else "binary"
    path.write_bytes(emit_graph_segment(g, fmt=fmt))
    return path


def load_graph_segment_file(path: str | Path) -> Hypergraph:
    return load_graph_segment(Path(path).read_bytes())
