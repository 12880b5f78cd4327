"""Typed product-attribute graph store.

Four node kinds and four edge kinds::

    Product      --OfType-->       ProductType
    ProductType  --HasKey-->       AttributeKey
    AttributeKey --HasValue-->     Value
    Product      --HasAttribute--> Value

Every Value is typed by exactly one AttributeKey, and a HasAttribute edge is
only accepted when the product's type licenses the value's key.  Canonical
names are unique per kind after normalization; Value names are unique per
typing key, so "Black" may exist once under "Color" and once under
"Strap Color".

Mutations are journaled while a :meth:`GraphStore.transaction` is open so the
decision engine can roll back a half-applied edit.  The append-only audit log
lives here as well because it is part of the snapshot.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Callable, Iterator

from autopkg.errors import (
    AmbiguousName,
    CrossNodeConflict,
    DoubleTyping,
    DuplicateName,
    EmptyName,
    GraphError,
    InvariantViolation,
    KindMismatch,
    ParseError,
    UnknownNode,
    UnlicensedAssertion,
    UntypedValue,
)

FORMAT_VERSION = 1


class NodeKind(str, Enum):
    PRODUCT = "Product"
    PRODUCT_TYPE = "ProductType"
    ATTRIBUTE_KEY = "AttributeKey"
    VALUE = "Value"


class EdgeKind(str, Enum):
    OF_TYPE = "OfType"
    HAS_KEY = "HasKey"
    HAS_VALUE = "HasValue"
    HAS_ATTRIBUTE = "HasAttribute"


EDGE_ENDPOINTS: dict[EdgeKind, tuple[NodeKind, NodeKind]] = {
    EdgeKind.OF_TYPE: (NodeKind.PRODUCT, NodeKind.PRODUCT_TYPE),
    EdgeKind.HAS_KEY: (NodeKind.PRODUCT_TYPE, NodeKind.ATTRIBUTE_KEY),
    EdgeKind.HAS_VALUE: (NodeKind.ATTRIBUTE_KEY, NodeKind.VALUE),
    EdgeKind.HAS_ATTRIBUTE: (NodeKind.PRODUCT, NodeKind.VALUE),
}


def normalize(text: str) -> str:
    """Case-fold, trim and collapse internal whitespace."""
    return " ".join(text.casefold().split())


@dataclass
class CanonicalNode:
    id: int
    kind: NodeKind
    name: str
    description: str | None = None
    synonyms: list[str] = field(default_factory=list)
    created_at: int = 0
    # example values proposed alongside an AttributeKey; metadata only
    examples: list[str] = field(default_factory=list)

    @property
    def normalized_name(self) -> str:
        return normalize(self.name)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "description": self.description,
            "synonyms": list(self.synonyms),
            "created_at": self.created_at,
        }
        if self.examples:
            out["examples"] = list(self.examples)
        return out


@dataclass(frozen=True)
class Edge:
    src: int
    kind: EdgeKind
    dst: int

    def to_dict(self) -> dict[str, Any]:
        return {"src": self.src, "kind": self.kind.value, "dst": self.dst}


@dataclass
class AuditRecord:
    sequence: int
    candidate: dict[str, Any]
    action: str
    target: int | None
    backend_id: str
    timestamp: float
    # resulting canonical node (None for DISCARD)
    node: int | None = None
    # action the backend asked for, when it differs from the applied one
    proposed: str | None = None
    notes: list[str] = field(default_factory=list)
    effects: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence": self.sequence,
            "candidate": self.candidate,
            "action": self.action,
            "target": self.target,
            "backend_id": self.backend_id,
            "timestamp": self.timestamp,
            "node": self.node,
            "proposed": self.proposed,
            "notes": list(self.notes),
            "effects": list(self.effects),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AuditRecord:
        return cls(
            sequence=data["sequence"],
            candidate=data["candidate"],
            action=data["action"],
            target=data["target"],
            backend_id=data["backend_id"],
            timestamp=data["timestamp"],
            node=data.get("node"),
            proposed=data.get("proposed"),
            notes=list(data.get("notes", [])),
            effects=list(data.get("effects", [])),
        )


class Transaction:
    def __init__(self) -> None:
        self.undo: list[Callable[[], None]] = []
        self.effects: list[dict[str, Any]] = []


_NameKey = tuple[NodeKind, "int | None", str]


class GraphStore:
    """In-memory PKG with schema enforcement, audit log and JSON snapshots.

    Single writer: callers serialize mutations (the KGD engine does).  Node
    objects returned by :meth:`node` are live views and must not be mutated.
    """

    def __init__(self) -> None:
        self._nodes: dict[int, CanonicalNode] = {}
        self._edges: dict[Edge, None] = {}
        self._out: dict[int, list[Edge]] = defaultdict(list)
        self._in: dict[int, list[Edge]] = defaultdict(list)
        # (kind, scope, normalized) -> node id; covers names and synonyms.
        # scope is the typing key id for Value nodes, None otherwise.
        self._names: dict[_NameKey, int] = {}
        self._value_key: dict[int, int] = {}
        self._value_names: dict[str, set[int]] = defaultdict(set)
        self.audit: list[AuditRecord] = []
        self.next_id = 1
        self.next_seq = 1
        self._tx: Transaction | None = None
        self._lock = threading.RLock()

    # ------------------------------------------------------------------ reads

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def node(self, node_id: int) -> CanonicalNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node with id {node_id}") from None

    def nodes(self, kind: NodeKind | None = None) -> Iterator[CanonicalNode]:
        for n in self._nodes.values():
            if kind is None or n.kind is kind:
                yield n

    def edges(self, kind: EdgeKind | None = None) -> Iterator[Edge]:
        for e in self._edges:
            if kind is None or e.kind is kind:
                yield e

    def has_edge(self, src: int, kind: EdgeKind, dst: int) -> bool:
        return Edge(src, kind, dst) in self._edges

    def out_edges(self, node_id: int, kind: EdgeKind | None = None) -> list[Edge]:
        return [e for e in self._out.get(node_id, ()) if kind is None or e.kind is kind]

    def in_edges(self, node_id: int, kind: EdgeKind | None = None) -> list[Edge]:
        return [e for e in self._in.get(node_id, ()) if kind is None or e.kind is kind]

    def value_key(self, value_id: int) -> int:
        """The AttributeKey typing a Value node."""
        try:
            return self._value_key[value_id]
        except KeyError:
            raise UnknownNode(f"{value_id} is not a Value node") from None

    def scope_of(self, node_id: int) -> int | None:
        return self._value_key.get(node_id)

    def keys_of_type(self, type_id: int) -> list[int]:
        """AttributeKey ids of a ProductType in HasKey insertion order."""
        return [e.dst for e in self.out_edges(type_id, EdgeKind.HAS_KEY)]

    def types_of_product(self, product_id: int) -> list[int]:
        return [e.dst for e in self.out_edges(product_id, EdgeKind.OF_TYPE)]

    def resolve(self, kind: NodeKind, name: str, scope: int | None = None) -> int | None:
        """Find the node whose name or synonym normalizes to ``name``.

        Value names are unique per typing key; pass ``scope`` (the key id) to
        look one up.  Without a scope a Value lookup searches every key and
        raises :class:`AmbiguousName` if several keys hold the name.
        """
        norm = normalize(name)
        if not norm:
            return None
        if kind is not NodeKind.VALUE:
            return self._names.get((kind, None, norm))
        if scope is not None:
            return self._names.get((kind, scope, norm))
        matches = sorted(self._value_names.get(norm, ()))
        if len(matches) > 1:
            raise AmbiguousName(f"value {name!r} exists under several keys", matches)
        return matches[0] if matches else None

    def stats(self) -> dict[str, dict[str, int]]:
        nodes = {k.value: 0 for k in NodeKind}
        edges = {k.value: 0 for k in EdgeKind}
        for n in self._nodes.values():
            nodes[n.kind.value] += 1
        for e in self._edges:
            edges[e.kind.value] += 1
        return {"nodes": nodes, "edges": edges}

    # -------------------------------------------------------------- mutations

    def create_node(
        self,
        kind: NodeKind,
        name: str,
        description: str | None = None,
        *,
        parent: int | None = None,
        examples: list[str] | None = None,
    ) -> int:
        """Create a canonical node and return its id.

        Value nodes must name their typing AttributeKey via ``parent``; the
        HasValue edge is created together with the node.
        """
        kind = NodeKind(kind)
        norm = normalize(name)
        if not norm:
            raise EmptyName(f"empty {kind.value} name")
        scope = None
        if kind is NodeKind.VALUE:
            if parent is None:
                raise UntypedValue(f"value {name!r} needs a typing AttributeKey")
            self._expect_kind(parent, NodeKind.ATTRIBUTE_KEY)
            scope = parent
        elif parent is not None:
            raise KindMismatch(f"{kind.value} nodes take no parent")
        existing = self._names.get((kind, scope, norm))
        if existing is not None:
            raise DuplicateName(f"{kind.value} {name!r} already exists as node {existing}", existing)

        with self._lock:
            node = CanonicalNode(
                id=self.next_id,
                kind=kind,
                name=name.strip(),
                description=description,
                created_at=self.next_seq,
                examples=list(examples or []),
            )
            self._insert_node(node, scope)
            if scope is not None:
                self._insert_edge(Edge(scope, EdgeKind.HAS_VALUE, node.id))
            return node.id

    def add_edge(self, src: int, kind: EdgeKind, dst: int) -> None:
        kind = EdgeKind(kind)
        src_kind, dst_kind = EDGE_ENDPOINTS[kind]
        self._expect_kind(src, src_kind)
        self._expect_kind(dst, dst_kind)
        edge = Edge(src, kind, dst)
        if edge in self._edges:
            return
        if kind is EdgeKind.HAS_VALUE:
            # values are typed at creation; a different parent is a second typing
            raise DoubleTyping(f"value {dst} is already typed by key {self._value_key.get(dst)}")
        if kind is EdgeKind.HAS_ATTRIBUTE and not self.is_licensed(src, dst):
            raise UnlicensedAssertion(
                f"product {src} has no type licensing key {self._value_key.get(dst)} of value {dst}"
            )
        with self._lock:
            self._insert_edge(edge)

    def is_licensed(self, product_id: int, value_id: int) -> bool:
        key = self._value_key.get(value_id)
        if key is None:
            return False
        return any(
            self.has_edge(t, EdgeKind.HAS_KEY, key) for t in self.types_of_product(product_id)
        )

    def merge_into(
        self, target: int, variant_name: str, variant_description: str | None = None
    ) -> None:
        """Record ``variant_name`` as a synonym of ``target``.

        ``variant_description`` is accepted for interface symmetry; the
        decision engine keeps it in the audit trail, the node is unchanged.
        """
        node = self.node(target)
        norm = normalize(variant_name)
        if not norm:
            raise EmptyName("empty variant name")
        owner = self._names.get((node.kind, self.scope_of(target), norm))
        if owner == target:
            return
        if owner is not None:
            raise CrossNodeConflict(f"{variant_name!r} already belongs to node {owner}", owner)
        with self._lock:
            self._insert_synonym(target, variant_name.strip())

    def replace_label(self, target: int, new_name: str) -> None:
        """Promote ``new_name`` to canonical label; the old label becomes a synonym."""
        node = self.node(target)
        norm = normalize(new_name)
        if not norm:
            raise EmptyName("empty replacement name")
        new_name = new_name.strip()
        if new_name == node.name:
            return
        owner = self._names.get((node.kind, self.scope_of(target), norm))
        if owner is not None and owner != target:
            raise CrossNodeConflict(f"{new_name!r} already belongs to node {owner}", owner)
        with self._lock:
            old = node.name
            if norm == node.normalized_name:
                self._set_name(target, new_name)
                return
            if owner == target:
                self._remove_synonym(target, norm)
            self._set_name(target, new_name)
            self._insert_synonym(target, old)

    def append_audit(
        self,
        *,
        candidate: dict[str, Any],
        action: str,
        target: int | None,
        backend_id: str,
        timestamp: float,
        node: int | None = None,
        proposed: str | None = None,
        notes: list[str] | None = None,
        effects: list[dict[str, Any]] | None = None,
    ) -> AuditRecord:
        with self._lock:
            rec = AuditRecord(
                sequence=self.next_seq,
                candidate=candidate,
                action=action,
                target=target,
                backend_id=backend_id,
                timestamp=timestamp,
                node=node,
                proposed=proposed,
                notes=list(notes or []),
                effects=list(effects or []),
            )
            self.audit.append(rec)
            self.next_seq += 1
            return rec

    @contextmanager
    def transaction(self) -> Iterator[Transaction]:
        """Journal mutations; any exception rolls every one of them back."""
        if self._tx is not None:
            raise GraphError("nested transactions are not supported")
        tx = Transaction()
        self._tx = tx
        try:
            yield tx
        except BaseException:
            for undo in reversed(tx.undo):
                undo()
            tx.effects.clear()
            raise
        finally:
            self._tx = None

    # ------------------------------------------------------------- primitives

    def _record(self, effect: dict[str, Any], undo: Callable[[], None]) -> None:
        if self._tx is not None:
            self._tx.undo.append(undo)
            self._tx.effects.append(effect)

    def _expect_kind(self, node_id: int, kind: NodeKind) -> CanonicalNode:
        node = self.node(node_id)
        if node.kind is not kind:
            raise KindMismatch(f"node {node_id} is {node.kind.value}, expected {kind.value}")
        return node

    def _insert_node(self, node: CanonicalNode, scope: int | None) -> None:
        norm = node.normalized_name
        self._nodes[node.id] = node
        self._names[(node.kind, scope, norm)] = node.id
        if scope is not None:
            self._value_key[node.id] = scope
            self._value_names[norm].add(node.id)
        prev_next = self.next_id
        self.next_id = max(self.next_id, node.id + 1)

        def undo() -> None:
            del self._nodes[node.id]
            del self._names[(node.kind, scope, norm)]
            if scope is not None:
                del self._value_key[node.id]
                self._value_names[norm].discard(node.id)
            self.next_id = prev_next

        self._record({"op": "create_node", "id": node.id, "kind": node.kind.value}, undo)

    def _insert_edge(self, edge: Edge) -> None:
        self._edges[edge] = None
        self._out[edge.src].append(edge)
        self._in[edge.dst].append(edge)

        def undo() -> None:
            del self._edges[edge]
            self._out[edge.src].remove(edge)
            self._in[edge.dst].remove(edge)

        self._record({"op": "add_edge", **edge.to_dict()}, undo)

    def _insert_synonym(self, node_id: int, name: str) -> None:
        node = self._nodes[node_id]
        scope = self.scope_of(node_id)
        norm = normalize(name)
        added = (node.kind, scope, norm) not in self._names
        node.synonyms.append(name)
        self._names[(node.kind, scope, norm)] = node_id
        if scope is not None:
            self._value_names[norm].add(node_id)

        def undo() -> None:
            node.synonyms.remove(name)
            if added:
                del self._names[(node.kind, scope, norm)]
                if scope is not None:
                    self._value_names[norm].discard(node_id)

        self._record({"op": "add_synonym", "id": node_id, "name": name}, undo)

    def _remove_synonym(self, node_id: int, norm: str) -> None:
        node = self._nodes[node_id]
        idx = next(i for i, s in enumerate(node.synonyms) if normalize(s) == norm)
        name = node.synonyms.pop(idx)
        # the name index keeps pointing at node_id: the caller promotes it

        def undo() -> None:
            node.synonyms.insert(idx, name)

        self._record({"op": "remove_synonym", "id": node_id, "name": name}, undo)

    def _set_name(self, node_id: int, name: str) -> None:
        node = self._nodes[node_id]
        scope = self.scope_of(node_id)
        old = node.name
        old_norm, new_norm = normalize(old), normalize(name)
        node.name = name
        added = (node.kind, scope, new_norm) not in self._names
        self._names[(node.kind, scope, new_norm)] = node_id
        if scope is not None:
            self._value_names[new_norm].add(node_id)

        def undo() -> None:
            node.name = old
            if added:
                del self._names[(node.kind, scope, new_norm)]
                if scope is not None:
                    self._value_names[new_norm].discard(node_id)

        self._record({"op": "relabel", "id": node_id, "old": old, "new": name}, undo)

    # -------------------------------------------------------------- validation

    def problems(self) -> list[str]:
        """Full invariant sweep, recomputed from raw state (not from indexes)."""
        found: list[str] = []
        value_parents: dict[int, list[int]] = defaultdict(list)
        for e in self._edges:
            src, dst = self._nodes.get(e.src), self._nodes.get(e.dst)
            if src is None or dst is None:
                found.append(f"dangling edge {e}")
                continue
            if (src.kind, dst.kind) != EDGE_ENDPOINTS[e.kind]:
                found.append(f"edge {e} joins {src.kind.value}->{dst.kind.value}")
            if e.kind is EdgeKind.HAS_VALUE:
                value_parents[e.dst].append(e.src)

        claimed: dict[tuple[NodeKind, int | None, str], int] = {}
        for n in self._nodes.values():
            norm = n.normalized_name
            if not norm:
                found.append(f"node {n.id} has an empty name")
            scope = None
            if n.kind is NodeKind.VALUE:
                parents = value_parents.get(n.id, [])
                if len(parents) != 1:
                    found.append(f"value {n.id} has {len(parents)} HasValue parents")
                    continue
                scope = parents[0]
            forms = [norm] + [normalize(s) for s in n.synonyms]
            if norm in forms[1:]:
                found.append(f"node {n.id} lists its own name as a synonym")
            if len(set(forms)) != len(forms):
                found.append(f"node {n.id} has repeated synonyms")
            for f in set(forms):
                other = claimed.setdefault((n.kind, scope, f), n.id)
                if other != n.id:
                    found.append(f"{n.kind.value} {f!r} claimed by nodes {other} and {n.id}")

        for e in self._edges:
            if e.kind is not EdgeKind.HAS_ATTRIBUTE or e.dst not in value_parents:
                continue
            key = value_parents[e.dst][0]
            types = [x.dst for x in self._out.get(e.src, ()) if x.kind is EdgeKind.OF_TYPE]
            if not any(Edge(t, EdgeKind.HAS_KEY, key) in self._edges for t in types):
                found.append(f"unlicensed assertion {e}")

        for i, rec in enumerate(self.audit, start=1):
            if rec.sequence != i:
                found.append(f"audit record {i} has sequence {rec.sequence}")
                break
        if self.next_seq != len(self.audit) + 1:
            found.append("next_seq out of step with the audit log")
        if self._nodes and self.next_id <= max(self._nodes):
            found.append("next_id is not fresh")
        return found

    def validate(self) -> None:
        found = self.problems()
        if found:
            raise InvariantViolation(found)

    # -------------------------------------------------------------- snapshots

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [self._nodes[i].to_dict() for i in sorted(self._nodes)],
            "edges": [e.to_dict() for e in self._edges],
            "audit": [r.to_dict() for r in self.audit],
            "meta": {
                "format_version": FORMAT_VERSION,
                "next_id": self.next_id,
                "next_seq": self.next_seq,
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"

    def snapshot(self, sink: str | IO[str]) -> None:
        text = self.dumps()
        if isinstance(sink, str):
            with open(sink, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sink.write(text)

    @classmethod
    def loads(cls, text: str) -> GraphStore:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, f"line {exc.lineno} col {exc.colno}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, source: str | IO[str]) -> GraphStore:
        if isinstance(source, str):
            with open(source, encoding="utf-8") as fh:
                return cls.loads(fh.read())
        return cls.loads(source.read())

    def restore(self, source: str | IO[str]) -> None:
        """Replace this store's state with a snapshot; untouched on failure."""
        fresh = GraphStore.load(source)
        with self._lock:
            self.__dict__.update({k: v for k, v in fresh.__dict__.items() if k != "_lock"})

    @classmethod
    def from_dict(cls, data: Any) -> GraphStore:
        store = cls()
        path = "$"
        try:
            if not isinstance(data, dict):
                raise ParseError("snapshot must be a JSON object", path)
            for section in ("nodes", "edges", "audit", "meta"):
                if section not in data:
                    raise ParseError(f"missing {section!r}", path)
            meta = data["meta"]
            if meta.get("format_version") != FORMAT_VERSION:
                raise ParseError(f"unsupported format_version {meta.get('format_version')!r}", "$.meta")
            for i, raw in enumerate(data["nodes"]):
                path = f"$.nodes[{i}]"
                node = CanonicalNode(
                    id=_int(raw["id"]),
                    kind=NodeKind(raw["kind"]),
                    name=_str(raw["name"]),
                    description=raw["description"],
                    synonyms=[_str(s) for s in raw["synonyms"]],
                    created_at=_int(raw["created_at"]),
                    examples=[_str(s) for s in raw.get("examples", [])],
                )
                if node.id in store._nodes:
                    raise ParseError(f"duplicate node id {node.id}", path)
                store._nodes[node.id] = node
            for i, raw in enumerate(data["edges"]):
                path = f"$.edges[{i}]"
                edge = Edge(_int(raw["src"]), EdgeKind(raw["kind"]), _int(raw["dst"]))
                if edge.src not in store._nodes or edge.dst not in store._nodes:
                    raise ParseError(f"edge references unknown node: {edge}", path)
                if edge in store._edges:
                    raise ParseError(f"duplicate edge {edge}", path)
                store._edges[edge] = None
                store._out[edge.src].append(edge)
                store._in[edge.dst].append(edge)
                if edge.kind is EdgeKind.HAS_VALUE:
                    store._value_key.setdefault(edge.dst, edge.src)
            for i, raw in enumerate(data["audit"]):
                path = f"$.audit[{i}]"
                store.audit.append(AuditRecord.from_dict(raw))
            path = "$.meta"
            store.next_id = _int(meta["next_id"])
            store.next_seq = _int(meta["next_seq"])
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"malformed snapshot ({exc!r})", path) from None

        found = store.problems()
        if found:
            raise ParseError(f"snapshot violates graph invariants: {found[0]}", "$")
        for n in store._nodes.values():
            scope = store._value_key.get(n.id)
            for form in [n.name, *n.synonyms]:
                norm = normalize(form)
                store._names[(n.kind, scope, norm)] = n.id
                if scope is not None:
                    store._value_names[norm].add(n.id)
        return store


def _int(x: Any) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise TypeError(f"expected integer, got {x!r}")
    return x


def _str(x: Any) -> str:
    if not isinstance(x, str):
        raise TypeError(f"expected string, got {x!r}")
    return x
