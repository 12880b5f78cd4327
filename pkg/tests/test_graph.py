from __future__ import annotations

import io
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autopkg.errors import (
    AmbiguousName,
    CrossNodeConflict,
    DoubleTyping,
    DuplicateName,
    EmptyName,
    GraphError,
    KindMismatch,
    ParseError,
    UnknownNode,
    UnlicensedAssertion,
    UntypedValue,
)
from autopkg.graph import EdgeKind, GraphStore, NodeKind, normalize

P, T, K, V = NodeKind.PRODUCT, NodeKind.PRODUCT_TYPE, NodeKind.ATTRIBUTE_KEY, NodeKind.VALUE


def appendix_subgraph():
    g = GraphStore()
    desktop = g.create_node(T, "Desktop Computer")
    gpu = g.create_node(K, "GPU")
    g.add_edge(desktop, EdgeKind.HAS_KEY, gpu)
    geforce = g.create_node(V, "NVIDIA GeForce", parent=gpu)
    item = g.create_node(P, "item")
    g.add_edge(item, EdgeKind.OF_TYPE, desktop)
    g.add_edge(item, EdgeKind.HAS_ATTRIBUTE, geforce)
    return g, dict(desktop=desktop, gpu=gpu, geforce=geforce, item=item)


class TestCreate:
    def test_lookup_by_normalized_name(self):
        g = GraphStore()
        pid = g.create_node(T, "Pen Mouse", "stylus mouse")
        assert g.resolve(T, "pen mouse") == pid
        assert g.resolve(T, "  pen MOUSE ") == pid
        assert g.node(pid).synonyms == []

    def test_empty_name(self):
        g = GraphStore()
        with pytest.raises(EmptyName):
            g.create_node(V, "", parent=None)
        with pytest.raises(EmptyName):
            g.create_node(T, "   ")

    def test_duplicate(self):
        g = GraphStore()
        first = g.create_node(T, "Wall Anchor")
        with pytest.raises(DuplicateName) as exc:
            g.create_node(T, "wall  anchor")
        assert exc.value.existing == first

    def test_same_name_other_kind_is_fine(self):
        g = GraphStore()
        g.create_node(T, "Color")
        g.create_node(K, "Color")

    def test_value_needs_key_parent(self):
        g = GraphStore()
        with pytest.raises(UntypedValue):
            g.create_node(V, "Black")
        t = g.create_node(T, "Lamp")
        with pytest.raises(KindMismatch):
            g.create_node(V, "Black", parent=t)
        with pytest.raises(KindMismatch):
            g.create_node(T, "Desk", parent=t)

    def test_values_scoped_per_key(self):
        g = GraphStore()
        color, trim = g.create_node(K, "Color"), g.create_node(K, "Trim Color")
        a = g.create_node(V, "Black", parent=color)
        b = g.create_node(V, "black", parent=trim)
        assert a != b
        assert g.resolve(V, "Black", scope=color) == a
        assert g.resolve(V, "Black", scope=trim) == b
        with pytest.raises(AmbiguousName) as exc:
            g.resolve(V, "black")
        assert exc.value.matches == [a, b]
        with pytest.raises(DuplicateName):
            g.create_node(V, "BLACK", parent=color)

    def test_ids_fresh_and_monotone(self):
        g = GraphStore()
        ids = [g.create_node(T, f"t{i}") for i in range(5)]
        assert ids == sorted(ids) and len(set(ids)) == 5


class TestEdges:
    def test_double_typing(self):
        g = GraphStore()
        ram, storage = g.create_node(K, "RAM Capacity"), g.create_node(K, "Storage")
        v = g.create_node(V, "16GB", parent=ram)
        g.add_edge(ram, EdgeKind.HAS_VALUE, v)  # re-add is a no-op
        with pytest.raises(DoubleTyping):
            g.add_edge(storage, EdgeKind.HAS_VALUE, v)

    def test_unlicensed(self):
        g = GraphStore()
        k = g.create_node(K, "GPU")
        v = g.create_node(V, "NVIDIA GeForce", parent=k)
        p = g.create_node(P, "item")
        with pytest.raises(UnlicensedAssertion):
            g.add_edge(p, EdgeKind.HAS_ATTRIBUTE, v)
        t = g.create_node(T, "Desktop Computer")
        g.add_edge(p, EdgeKind.OF_TYPE, t)
        with pytest.raises(UnlicensedAssertion):
            g.add_edge(p, EdgeKind.HAS_ATTRIBUTE, v)
        g.add_edge(t, EdgeKind.HAS_KEY, k)
        g.add_edge(p, EdgeKind.HAS_ATTRIBUTE, v)
        g.validate()

    @pytest.mark.parametrize(
        "src, kind, dst",
        [("p", EdgeKind.HAS_KEY, "k"), ("t", EdgeKind.OF_TYPE, "t"), ("k", EdgeKind.HAS_ATTRIBUTE, "v"),
         ("p", EdgeKind.OF_TYPE, "k"), ("t", EdgeKind.HAS_VALUE, "v")],
    )
    def test_kind_mismatch(self, src, kind, dst):
        g, ids = appendix_subgraph()
        names = {"p": ids["item"], "t": ids["desktop"], "k": ids["gpu"], "v": ids["geforce"]}
        with pytest.raises(KindMismatch):
            g.add_edge(names[src], kind, names[dst])

    def test_unknown_node(self):
        g = GraphStore()
        t = g.create_node(T, "Lamp")
        with pytest.raises(UnknownNode):
            g.add_edge(99, EdgeKind.OF_TYPE, t)

    def test_idempotent(self):
        g, ids = appendix_subgraph()
        before = g.stats()
        g.add_edge(ids["item"], EdgeKind.OF_TYPE, ids["desktop"])
        assert g.stats() == before


class TestAppendixSubgraph:
    def test_constructible_and_counts(self):
        g, ids = appendix_subgraph()
        g.validate()
        # hand count: 4 nodes (one per kind), 4 edges (one per kind)
        assert g.stats() == {
            "nodes": {"Product": 1, "ProductType": 1, "AttributeKey": 1, "Value": 1},
            "edges": {"OfType": 1, "HasKey": 1, "HasValue": 1, "HasAttribute": 1},
        }
        assert g.keys_of_type(ids["desktop"]) == [ids["gpu"]]
        assert g.value_key(ids["geforce"]) == ids["gpu"]
        assert g.is_licensed(ids["item"], ids["geforce"])

    def test_empty_stats(self):
        s = GraphStore().stats()
        assert all(c == 0 for part in s.values() for c in part.values())


class TestMergeReplace:
    def test_merge_resolves_to_target(self):
        g = GraphStore()
        anchors = g.create_node(T, "Wall Anchors")
        before = g.stats()
        g.merge_into(anchors, "Wall Anchor", "a fastener")
        assert g.resolve(T, "wall anchor") == anchors
        assert g.node(anchors).synonyms == ["Wall Anchor"]
        assert g.stats() == before

    def test_self_merge_noop(self):
        g = GraphStore()
        t = g.create_node(T, "Lamp")
        g.merge_into(t, "LAMP")
        g.merge_into(t, "Lamps")
        g.merge_into(t, "lamps")
        assert g.node(t).synonyms == ["Lamps"]

    def test_grey_gray(self):
        g = GraphStore()
        color = g.create_node(K, "Color")
        grey = g.create_node(V, "Grey", parent=color)
        g.merge_into(grey, "gray")
        assert g.resolve(V, "Gray", scope=color) == grey
        assert g.node(grey).name == "Grey"

    def test_merge_conflict(self):
        g = GraphStore()
        a, b = g.create_node(T, "Mouse"), g.create_node(T, "Lamp")
        g.merge_into(b, "Lamps")
        with pytest.raises(CrossNodeConflict) as exc:
            g.merge_into(a, "lamps")
        assert exc.value.owner == b
        with pytest.raises(CrossNodeConflict):
            g.merge_into(a, "Lamp")

    def test_replace_label(self):
        g = GraphStore()
        t = g.create_node(T, "Tie-down loops")
        edges_before = sorted(map(str, g.edges()))
        g.replace_label(t, "Tie-Down Anchor")
        node = g.node(t)
        assert node.name == "Tie-Down Anchor"
        assert node.synonyms == ["Tie-down loops"]
        assert g.resolve(T, "tie-down loops") == t
        assert sorted(map(str, g.edges())) == edges_before

    def test_replace_identity_and_promote_synonym(self):
        g = GraphStore()
        t = g.create_node(T, "Mouse")
        g.replace_label(t, "Mouse")
        assert g.node(t).synonyms == []
        g.merge_into(t, "Mice")
        g.replace_label(t, "Mice")
        assert (g.node(t).name, g.node(t).synonyms) == ("Mice", ["Mouse"])
        g.replace_label(t, "MICE")  # case-only change keeps synonyms
        assert (g.node(t).name, g.node(t).synonyms) == ("MICE", ["Mouse"])
        g.validate()

    def test_replace_conflict(self):
        g = GraphStore()
        a, b = g.create_node(T, "Mouse"), g.create_node(T, "Lamp")
        with pytest.raises(CrossNodeConflict):
            g.replace_label(a, "lamp")
        assert g.node(a).name == "Mouse"


class TestTransaction:
    def test_rollback(self):
        g, ids = appendix_subgraph()
        before = g.dumps()
        with pytest.raises(RuntimeError):
            with g.transaction() as tx:
                t = g.create_node(T, "Laptop")
                g.merge_into(t, "Notebook")
                g.replace_label(ids["desktop"], "Desktop PC")
                g.add_edge(ids["item"], EdgeKind.OF_TYPE, t)
                assert tx.effects
                raise RuntimeError("boom")
        assert g.dumps() == before
        assert g.resolve(T, "notebook") is None
        assert g.resolve(T, "desktop computer") == ids["desktop"]

    def test_effects_recorded(self):
        g = GraphStore()
        with g.transaction() as tx:
            g.create_node(T, "Lamp")
        assert [e["op"] for e in tx.effects][:1] == ["create_node"]

    def test_no_nesting(self):
        g = GraphStore()
        with g.transaction():
            with pytest.raises(GraphError):
                with g.transaction():
                    pass


class TestAudit:
    def test_sequence(self):
        g = GraphStore()
        for i in range(3):
            rec = g.append_audit(candidate={"name": str(i)}, action="ADD", target=None, backend_id="x", timestamp=0.0)
            assert rec.sequence == i + 1
        g.validate()


# --------------------------------------------------------------- snapshots


def random_graph(rng: random.Random, n_nodes: int) -> GraphStore:
    g = GraphStore()
    types = [g.create_node(T, f"type {i}", f"d{i}") for i in range(max(1, n_nodes // 20))]
    keys = [g.create_node(K, f"key {i}") for i in range(max(1, n_nodes // 10))]
    for t in types:
        for k in rng.sample(keys, min(len(keys), 4)):
            g.add_edge(t, EdgeKind.HAS_KEY, k)
    values = []
    for i in range(n_nodes // 3):
        values.append(g.create_node(V, f"val {i}", parent=rng.choice(keys)))
    while len(g) < n_nodes:
        p = g.create_node(P, f"listing-{len(g)}", "title")
        t = rng.choice(types)
        g.add_edge(p, EdgeKind.OF_TYPE, t)
        for v in rng.sample(values, min(len(values), 3)):
            if g.is_licensed(p, v):
                g.add_edge(p, EdgeKind.HAS_ATTRIBUTE, v)
    for t in types[::3]:
        g.merge_into(t, f"alias of {t}")
    for t in types[1::4]:
        g.replace_label(t, f"renamed {t}")
    for v in values[::7]:
        g.merge_into(v, f"variant {v}")
    g.create_node(K, "Pressure Sensitivity", examples=["2048", "4096"])
    for i in range(25):
        g.append_audit(
            candidate={"kind": "ProductType", "name": f"c{i}"},
            action=rng.choice(["ADD", "MERGE", "DISCARD"]),
            target=rng.choice([None, types[0]]),
            backend_id="rule(theta=0.92)",
            timestamp=float(i + 1),
            notes=["n"] if i % 5 == 0 else [],
        )
    return g


def structural(g: GraphStore):
    d = g.to_dict()
    d["edges"] = sorted(json.dumps(e, sort_keys=True) for e in d["edges"])
    return d


class TestSnapshot:
    def test_empty_round_trip(self):
        g = GraphStore()
        assert structural(GraphStore.loads(g.dumps())) == structural(g)

    def test_format_fields(self):
        g, _ = appendix_subgraph()
        d = json.loads(g.dumps())
        assert set(d) == {"nodes", "edges", "audit", "meta"}
        assert set(d["meta"]) == {"format_version", "next_id", "next_seq"}
        assert set(d["nodes"][0]) == {"id", "kind", "name", "description", "synonyms", "created_at"}
        assert set(d["edges"][0]) == {"src", "kind", "dst"}

    def test_1k_round_trip(self, tmp_path):
        g = random_graph(random.Random(1), 1000)
        g.validate()
        assert len(g) >= 1000
        path = tmp_path / "snap.json"
        g.snapshot(str(path))
        h = GraphStore.load(str(path))
        assert structural(h) == structural(g)
        assert h.dumps() == g.dumps()
        for n in g.nodes():
            m = h.node(n.id)
            assert (m.kind, m.name, m.description, m.synonyms, m.created_at, m.examples) == (
                n.kind, n.name, n.description, n.synonyms, n.created_at, n.examples)
            for form in [n.name, *n.synonyms]:
                assert h.resolve(n.kind, form, scope=h.scope_of(n.id)) == n.id
        assert (h.next_id, h.next_seq) == (g.next_id, g.next_seq)
        # the loaded store keeps working
        assert h.create_node(T, "brand new") == g.next_id

    def test_truncated_load_leaves_graph_untouched(self, tmp_path):
        g, _ = appendix_subgraph()
        before = g.dumps()
        text = random_graph(random.Random(2), 50).dumps()
        with pytest.raises(ParseError) as exc:
            g.restore(io.StringIO(text[: len(text) // 2]))
        assert exc.value.position
        assert g.dumps() == before

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda d: d.pop("meta"),
            lambda d: d["meta"].update(format_version=99),
            lambda d: d["edges"].append({"src": 1, "kind": "OfType", "dst": 999}),
            lambda d: d["nodes"].append(dict(d["nodes"][0])),
            lambda d: d["nodes"][0].update(name="   "),
            lambda d: d["edges"].append({"src": d["edges"][0]["src"], "kind": "Bogus", "dst": 1}),
            lambda d: d["meta"].update(next_id="7"),
        ],
    )
    def test_malformed(self, mutate):
        g, _ = appendix_subgraph()
        d = g.to_dict()
        mutate(d)
        with pytest.raises(ParseError):
            GraphStore.loads(json.dumps(d))

    def test_invalid_json_position(self):
        with pytest.raises(ParseError) as exc:
            GraphStore.loads('{"nodes": [')
        assert "line 1" in exc.value.position


# ------------------------------------------------------ property: mutations

NAMES = ["Black", "black ", "Grey", "gray", "Mouse", "Mice", "Lamp", "lamps", "x", "Steel"]

op = st.one_of(
    st.tuples(st.just("create"), st.sampled_from(list(NodeKind)), st.sampled_from(NAMES), st.integers(1, 30)),
    st.tuples(st.just("edge"), st.integers(1, 30), st.sampled_from(list(EdgeKind)), st.integers(1, 30)),
    st.tuples(st.just("merge"), st.integers(1, 30), st.sampled_from(NAMES)),
    st.tuples(st.just("replace"), st.integers(1, 30), st.sampled_from(NAMES)),
    st.tuples(st.just("tx_fail"), st.sampled_from(NAMES)),
)


def apply_op(g: GraphStore, o):
    try:
        if o[0] == "create":
            _, kind, name, parent = o
            g.create_node(kind, name, parent=parent if kind is V else None)
        elif o[0] == "edge":
            g.add_edge(o[1], o[2], o[3])
        elif o[0] == "merge":
            g.merge_into(o[1], o[2])
        elif o[0] == "replace":
            g.replace_label(o[1], o[2])
        else:
            with g.transaction():
                g.create_node(T, o[1] + " tx")
                raise GraphError("abort")
    except GraphError:
        pass


@settings(max_examples=200)
@given(st.lists(op, max_size=60))
def test_random_mutations_keep_invariants(ops):
    g = GraphStore()
    seen_nodes = 0
    for o in ops:
        before_edges = sorted(map(str, g.edges()))
        apply_op(g, o)
        g.validate()
        assert len(g) >= seen_nodes
        seen_nodes = len(g)
        if o[0] == "replace":
            assert sorted(map(str, g.edges())) == before_edges
    # resolve is a function over names and synonyms
    claims = {}
    for n in g.nodes():
        for form in [n.name, *n.synonyms]:
            key = (n.kind, g.scope_of(n.id), normalize(form))
            assert claims.setdefault(key, n.id) == n.id
            assert g.resolve(n.kind, form, scope=g.scope_of(n.id)) == n.id
    assert structural(GraphStore.loads(g.dumps())) == structural(g)


@given(st.text(max_size=20))
def test_normalize_idempotent(s):
    assert normalize(normalize(s)) == normalize(s)
