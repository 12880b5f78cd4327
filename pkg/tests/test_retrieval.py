from __future__ import annotations

import hashlib
import math
import random

import numpy as np
import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from autopkg.errors import ProviderFailure
from autopkg.graph import NodeKind
from autopkg.retrieval import (
    FALLBACK_DIM,
    FALLBACK_SEED,
    FallbackEmbedder,
    RemoteEmbedder,
    VectorIndex,
    cosine,
    fallback_embed,
)
from oracles import brute_top_k

T, K, V = NodeKind.PRODUCT_TYPE, NodeKind.ATTRIBUTE_KEY, NodeKind.VALUE


def oracle_embed(text: str) -> list[float]:
    """Plain-Python restatement of the documented fallback embedding."""
    norm = " ".join(text.casefold().split())
    counts = [0.0] * 256
    if not norm:
        counts[0] = 1.0
        return counts
    padded = "#" + norm + "#"
    for i in range(len(padded) - 2):
        h = hashlib.blake2b(padded[i : i + 3].encode(), digest_size=8, key=FALLBACK_SEED).digest()
        counts[int.from_bytes(h, "little") % 256] += 1.0
    length = math.sqrt(sum(c * c for c in counts))
    return [c / length for c in counts]


def oracle_cos(a: str, b: str) -> float:
    return sum(x * y for x, y in zip(oracle_embed(a), oracle_embed(b)))


class TestFallback:
    def test_deterministic(self):
        a, b = fallback_embed("Wall Anchor"), fallback_embed("Wall Anchor")
        assert np.array_equal(a, b)
        assert a.shape == (FALLBACK_DIM,)

    def test_matches_oracle(self):
        for s in ["wall anchor", "x", "", "Pen Mouse", "°C ünïcode"]:
            assert np.allclose(fallback_embed(s), oracle_embed(s), atol=1e-15)

    def test_unit_norm(self):
        assert abs(np.linalg.norm(fallback_embed("x")) - 1.0) <= 1e-6

    def test_empty_is_basis_vector(self):
        v = fallback_embed("   ")
        assert v[0] == 1.0 and np.count_nonzero(v) == 1

    def test_normalization_invariant(self):
        assert np.array_equal(fallback_embed("  WALL   anchor "), fallback_embed("wall anchor"))

    def test_plural_closer_than_unrelated(self):
        near, far = oracle_cos("wall anchor", "wall anchors"), oracle_cos("wall anchor", "battery holder")
        assert near > far
        e = fallback_embed
        assert cosine(e("wall anchor"), e("wall anchors")) == pytest.approx(near, abs=1e-12)
        assert cosine(e("wall anchor"), e("battery holder")) == pytest.approx(far, abs=1e-12)

    @given(st.text(max_size=40))
    def test_unit_norm_property(self, s):
        assert abs(np.linalg.norm(fallback_embed(s)) - 1.0) <= 1e-6

    def test_embedder_object(self):
        e = FallbackEmbedder()
        assert e.dimension == 256 and e.provider_id == "fallback-3gram-256"


class TestIndex:
    def test_empty(self):
        assert VectorIndex().top_k(T, "anything") == []

    def test_wall_anchor(self):
        idx = VectorIndex()
        for i, name in [(1, "Wall Anchors"), (2, "Tie-Down Anchor"), (3, "Concrete Anchor")]:
            idx.index_upsert(T, i, name)
        hits = idx.top_k(T, "Wall Anchor", k=10)
        assert len(hits) == 3
        assert hits[0].node_id == 1
        assert [h.rank for h in hits] == [1, 2, 3]
        expected = sorted(((-oracle_cos("Wall Anchor", n), i) for i, n in
                           [(1, "Wall Anchors"), (2, "Tie-Down Anchor"), (3, "Concrete Anchor")]))
        assert [h.node_id for h in hits] == [i for _, i in expected]

    def test_self_query_rank_one(self):
        idx = VectorIndex()
        for i, name in enumerate(["Lamp", "Desk Lamp", "Lamp Shade", "Mouse"], start=1):
            idx.index_upsert(T, i, name)
        hits = idx.top_k(T, "Lamp Shade")
        assert hits[0].node_id == 3
        assert hits[0].score >= max(h.score for h in hits)
        assert hits[0].score == pytest.approx(1.0)

    def test_tie_order(self):
        idx = VectorIndex()
        for i in (9, 4, 7):
            idx.index_upsert(T, i, "Same Name")
        hits = idx.top_k(T, "same name")
        assert [h.node_id for h in hits] == [4, 7, 9]
        assert len({h.score for h in hits}) == 1

    def test_overwrite(self):
        idx = VectorIndex()
        idx.index_upsert(T, 1, "Tie-down loops")
        idx.index_upsert(T, 1, "Tie-Down Anchor")
        assert idx.size(T) == 1
        assert np.array_equal(idx.vectors(T)[1], fallback_embed("Tie-Down Anchor"))

    def test_partitions(self):
        idx = VectorIndex()
        idx.index_upsert(T, 1, "Color")
        idx.index_upsert(K, 2, "Color")
        idx.index_upsert(V, 3, "Black", scope=2)
        idx.index_upsert(V, 4, "Black", scope=5)
        assert [h.node_id for h in idx.top_k(T, "Color")] == [1]
        assert [h.node_id for h in idx.top_k(K, "Color")] == [2]
        assert [h.node_id for h in idx.top_k(V, "Black", scope=2)] == [3]
        assert idx.top_k(V, "Black") == []
        idx.clear()
        assert idx.size(T) == 0

    def test_k_validation_and_truncation(self):
        idx = VectorIndex()
        for i in range(20):
            idx.index_upsert(T, i + 1, f"type {i}")
        assert len(idx.top_k(T, "type")) == 10
        assert len(idx.top_k(T, "type", k=3)) == 3
        with pytest.raises(ValueError):
            idx.top_k(T, "type", k=0)

    def test_provider_failure_carries_node_id(self):
        class Broken:
            dimension, provider_id = 4, "broken"

            def embed(self, text):
                raise RuntimeError("down")

        with pytest.raises(ProviderFailure) as exc:
            VectorIndex(Broken()).index_upsert(T, 42, "x")
        assert exc.value.node_id == 42


WORDS = ["anchor", "wall", "mouse", "pen", "lamp", "desk", "battery", "holder", "steel", "usb"]


def _check_against_brute(idx, vectors, query, k):
    hits = idx.top_k(T, query, k=k)
    q = fallback_embed(query)
    want = brute_top_k(vectors, q, k)
    assert len(hits) == len(want) == min(k, len(vectors))
    got_ids = [h.node_id for h in hits]
    if got_ids != want:
        # only float-level near-ties may reorder
        for h, w in zip(hits, want):
            assert abs(h.score - float(np.dot(vectors[w], q))) <= 1e-12
    for a, b in zip(hits, hits[1:]):
        assert (a.score > b.score) or (a.score == b.score and a.node_id < b.node_id)


@settings(max_examples=40)
@given(
    st.lists(st.lists(st.sampled_from(WORDS), min_size=1, max_size=3).map(" ".join), min_size=0, max_size=200),
    st.lists(st.sampled_from(WORDS), min_size=1, max_size=3).map(" ".join),
    st.integers(1, 25),
)
def test_top_k_equals_brute_force(names, query, k):
    idx = VectorIndex()
    vectors = {}
    for i, n in enumerate(names, start=1):
        idx.index_upsert(T, i, n)
        vectors[i] = fallback_embed(n)
    if not names:
        assert idx.top_k(T, query, k=k) == []
        return
    _check_against_brute(idx, vectors, query, k)


def test_top_k_equals_brute_force_5k():
    rng = random.Random(5)
    idx = VectorIndex()
    vectors = {}
    ids = rng.sample(range(1, 50_000), 5000)
    for i in ids:
        name = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 3))) + f" {rng.randint(0, 99)}"
        idx.index_upsert(T, i, name)
        vectors[i] = fallback_embed(name)
    for query in ["wall anchor", "usb 7", "steel desk lamp", "x"]:
        for k in (1, 10, 50):
            _check_against_brute(idx, vectors, query, k)


class FakeResponse:
    def __init__(self, body, status=200):
        self.body, self.status = body, status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status}")

    def json(self):
        return self.body


class TestRemote:
    def test_from_env(self):
        assert RemoteEmbedder.from_env({}) is None
        r = RemoteEmbedder.from_env({"EMBED_ENDPOINT": "http://e", "EMBED_MODEL": "m", "EMBED_API_KEY": "k"})
        assert (r.endpoint, r.model, r.api_key) == ("http://e", "m", "k")

    def test_wire_format_and_cache(self):
        calls = []

        def post(url, json, headers, timeout):
            calls.append((url, json, headers))
            return FakeResponse({"data": [{"embedding": [3.0, 4.0]}]})

        r = RemoteEmbedder("http://e", "m", "secret", post=post)
        v = r.embed("  Wall Anchor ")
        assert np.allclose(v, [0.6, 0.8])
        r.embed("wall anchor")
        assert len(calls) == 1
        assert calls[0][1] == {"input": ["wall anchor"], "model": "m"}
        assert calls[0][2]["Authorization"] == "Bearer secret"
        assert r.dimension == 2

    def test_one_retry_then_failure(self):
        calls, sleeps = [], []

        def post(*a, **kw):
            calls.append(1)
            return FakeResponse({}, status=503)

        r = RemoteEmbedder("http://e", "m", post=post, sleep=sleeps.append)
        with pytest.raises(ProviderFailure):
            r.embed("x")
        assert len(calls) == 2 and len(sleeps) == 1

    def test_transient_recovery(self):
        replies = [FakeResponse({}, status=500), FakeResponse({"embeddings": [[1.0, 0.0]]})]
        r = RemoteEmbedder("http://e", "m", post=lambda *a, **kw: replies.pop(0), sleep=lambda s: None)
        assert np.allclose(r.embed("x"), [1.0, 0.0])
