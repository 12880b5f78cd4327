"""Dense retrieval over canonical node names.

The index is an exact brute-force cosine scan, partitioned by node kind (and
by typing key for Value nodes).  Providers turn a name into a unit vector; the
built-in :func:`fallback_embed` needs no network and is bit-for-bit
reproducible across machines.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Protocol, Sequence

import numpy as np
import requests

from autopkg.errors import ProviderFailure
from autopkg.graph import NodeKind, normalize

logger = logging.getLogger(__name__)

FALLBACK_DIM = 256
# blake2b key for 3-gram bucketing; changing it changes every vector
FALLBACK_SEED = b"autopkg-3gram-v1"
DEFAULT_K = 10


class EmbeddingProvider(Protocol):
    dimension: int
    provider_id: str

    def embed(self, text: str) -> np.ndarray: ...


def _trigrams(norm: str) -> list[str]:
    # word-boundary markers let 1- and 2-character strings produce grams
    padded = f"#{norm}#"
    return [padded[i : i + 3] for i in range(len(padded) - 2)] if norm else []


def _bucket(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=FALLBACK_SEED).digest()
    return int.from_bytes(digest, "little") % FALLBACK_DIM


@lru_cache(maxsize=65536)
def _fallback_cached(norm: str) -> bytes:
    vec = np.zeros(FALLBACK_DIM, dtype=np.float64)
    grams = _trigrams(norm)
    if not grams:
        vec[0] = 1.0
        return vec.tobytes()
    for g in grams:
        vec[_bucket(g)] += 1.0
    vec /= np.linalg.norm(vec)
    return vec.tobytes()


def fallback_embed(text: str) -> np.ndarray:
    """Hashed character-trigram embedding of the normalized text.

    256 dimensions, L2-normalized.  Text with no trigrams (empty after
    normalization) maps to the first basis vector.
    """
    return np.frombuffer(_fallback_cached(normalize(text)), dtype=np.float64).copy()


class FallbackEmbedder:
    dimension = FALLBACK_DIM
    provider_id = "fallback-3gram-256"

    def embed(self, text: str) -> np.ndarray:
        return fallback_embed(text)


class RemoteEmbedder:
    """HTTP embedding service.

    Sends ``{"input": [text], "model": model}`` and accepts either an
    OpenAI-style ``{"data": [{"embedding": [...]}]}`` body or
    ``{"embeddings": [[...]]}``.  Results are cached per text so repeated
    lookups stay deterministic even if the service is not.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 30.0,
        post: Callable[..., Any] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self._post = post or requests.post
        self._sleep = sleep
        self._cache: dict[str, np.ndarray] = {}
        self.dimension = 0
        self.provider_id = f"remote:{model}"

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> RemoteEmbedder | None:
        env = dict(os.environ if env is None else env)
        endpoint = env.get("EMBED_ENDPOINT")
        if not endpoint:
            return None
        return cls(endpoint, env.get("EMBED_MODEL", "default"), env.get("EMBED_API_KEY"))

    def embed(self, text: str) -> np.ndarray:
        norm = normalize(text)
        if norm not in self._cache:
            self._cache[norm] = self._request(norm)
        return self._cache[norm].copy()

    def _request(self, text: str) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"input": [text], "model": self.model}
        last: Exception | None = None
        for attempt in range(2):
            try:
                resp = self._post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                body = resp.json()
                if "data" in body:
                    raw = body["data"][0]["embedding"]
                else:
                    raw = body["embeddings"][0]
                vec = np.asarray(raw, dtype=np.float64)
                norm = np.linalg.norm(vec)
                if vec.ndim != 1 or norm == 0:
                    raise ValueError("degenerate embedding")
                if self.dimension and vec.shape[0] != self.dimension:
                    raise ValueError(f"dimension changed to {vec.shape[0]}")
                self.dimension = vec.shape[0]
                return vec / norm
            except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                if attempt == 0:
                    self._sleep(0.5)
        raise ProviderFailure(f"embedding request failed: {last}")


@dataclass(frozen=True)
class RetrievalHit:
    node_id: int
    score: float
    rank: int


class _Partition:
    def __init__(self, dim: int) -> None:
        self.ids: list[int] = []
        self.rows: dict[int, int] = {}
        self.matrix = np.zeros((16, dim), dtype=np.float64)

    def upsert(self, node_id: int, vec: np.ndarray) -> None:
        row = self.rows.get(node_id)
        if row is None:
            row = len(self.ids)
            if row == self.matrix.shape[0]:
                grown = np.zeros((row * 2, self.matrix.shape[1]), dtype=np.float64)
                grown[:row] = self.matrix
                self.matrix = grown
            self.ids.append(node_id)
            self.rows[node_id] = row
        self.matrix[row] = vec

    def top_k(self, query: np.ndarray, k: int) -> list[RetrievalHit]:
        n = len(self.ids)
        if n == 0:
            return []
        # row-wise reduction, not BLAS gemv: identical rows must score
        # bit-identically for the id tie-break to apply
        scores = np.einsum("ij,j->i", self.matrix[:n], query)
        ids = np.asarray(self.ids)
        order = np.lexsort((ids, -scores))[:k]
        return [
            RetrievalHit(int(ids[i]), float(scores[i]), rank)
            for rank, i in enumerate(order, start=1)
        ]


class VectorIndex:
    """Exact top-k cosine search, one partition per (kind, scope).

    ``scope`` is the typing AttributeKey id for Value nodes and ``None`` for
    every other kind.  Hits come back by descending score, ties by ascending
    node id.
    """

    def __init__(self, provider: EmbeddingProvider | None = None) -> None:
        self.provider = provider or FallbackEmbedder()
        self._parts: dict[tuple[NodeKind, int | None], _Partition] = {}
        self._lock = threading.Lock()

    def _embed(self, text: str, node_id: int | None = None) -> np.ndarray:
        try:
            return np.asarray(self.provider.embed(text), dtype=np.float64)
        except ProviderFailure as exc:
            raise ProviderFailure(str(exc), node_id) from exc
        except Exception as exc:
            raise ProviderFailure(f"embedding failed: {exc}", node_id) from exc

    def index_upsert(self, kind: NodeKind, node_id: int, name: str, scope: int | None = None) -> None:
        vec = self._embed(name, node_id)
        with self._lock:
            part = self._parts.get((kind, scope))
            if part is None:
                part = self._parts[(kind, scope)] = _Partition(vec.shape[0])
            part.upsert(node_id, vec)

    def top_k(
        self, kind: NodeKind, query: str, k: int = DEFAULT_K, scope: int | None = None
    ) -> list[RetrievalHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        part = self._parts.get((kind, scope))
        if part is None or not part.ids:
            return []
        return part.top_k(self._embed(query), k)

    def size(self, kind: NodeKind, scope: int | None = None) -> int:
        part = self._parts.get((kind, scope))
        return 0 if part is None else len(part.ids)

    def vectors(self, kind: NodeKind, scope: int | None = None) -> dict[int, np.ndarray]:
        part = self._parts.get((kind, scope))
        if part is None:
            return {}
        return {i: part.matrix[r].copy() for i, r in part.rows.items()}

    def clear(self) -> None:
        with self._lock:
            self._parts.clear()


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
