"""Text embedding providers and an exact cosine-similarity index."""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

DEFAULT_DIMENSION = 384
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class EmbeddingError(RuntimeError):
    pass


class EmbeddingTransportError(EmbeddingError):
    """Remote provider unreachable or timed out; safe to retry."""


class DimensionMismatch(ValueError):
    pass


class EmptyIndexError(LookupError):
    """Query against an index with no entries."""


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    norm: float

    @classmethod
    def of(cls, values: Sequence[float] | np.ndarray) -> EmbeddingVector:
        arr = np.asarray(values, dtype=np.float64)
        return cls(arr, float(np.linalg.norm(arr)))

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    def normalized(self) -> EmbeddingVector:
        if self.norm == 0.0:
            return self
        unit = self.values / self.norm
        return EmbeddingVector(unit, float(np.linalg.norm(unit)))


class Embedder(Protocol):
    dimension: int

    @property
    def identity(self) -> str: ...

    def embed(self, text: str) -> EmbeddingVector: ...


class HashingEmbedder:
    """Deterministic bag-of-tokens embedder needing no model weights.

    Lowercased text is split on non-alphanumerics; each token is hashed
    (blake2b keyed by ``seed``) into one of ``dimension`` buckets with
    term-frequency weight, and the result is L2-normalized.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)

    @property
    def identity(self) -> str:
        return f"hashing:d={self.dimension}:seed={self.seed}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, text: str) -> EmbeddingVector:
        values = np.zeros(self.dimension, dtype=np.float64)
        for tok in _TOKEN_SPLIT.split(text.lower()):
            if tok:
                values[self.bucket(tok)] += 1.0
        return EmbeddingVector.of(values).normalized()


class OllamaEmbedder:
    """Client for an Ollama-compatible ``/api/embeddings`` route."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dimension: int = DEFAULT_DIMENSION,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    @property
    def identity(self) -> str:
        return f"ollama:{self.model}:d={self.dimension}"

    def embed(self, text: str) -> EmbeddingVector:
        payload = {"model": self.model, "prompt": text}
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post("/api/embeddings", json=payload)
                break
            except httpx.TransportError as e:
                if attempt == self.retries:
                    raise EmbeddingTransportError(
                        f"embedding endpoint {self.base_url} unreachable: {e}"
                    ) from e
                time.sleep(self.backoff * 2**attempt)
        if resp.status_code >= 400:
            raise EmbeddingError(f"embedding request failed ({resp.status_code}): {resp.text[:200]}")
        values = resp.json().get("embedding")
        if not isinstance(values, list):
            raise EmbeddingError("embedding response carries no 'embedding' list")
        if len(values) != self.dimension:
            raise DimensionMismatch(
                f"provider returned {len(values)} dimensions, configured {self.dimension}"
            )
        return EmbeddingVector.of(values).normalized()


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimension {a.dimension} != {b.dimension}")
    if a.norm == 0.0 or b.norm == 0.0:
        return 0.0
    return float(np.dot(a.values / a.norm, b.values / b.norm))


class VectorIndex:
    """Exact flat index over L2-normalized vectors.

    Add entries, then ``freeze()``; a frozen index is read-only and may be
    queried from several threads at once.
    """

    def __init__(self, dimension: int, provider: str = ""):
        self.dimension = dimension
        self.provider = provider
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._pos: dict[str, int] = {}
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def doc_ids(self) -> list[str]:
        return list(self._ids)

    @property
    def frozen(self) -> bool:
        return self._matrix is not None

    def add(self, doc_id: str, vector: EmbeddingVector) -> None:
        if self.frozen:
            raise RuntimeError("index is frozen")
        if vector.dimension != self.dimension:
            raise DimensionMismatch(f"vector dimension {vector.dimension} != index {self.dimension}")
        if doc_id in self._pos:
            raise ValueError(f"duplicate doc_id {doc_id}")
        self._pos[doc_id] = len(self._ids)
        self._ids.append(doc_id)
        self._rows.append(vector.normalized().values)

    def freeze(self) -> VectorIndex:
        if self._rows:
            matrix = np.vstack(self._rows)
        else:
            matrix = np.zeros((0, self.dimension))
        matrix.setflags(write=False)
        self._matrix = matrix
        self._rows = []
        return self

    def _frozen_matrix(self) -> np.ndarray:
        if self._matrix is None:
            self.freeze()
        assert self._matrix is not None
        return self._matrix

    def vector(self, doc_id: str) -> EmbeddingVector:
        return EmbeddingVector.of(self._frozen_matrix()[self._pos[doc_id]])

    def similarity(self, doc_id: str, query: EmbeddingVector) -> float:
        return cosine_similarity(self.vector(doc_id), query)

    def top_k(self, query: EmbeddingVector, k: int) -> list[tuple[str, float]]:
        """Most similar entries, descending by similarity, ties by ascending doc_id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if query.dimension != self.dimension:
            raise DimensionMismatch(f"query dimension {query.dimension} != index {self.dimension}")
        matrix = self._frozen_matrix()
        if not len(self._ids):
            raise EmptyIndexError("vector index is empty")
        if query.norm == 0.0:
            scores = np.zeros(len(self._ids))
        else:
            # row-wise reduction: identical rows must score identically, which a
            # blocked BLAS product does not guarantee
            scores = np.sum(matrix * (query.values / query.norm), axis=1)
        # zero rows stay zero under the product, matching cosine_similarity
        order = sorted(range(len(self._ids)), key=lambda i: (-scores[i], self._ids[i]))
        return [(self._ids[i], float(scores[i])) for i in order[:k]]

    def save(self, directory: str | Path) -> None:
        """Write ``index.json`` (dimension, provider, ids) and ``vectors.npy``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        header = {"dimension": self.dimension, "provider": self.provider, "doc_ids": self._ids}
        (out / "index.json").write_text(json.dumps(header, indent=1) + "\n", encoding="utf-8")
        np.save(out / "vectors.npy", np.ascontiguousarray(self._frozen_matrix()), allow_pickle=False)

    @classmethod
    def load(cls, directory: str | Path) -> VectorIndex:
        src = Path(directory)
        header = json.loads((src / "index.json").read_text(encoding="utf-8"))
        matrix = np.load(src / "vectors.npy", allow_pickle=False)
        index = cls(header["dimension"], header["provider"])
        if matrix.shape != (len(header["doc_ids"]), index.dimension) and len(header["doc_ids"]):
            raise DimensionMismatch(f"stored matrix shape {matrix.shape} disagrees with header")
        index._ids = list(header["doc_ids"])
        index._pos = {d: i for i, d in enumerate(index._ids)}
        matrix = matrix.reshape(len(index._ids), index.dimension)
        matrix.setflags(write=False)
        index._matrix = matrix
        return index


def build_index(documents, embedder: Embedder) -> VectorIndex:
    index = VectorIndex(embedder.dimension, embedder.identity)
    for doc in documents:
        index.add(doc.doc_id, embedder.embed(doc.index_text))
    return index.freeze()
