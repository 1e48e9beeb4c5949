"""Exemplar retrieval: deterministic text embedding, an exact cosine top-k
index over scored essays, and lossless index persistence.

Corpora stay under ~10^4 essays, so retrieval is an exhaustive scan; there is
no approximate structure to drift from the brute-force answer.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataset import Essay

INDEX_FORMAT_VERSION = 1


class RetrievalError(RuntimeError):
    pass


class DimensionMismatchError(RetrievalError):
    pass


class ZeroVectorError(RetrievalError):
    pass


class MissingGoldBandError(RetrievalError):
    pass


class Embedder(Protocol):
    id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic feature-hashing embedder over character n-grams.

    Buckets and signs come from md5 of the n-gram bytes, so vectors are
    identical across processes and platforms; output is L2-normalized.
    """

    def __init__(self, dim: int = 512, ngram: int = 3):
        if dim <= 0 or ngram <= 0:
            raise ValueError("dim and ngram must be positive")
        self.dim = dim
        self.ngram = ngram
        self.id = f"hashing-ngram-v1:n={ngram}:dim={dim}"

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        vector = np.zeros(self.dim, dtype=np.float64)
        grams = (
            [text[i : i + self.ngram] for i in range(len(text) - self.ngram + 1)]
            if len(text) >= self.ngram
            else [text]
        )
        for gram in grams:
            digest = hashlib.md5(gram.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vector[bucket] += sign
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            vector[0] = 1.0
            norm = 1.0
        return vector / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Standard cosine similarity in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dims {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cosine undefined for a zero vector")
    return float(np.dot(a, b) / (norm_a * norm_b))


def embedding_query_text(essay: Essay) -> str:
    """Retrieval keys on prompt + essay so neighbours favour the same topic."""
    if essay.prompt_text:
        return f"{essay.prompt_text}\n{essay.essay_text}"
    return essay.essay_text


@dataclass
class RetrievalIndex:
    """Immutable exemplar index: (essay id, vector) entries plus the corpus
    handle that resolves ids back to essays."""

    embedder_id: str
    dim: int
    ids: list[str]
    vectors: np.ndarray  # shape (n, dim)
    corpus: dict[str, Essay]
    built_at: float = 0.0

    def __len__(self) -> int:
        return len(self.ids)

    def essay(self, essay_id: str) -> Essay:
        return self.corpus[essay_id]

    def retrieve(self, query_vector: np.ndarray, k: int, exclude_id: str | None = None) -> list[tuple[str, float]]:
        """Top-k entries by descending cosine, ties broken by ascending id;
        the query's own id is never returned."""
        if k <= 0:
            return []
        query_vector = np.asarray(query_vector, dtype=np.float64)
        if query_vector.shape != (self.dim,):
            raise DimensionMismatchError(
                f"query dim {query_vector.shape} vs index dim {self.dim}"
            )
        scored = [
            (self.ids[i], cosine(query_vector, self.vectors[i]))
            for i in range(len(self.ids))
            if self.ids[i] != exclude_id
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:k]

    def retrieve_for_essay(self, essay: Essay, k: int, embedder: Embedder) -> list[tuple[str, float]]:
        if embedder.id != self.embedder_id:
            raise RetrievalError(
                f"index built with {self.embedder_id!r}, queried with {embedder.id!r}"
            )
        vector = embedder.embed(embedding_query_text(essay))
        return self.retrieve(vector, k, exclude_id=essay.id)

    def save(self, path: str | Path) -> None:
        """Persist as JSONL: a header line, then one (id, vector) per line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            header = {
                "format_version": INDEX_FORMAT_VERSION,
                "embedder_id": self.embedder_id,
                "dim": self.dim,
                "count": len(self.ids),
                "built_at": self.built_at,
            }
            handle.write(json.dumps(header, sort_keys=True) + "\n")
            for i, essay_id in enumerate(self.ids):
                row = {"id": essay_id, "vector": self.vectors[i].tolist()}
                handle.write(json.dumps(row) + "\n")

    @classmethod
    def load(cls, path: str | Path, corpus: dict[str, Essay], expected_embedder_id: str | None = None) -> "RetrievalIndex":
        path = Path(path)
        with open(path, encoding="utf-8") as handle:
            header = json.loads(handle.readline())
            if header.get("format_version") != INDEX_FORMAT_VERSION:
                raise RetrievalError(f"unsupported index format {header.get('format_version')}")
            if expected_embedder_id and header["embedder_id"] != expected_embedder_id:
                raise RetrievalError(
                    f"index embedder {header['embedder_id']!r} does not match "
                    f"{expected_embedder_id!r}"
                )
            ids: list[str] = []
            rows: list[list[float]] = []
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                ids.append(row["id"])
                rows.append(row["vector"])
        if len(ids) != header["count"]:
            raise RetrievalError(f"index count {header['count']} != {len(ids)} rows")
        vectors = (
            np.array(rows, dtype=np.float64)
            if rows
            else np.zeros((0, header["dim"]), dtype=np.float64)
        )
        for essay_id in ids:
            if essay_id not in corpus:
                raise RetrievalError(f"index id {essay_id!r} not resolvable in corpus")
        return cls(
            embedder_id=header["embedder_id"],
            dim=header["dim"],
            ids=ids,
            vectors=vectors,
            corpus=corpus,
            built_at=header.get("built_at", 0.0),
        )


def build_index(essays: Sequence[Essay], embedder: Embedder) -> RetrievalIndex:
    """Embed every essay of a scored corpus into a fresh index."""
    ids: list[str] = []
    vectors: list[np.ndarray] = []
    corpus: dict[str, Essay] = {}
    for essay in essays:
        if essay.overall is None:
            raise MissingGoldBandError(f"essay {essay.id!r} has no overall band")
        vector = embedder.embed(embedding_query_text(essay))
        if vector.shape != (embedder.dim,):
            raise DimensionMismatchError(
                f"embedder returned {vector.shape}, expected ({embedder.dim},)"
            )
        ids.append(essay.id)
        vectors.append(vector)
        corpus[essay.id] = essay
    matrix = (
        np.stack(vectors) if vectors else np.zeros((0, embedder.dim), dtype=np.float64)
    )
    return RetrievalIndex(
        embedder_id=embedder.id,
        dim=embedder.dim,
        ids=ids,
        vectors=matrix,
        corpus=corpus,
        built_at=time.time(),
    )
