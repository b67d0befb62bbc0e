"""Embedding store over operation knowledge with exhaustive TopK retrieval.

The reference embedder is hashed bag-of-words: lowercase word tokens are
hashed (CRC-32) into d=256 buckets, bucket counts form the vector, and
the vector is L2-normalized. It is deterministic, dependency-free and
order-invariant, which keeps retrieval replayable; remote embedding
services can be plugged in behind EmbedderSpec.

Bases here hold tens of items, so retrieval is an exhaustive scan — no
approximate index.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateKey,
    EmbedError,
    EmptyKnowledgeBase,
    IoError,
    SchemaError,
    ZeroVector,
)

DEFAULT_DIMENSION = 256
HASH_BOW_ID = "hash-bow-256"

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class EmbedderSpec:
    """Identifies an embedding function; ``fn`` overrides the reference one."""

    id: str = HASH_BOW_ID
    dimension: int = DEFAULT_DIMENSION
    fn: Callable[[str], np.ndarray] | None = None


def embed(text: str, embedder: EmbedderSpec | None = None) -> np.ndarray:
    """Unit-normalized d-vector for ``text``; EmbedError on no tokens."""
    embedder = embedder or EmbedderSpec()
    if embedder.fn is not None:
        vec = np.asarray(embedder.fn(text), dtype=np.float64)
    else:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise EmbedError(f"no tokens to embed in {text!r}")
        vec = np.zeros(embedder.dimension, dtype=np.float64)
        for token in tokens:
            vec[zlib.crc32(token.encode("utf-8")) % embedder.dimension] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise EmbedError(f"embedding of {text!r} is the zero vector")
    return vec / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|), in [-1, 1]; identical vectors score exactly 1.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector dims differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    if np.array_equal(a, b):
        return 1.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class KnowledgeItem:
    key: str
    task_description: str
    verification_prompt: str = ""
    success_examples: list[str] = field(default_factory=list)
    failure_examples: list[str] = field(default_factory=list)
    embedding: np.ndarray | None = None


@dataclass
class KnowledgeBase:
    """Immutable-after-load collection of embedded knowledge items."""

    items: dict[str, KnowledgeItem]
    embedder_id: str = HASH_BOW_ID
    dimension: int = DEFAULT_DIMENSION
    embedder_spec: EmbedderSpec | None = None  # kept so queries reuse a custom fn

    def query_embedder(self) -> EmbedderSpec:
        return self.embedder_spec or EmbedderSpec(id=self.embedder_id, dimension=self.dimension)

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class RetrievedSet:
    """TopK retrieval result: (key, similarity) sorted desc, keys ascending on ties."""

    entries: list[tuple[str, float]]
    query_echo: str

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]


def build_knowledge_base(items: list[KnowledgeItem], embedder: EmbedderSpec | None = None) -> KnowledgeBase:
    """Embed (where missing) and index items; DuplicateKey on key clashes."""
    embedder = embedder or EmbedderSpec()
    indexed: dict[str, KnowledgeItem] = {}
    for item in items:
        if item.key in indexed:
            raise DuplicateKey(f"duplicate knowledge key {item.key!r}")
        if item.embedding is None:
            text = f"{item.task_description} {item.verification_prompt}".strip()
            item.embedding = embed(text, embedder)
        else:
            item.embedding = np.asarray(item.embedding, dtype=np.float64)
            norm = float(np.linalg.norm(item.embedding))
            if abs(norm - 1.0) > _UNIT_NORM_TOL:
                if norm == 0.0:
                    raise ZeroVector(f"item {item.key!r} has a zero embedding")
                item.embedding = item.embedding / norm
        if item.embedding.shape != (embedder.dimension,):
            raise DimensionMismatch(
                f"item {item.key!r} embedding has dim {item.embedding.shape}, base uses {embedder.dimension}"
            )
        indexed[item.key] = item
    return KnowledgeBase(
        items=indexed, embedder_id=embedder.id, dimension=embedder.dimension, embedder_spec=embedder
    )


def load_knowledge_base(path: str | Path, embedder: EmbedderSpec | None = None) -> KnowledgeBase:
    """Load the JSON knowledge file; embeddings are always recomputed."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read knowledge base {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"knowledge base {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "items" not in data:
        raise SchemaError("knowledge base file must contain an 'items' array")
    items = []
    for entry in data["items"]:
        try:
            items.append(
                KnowledgeItem(
                    key=entry["key"],
                    task_description=entry["task_description"],
                    verification_prompt=entry.get("verification_prompt", ""),
                    success_examples=list(entry.get("success_examples", [])),
                    failure_examples=list(entry.get("failure_examples", [])),
                )
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed knowledge item: {exc}") from exc
    return build_knowledge_base(items, embedder)


def retrieve_topk(kb: KnowledgeBase, query: str, k: int) -> RetrievedSet:
    """Exhaustive cosine scan; returns the min(k, |kb|) best items."""
    if len(kb) == 0:
        raise EmptyKnowledgeBase("cannot retrieve from an empty knowledge base")
    if k < 1:
        raise ValueError("k must be >= 1")
    qvec = embed(query, kb.query_embedder())
    scored = [(key, cosine_similarity(qvec, item.embedding)) for key, item in kb.items.items()]
    scored.sort(key=lambda e: (-e[1], e[0]))
    return RetrievedSet(entries=scored[: min(k, len(scored))], query_echo=query)


def default_knowledge_base_path() -> Path:
    return Path(__file__).parent / "data" / "knowledge_base.json"


def load_default_knowledge_base() -> KnowledgeBase:
    return load_knowledge_base(default_knowledge_base_path())
