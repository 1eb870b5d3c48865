"""Knowledge base and retrieval: embed a corpus once, serve top-M evidence.

The retrieval distribution is a temperature softmax over the cosine
similarity between a viewpoint embedding and every item in the base;
selection takes the M highest-probability items deterministically, with
ties broken by insertion order. A sampling mode exists behind a flag
for exploration studies but is off by default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import softmax_with_temperature
from .errors import DimensionMismatch, DuplicateId, EmptyCorpus

DEFAULT_ALPHA = 1.5
DEFAULT_M = 5


@dataclass(frozen=True)
class KnowledgeItem:
    id: str
    text: str
    embedding: np.ndarray  # unit norm, read-only


@dataclass(frozen=True)
class RetrievalResult:
    item: KnowledgeItem
    similarity: float
    probability: float


@dataclass(frozen=True)
class KnowledgeBase:
    """Immutable embedded corpus; insertion order is significant."""

    items: tuple[KnowledgeItem, ...]
    dim: int
    alpha: float = DEFAULT_ALPHA
    m: int = DEFAULT_M
    _matrix: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix


def build(raw_items, embedder=None, alpha: float = DEFAULT_ALPHA, m: int = DEFAULT_M) -> KnowledgeBase:
    """Embed and freeze a corpus.

    raw_items is an iterable of (id, text) or (id, text, embedding);
    items without an embedding are embedded via the supplied embedder.
    All embeddings are L2-normalized. Ids must be unique and texts
    nonempty.
    """
    items: list[KnowledgeItem] = []
    seen: set[str] = set()
    dim: int | None = None
    for raw in raw_items:
        if len(raw) == 2:
            item_id, text = raw
            embedding = None
        else:
            item_id, text, embedding = raw
        if item_id in seen:
            raise DuplicateId(f"knowledge item id {item_id!r} appears twice")
        seen.add(item_id)
        if not text or not text.strip():
            raise ValueError(f"knowledge item {item_id!r} has empty text")
        if embedding is None:
            if embedder is None:
                raise ValueError(f"item {item_id!r} has no embedding and no embedder was given")
            vec = np.asarray(embedder.embed(text), dtype=np.float64)
        else:
            vec = np.asarray(embedding, dtype=np.float64).reshape(-1)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DimensionMismatch(
                f"item {item_id!r} embedding has dim {vec.shape[0]}, base uses {dim}"
            )
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError(f"item {item_id!r} has a zero embedding")
        vec = vec / norm
        vec.setflags(write=False)
        items.append(KnowledgeItem(id=item_id, text=text, embedding=vec))
    if not items:
        raise EmptyCorpus("cannot build a knowledge base from zero items")
    matrix = np.stack([it.embedding for it in items])
    matrix.setflags(write=False)
    return KnowledgeBase(items=tuple(items), dim=dim, alpha=alpha, m=m, _matrix=matrix)


def _similarities(base: KnowledgeBase, viewpoint_embedding) -> np.ndarray:
    vec = np.asarray(viewpoint_embedding, dtype=np.float64).reshape(-1)
    if vec.shape[0] != base.dim:
        raise DimensionMismatch(f"query dim {vec.shape[0]} != base dim {base.dim}")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return np.zeros(len(base))
    return base.matrix @ (vec / norm)


def retrieval_distribution(base: KnowledgeBase, viewpoint_embedding) -> np.ndarray:
    """Probability over every item: softmax of alpha * cosine, sums to 1."""
    if len(base) == 0:
        raise EmptyCorpus("retrieval over an empty base")
    return softmax_with_temperature(_similarities(base, viewpoint_embedding), base.alpha)


def retrieve_top_m(
    base: KnowledgeBase,
    viewpoint_embedding,
    rng: np.random.Generator | None = None,
    sample: bool = False,
) -> list[RetrievalResult]:
    """The min(m, |base|) highest-probability items, ties by insertion order.

    With sample=True items are instead drawn without replacement from
    the retrieval distribution (requires rng); off by default.
    """
    sims = _similarities(base, viewpoint_embedding)
    probs = retrieval_distribution(base, viewpoint_embedding)
    count = min(base.m, len(base))
    if sample:
        if rng is None:
            raise ValueError("sampling retrieval requires an rng")
        order = rng.choice(len(base), size=count, replace=False, p=probs)
    else:
        # argsort on the negated probabilities is stable, so equal
        # probabilities keep insertion order.
        order = np.argsort(-probs, kind="stable")[:count]
    return [
        RetrievalResult(
            item=base.items[int(i)],
            similarity=float(sims[int(i)]),
            probability=float(probs[int(i)]),
        )
        for i in order
    ]


def load_knowledge_jsonl(path, embedder=None, alpha: float = DEFAULT_ALPHA, m: int = DEFAULT_M) -> KnowledgeBase:
    """Build a base from a JSONL file of {"id", "text", "embedding"?} records."""
    raw = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            raw.append((record["id"], record["text"], record.get("embedding")))
    return build(raw, embedder=embedder, alpha=alpha, m=m)


def save_knowledge_jsonl(base: KnowledgeBase, path):
    """Write the base back out with embeddings materialized."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for item in base.items:
            record = {
                "id": item.id,
                "text": item.text,
                "embedding": [float(v) for v in item.embedding],
            }
            fh.write(json.dumps(record) + "\n")
