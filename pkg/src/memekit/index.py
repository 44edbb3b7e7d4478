"""Exact Euclidean nearest-neighbor index over knowledge-base rows.

Exact search only: at the tens-of-thousands-of-rows scale this toolkit
targets, a vectorized linear scan is fast, and determinism is a hard
requirement that approximate indexes cannot give. Distances accumulate in
float64 over float32 inputs. Ties break by ascending row index, which the
source data never specifies but reproducible splits require.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .corpus import EmbeddingMatrix

ENTRY_TEMPLATE = "template"
ENTRY_EXAMPLE = "example"

_CHUNK_ROWS = 8192


@dataclass(frozen=True)
class EntryMeta:
    """Per-row identity: what kind of row, and which template owns it."""

    kind: str
    parent_template_id: str

    def __post_init__(self):
        if self.kind not in (ENTRY_TEMPLATE, ENTRY_EXAMPLE):
            raise ValueError(f"unknown entry kind {self.kind!r}")


class Neighbor(NamedTuple):
    row_index: int
    template_id: str
    distance: float


@dataclass(frozen=True)
class Index:
    """Immutable search structure; concurrently queryable after build."""

    vectors: np.ndarray          # float32, one row per entry
    row_ids: np.ndarray          # original matrix row per entry
    kinds: tuple[str, ...]
    parents: tuple[str, ...]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def euclidean_distance(a, b) -> float:
    """sqrt of summed squared differences, accumulated in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt((d * d).sum()))


def build_index(
    matrix: EmbeddingMatrix,
    entry_meta: Sequence[EntryMeta],
    include_examples: bool = False,
) -> Index:
    """Index over template rows, plus example rows when requested."""
    if len(entry_meta) != matrix.n_rows:
        raise ValueError(
            f"entry_meta covers {len(entry_meta)} rows, matrix has {matrix.n_rows}"
        )
    rows = [
        i
        for i, meta in enumerate(entry_meta)
        if meta.kind == ENTRY_TEMPLATE or (include_examples and meta.kind == ENTRY_EXAMPLE)
    ]
    if not rows:
        raise ValueError("index would be empty: no rows selected")
    vectors = np.ascontiguousarray(matrix.data[rows])
    vectors.setflags(write=False)
    row_ids = np.asarray(rows, dtype=np.int64)
    row_ids.setflags(write=False)
    return Index(
        vectors=vectors,
        row_ids=row_ids,
        kinds=tuple(entry_meta[i].kind for i in rows),
        parents=tuple(entry_meta[i].parent_template_id for i in rows),
    )


def _distances(vectors: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Float64 Euclidean distances from q to every row, chunked."""
    q64 = np.asarray(q, dtype=np.float64)
    out = np.empty(vectors.shape[0], dtype=np.float64)
    for start in range(0, vectors.shape[0], _CHUNK_ROWS):
        block = vectors[start : start + _CHUNK_ROWS].astype(np.float64) - q64
        out[start : start + len(block)] = (block * block).sum(axis=1)
    return np.sqrt(out)


def query_knn(index: Index, q, k: int) -> list[Neighbor]:
    """The k exactly-nearest entries, ties broken by ascending row index."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise ValueError(f"query dimension {q.shape} does not match index dim {index.dim}")
    if not 1 <= k <= index.size:
        raise ValueError(f"k={k} out of range for index of size {index.size}")
    dists = _distances(index.vectors, q)
    order = np.lexsort((index.row_ids, dists))[:k]
    return [
        Neighbor(int(index.row_ids[i]), index.parents[i], float(dists[i]))
        for i in order
    ]


def query_knn_batch(
    index: Index,
    queries,
    k: int,
    threads: int = 1,
) -> list[list[Neighbor]]:
    """query_knn per row of ``queries``; output order follows input order.

    Each query is independent, so results are identical for any thread count.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise ValueError("queries must be a 2-D array")
    if threads <= 1 or queries.shape[0] <= 1:
        return [query_knn(index, q, k) for q in queries]
    results: list[Optional[list[Neighbor]]] = [None] * queries.shape[0]

    def run(i: int) -> None:
        results[i] = query_knn(index, queries[i], k)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run, range(queries.shape[0])))
    return results  # type: ignore[return-value]
