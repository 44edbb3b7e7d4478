"""Exploratory reports: closest template-meme pairs and k-means summaries.

The retrieval report surfaces the dataset items nearest to any template so
annotators can judge the pairs; the grouping field stays empty, it is
annotation output. The centroid report fits k-means on one side (KB or
dataset) and pairs each centroid with its nearest entry on the other side.

k-means is k-means++ initialized from the package's seeded generator, with
Lloyd iterations capped at 300 and a relative centroid-shift tolerance of
1e-4. Clusters that empty out are re-seeded with the point farthest from
its assigned centroid, which keeps the within-cluster sum of squares
non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import EmbeddingMatrix, MemeRecord
from .index import Index, query_knn_batch
from .rng import Xoshiro256StarStar


@dataclass(frozen=True)
class RetrievalPair:
    template_id: str
    item_id: str
    distance: float
    grouping: Optional[str] = None


def retrieval_report(
    records: Sequence[MemeRecord],
    index: Index,
    n: int,
    embeddings: EmbeddingMatrix,
    threads: int = 1,
    vec_fn=None,
) -> list[RetrievalPair]:
    """The n items with the smallest nearest-template distance, ascending.

    Equal distances keep dataset order.
    """
    if not 1 <= n <= len(records):
        raise ValueError(f"n={n} out of range for dataset of {len(records)} items")
    if vec_fn is None:
        vec_fn = lambda rec: embeddings.row(rec.image_row)
    queries = [vec_fn(r) for r in records]
    nearest = query_knn_batch(index, queries, k=1, threads=threads)
    ranked = sorted(
        range(len(records)),
        key=lambda i: (nearest[i][0].distance, i),
    )[:n]
    return [
        RetrievalPair(
            template_id=nearest[i][0].template_id,
            item_id=records[i].item_id,
            distance=nearest[i][0].distance,
        )
        for i in ranked
    ]


def _nearest_centroid(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(assignment, squared distance to it); ties pick the lower centroid index."""
    d2 = np.empty((points.shape[0], centroids.shape[0]))
    for j in range(centroids.shape[0]):
        diff = points - centroids[j]
        d2[:, j] = (diff * diff).sum(axis=1)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def _kmeanspp_init(points: np.ndarray, k: int, rng: Xoshiro256StarStar) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.next_below(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total == 0.0:
            idx = rng.next_below(n)  # all remaining mass at distance 0
        else:
            r = rng.next_float() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(
    points,
    k: int,
    seed: int,
    max_iter: int = 300,
    tol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """(centroids, labels, per-iteration SSE history)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    rng = Xoshiro256StarStar(seed)
    centroids = _kmeanspp_init(points, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        labels, d2 = _nearest_centroid(points, centroids)
        history.append(float(d2.sum()))
        new_centroids = centroids.copy()
        empty = []
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                empty.append(j)
        if empty:
            # Re-seed each empty cluster with the point currently worst
            # served by its own centroid; farthest first, ties by index.
            order = np.lexsort((np.arange(n), -d2))
            used = 0
            for j in empty:
                new_centroids[j] = points[order[used]]
                used += 1
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum()))
        scale = float(np.sqrt((centroids**2).sum()))
        centroids = new_centroids
        if shift <= tol * max(scale, 1e-12):
            break
    labels, d2 = _nearest_centroid(points, centroids)
    history.append(float(d2.sum()))
    return centroids, labels, history


@dataclass(frozen=True)
class CentroidEntry:
    centroid: tuple[float, ...]
    nearest_entry_id: str
    distance: float


@dataclass(frozen=True)
class CentroidReport:
    k: int
    fit_side: str
    entries: tuple[CentroidEntry, ...]


def centroid_report(
    fit_vectors,
    other_vectors,
    other_ids: Sequence[str],
    k: int,
    seed: int,
    fit_side: str,
) -> CentroidReport:
    """Fit k-means on one side, pair each centroid with the other side.

    Distinct nearest entries are not guaranteed; several centroids can sit
    closest to the same entry.
    """
    if fit_side not in ("kb", "dataset"):
        raise ValueError(f"fit_side must be kb or dataset, got {fit_side!r}")
    other = np.asarray(other_vectors, dtype=np.float64)
    if other.shape[0] != len(other_ids):
        raise ValueError("other_ids must align with other_vectors rows")
    if other.shape[0] == 0:
        raise ValueError("the lookup side is empty")
    centroids, _, _ = kmeans(fit_vectors, k, seed)
    entries = []
    for c in centroids:
        diff = other - c
        d = np.sqrt((diff * diff).sum(axis=1))
        best = int(np.argmin(d))
        entries.append(
            CentroidEntry(
                centroid=tuple(float(x) for x in c),
                nearest_entry_id=other_ids[best],
                distance=float(d[best]),
            )
        )
    return CentroidReport(k=k, fit_side=fit_side, entries=tuple(entries))
