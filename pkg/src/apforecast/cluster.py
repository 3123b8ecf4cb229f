"""k-means clustering of the reduced feature space with validity metrics.

Seeding is k-means++ per restart, iterations are Lloyd's algorithm with
farthest-point reseeding of empty clusters, and the best of all restarts by
WCSS wins. All randomness flows through seeds derived from (seed, k,
restart), so results are independent of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .seeding import rng_for


class ClusterError(ValueError):
    """Invalid clustering arguments."""


@dataclass
class ClusteringResult:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float
    silhouette: float | None
    calinski_harabasz: float | None
    iterations: int
    seed: int

    def assignments(self, ids: Sequence[str]) -> dict[str, int]:
        if len(ids) != self.labels.size:
            raise ClusterError("one id per clustered point required")
        return {str(i): int(c) for i, c in zip(ids, self.labels)}

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


@dataclass(frozen=True)
class KSelectionRow:
    k: int
    wcss: float
    silhouette: float
    calinski_harabasz: float | None


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: subsequent centers drawn proportionally to D^2."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest_sq = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            # All remaining mass on already-chosen locations: pick uniformly.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest_sq / total))
        centers[c] = points[idx]
        np.minimum(closest_sq, np.sum((points - centers[c]) ** 2, axis=1), out=closest_sq)
    return centers


def _lloyd(
    points: np.ndarray,
    centers: np.ndarray,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, float, int, list[float]]:
    """Lloyd iterations; returns (labels, centers, wcss, iterations, wcss history)."""
    k = centers.shape[0]
    history: list[float] = []
    prev_wcss = math.inf
    labels = np.zeros(points.shape[0], dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = _squared_distances(points, centers)
        labels = np.argmin(d2, axis=1)
        assigned = d2[np.arange(points.shape[0]), labels]

        # Reseed each empty cluster with the point currently farthest from
        # its own centroid; mask it so two empty clusters cannot collide.
        present = np.bincount(labels, minlength=k)
        if np.any(present == 0):
            distances = assigned.copy()
            for empty in np.flatnonzero(present == 0):
                farthest = int(np.argmax(distances))
                centers[empty] = points[farthest]
                labels[farthest] = empty
                distances[farthest] = -1.0
            d2 = _squared_distances(points, centers)
            labels = np.argmin(d2, axis=1)
            assigned = d2[np.arange(points.shape[0]), labels]

        wcss = float(assigned.sum())
        history.append(wcss)

        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = points[members].mean(axis=0)

        if prev_wcss < math.inf:
            change = abs(prev_wcss - wcss) / max(prev_wcss, np.finfo(float).tiny)
            if change < tol:
                break
        prev_wcss = wcss

    d2 = _squared_distances(points, centers)
    labels = np.argmin(d2, axis=1)
    wcss = float(d2[np.arange(points.shape[0]), labels].sum())
    history.append(wcss)
    return labels, centers, wcss, iterations, history


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> ClusteringResult:
    """Best-of-``restarts`` k-means; deterministic for a fixed seed."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if not np.all(np.isfinite(pts)):
        raise ClusterError("points must be finite")
    if k < 1 or k > n:
        raise ClusterError(f"k must lie in [1, {n}], got {k}")
    if restarts < 1:
        raise ClusterError("restarts must be >= 1")

    best: tuple[float, np.ndarray, np.ndarray, int] | None = None
    for restart in range(restarts):
        rng = rng_for(seed, "kmeans", k, restart)
        centers = _kmeans_pp_init(pts, k, rng)
        labels, centers, wcss, iterations, _ = _lloyd(pts, centers, max_iter, tol)
        if best is None or wcss < best[0]:
            best = (wcss, labels, centers, iterations)

    wcss, labels, centers, iterations = best
    sil = silhouette(pts, labels) if k >= 2 else None
    ch = calinski_harabasz(pts, labels) if 2 <= k <= n - 1 else None
    return ClusteringResult(
        k=k,
        labels=labels,
        centroids=centers,
        wcss=wcss,
        silhouette=sil,
        calinski_harabasz=ch,
        iterations=iterations,
        seed=seed,
    )


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette score with Euclidean distance.

    Singleton clusters contribute 0 per point, as do points whose intra- and
    inter-cluster distances are both zero.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ClusterError("silhouette is undefined for a single cluster")

    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    n = pts.shape[0]
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        own_size = int(own.sum())
        if own_size <= 1:
            continue  # singleton convention
        a = dist[i, own].sum() / (own_size - 1)
        b = math.inf
        for c in clusters:
            if c == labels[i]:
                continue
            b = min(b, dist[i, labels == c].mean())
        denom = max(a, b)
        scores[i] = (b - a) / denom if denom > 0 else 0.0
    return float(scores.mean())


def calinski_harabasz(points: np.ndarray, labels: np.ndarray) -> float:
    """Between/within dispersion ratio, each normalised by degrees of freedom."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    n = pts.shape[0]
    k = clusters.size
    if not (2 <= k <= n - 1):
        raise ClusterError(f"Calinski-Harabasz requires 2 <= k <= n-1, got k={k}, n={n}")

    overall = pts.mean(axis=0)
    bss = 0.0
    wss = 0.0
    for c in clusters:
        members = pts[labels == c]
        center = members.mean(axis=0)
        bss += members.shape[0] * float(np.sum((center - overall) ** 2))
        wss += float(np.sum((members - center) ** 2))
    if wss <= 0.0:
        return math.inf
    return (bss / (k - 1)) / (wss / (n - k))


def select_k(
    points: np.ndarray,
    k_range: tuple[int, int],
    seed: int,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[ClusteringResult, list[KSelectionRow]]:
    """Run k-means over ``k_range`` and keep the silhouette-maximising K.

    Ties within 1e-9 resolve to the smaller K. The returned sweep table
    carries the WCSS-vs-K elbow data alongside both validity metrics.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    k_min, k_max = k_range
    if not (2 <= k_min <= k_max <= n - 1):
        raise ClusterError(f"k_range must satisfy 2 <= k_min <= k_max <= n-1, got {k_range} with n={n}")

    best: ClusteringResult | None = None
    sweep: list[KSelectionRow] = []
    for k in range(k_min, k_max + 1):
        result = kmeans(pts, k, seed, restarts=restarts, max_iter=max_iter, tol=tol)
        sweep.append(
            KSelectionRow(
                k=k,
                wcss=result.wcss,
                silhouette=result.silhouette,
                calinski_harabasz=result.calinski_harabasz,
            )
        )
        if best is None or result.silhouette > best.silhouette + 1e-9:
            best = result
    return best, sweep


def adjusted_rand_index(labels_a: Sequence[int] | np.ndarray, labels_b: Sequence[int] | np.ndarray) -> float:
    """Chance-corrected agreement between two labelings of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ClusterError("labelings must be 1-D and equally long")
    n = a.size
    if n < 2:
        raise ClusterError("need at least 2 items")

    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    contingency = np.zeros((a_idx.max() + 1, b_idx.max() + 1), dtype=np.int64)
    np.add.at(contingency, (a_idx, b_idx), 1)

    def comb2(x: np.ndarray) -> np.ndarray:
        return x * (x - 1) // 2

    sum_cells = comb2(contingency).sum()
    sum_rows = comb2(contingency.sum(axis=1)).sum()
    sum_cols = comb2(contingency.sum(axis=0)).sum()
    total = comb2(np.array([n]))[0]

    expected = sum_rows * sum_cols / total
    maximum = (sum_rows + sum_cols) / 2.0
    if maximum == expected:
        return 1.0  # both labelings are single-cluster or all-singletons in agreement
    return float((sum_cells - expected) / (maximum - expected))
