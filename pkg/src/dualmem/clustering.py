"""K-means prototyping and divide-and-conquer point-cloud merging.

The merge procedure partitions a working set with K-means, scores every
cluster pair by entropic transport cost, fuses the cheapest qualifying
cluster path into one cloud, and recurses on the fused cloud. It returns
row indices alongside the points so callers can track sample identity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from dualmem.ot import SinkhornConfig, sinkhorn_point_clouds
from dualmem.stream import Sample

MAX_EXHAUSTIVE_CLUSTERS = 12


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    # inertia after each Lloyd pass; non-increasing by construction
    inertia_history: list[float] = field(repr=False, default_factory=list)


@dataclass
class DacConfig:
    """Merge knobs: K clusters per level, minimum merged size m, recursion depth.

    cloud_cap, when set, bounds how many points of each cluster enter the
    cluster-to-cluster transport cost (a seeded uniform subsample); the
    merge decision becomes an estimate but large clusters stay cheap.
    """

    K: int = 3
    m: int = 10
    depth: int = 2
    cloud_cap: int | None = None

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.cloud_cap is not None and self.cloud_cap < 1:
            raise ValueError(f"cloud_cap must be >= 1, got {self.cloud_cap}")


@dataclass
class MergePath:
    path: tuple[int, ...]
    cumulative_cost: float
    total_size: int


@dataclass
class DacResult:
    """Merged cloud plus the row indices it occupies in the original input."""

    points: np.ndarray
    indices: np.ndarray
    size: int
    levels_run: int


def _sq_dists_to(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp_seeds(points: np.ndarray, k: int,
                     rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    first = int(rng.integers(n))
    chosen = [first]
    sq = ((points - points[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = sq.sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=sq / total))
        chosen.append(idx)
        sq = np.minimum(sq, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, max_iters: int = 100, seed=0) -> KMeansResult:
    """Lloyd iteration from k-means++ seeding.

    Stops at an assignment fixpoint or after max_iters passes. A cluster
    that empties is re-seeded from the point currently farthest from its
    assigned centroid.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_seeds(points, k, rng)
    assignments = np.full(n, -1)
    history: list[float] = []
    iters = 0
    for iters in range(1, max_iters + 1):
        sq = _sq_dists_to(points, centroids)
        new_assign = sq.argmin(axis=1)

        # re-seed empty clusters before accepting the pass
        counts = np.bincount(new_assign, minlength=k)
        if np.any(counts == 0):
            point_err = sq[np.arange(n), new_assign].copy()
            for cluster in np.flatnonzero(counts == 0):
                far = int(point_err.argmax())
                centroids[cluster] = points[far]
                point_err[far] = -1.0
            sq = _sq_dists_to(points, centroids)
            new_assign = sq.argmin(axis=1)

        stable = np.array_equal(new_assign, assignments)
        assignments = new_assign
        for cluster in range(k):
            members = points[assignments == cluster]
            if members.shape[0]:
                centroids[cluster] = members.mean(axis=0)
        history.append(float(
            _sq_dists_to(points, centroids)[np.arange(n), assignments].sum()))
        if stable:
            break
    return KMeansResult(centroids, assignments, history[-1], iters, history)


def snap_to_medoid(centroid, candidates: list[Sample]) -> Sample:
    """Nearest real sample to a synthetic centroid; ties go to the lowest id."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    centroid = np.asarray(centroid, dtype=float)
    best = None
    best_key = None
    for s in candidates:
        key = (float(((s.features - centroid) ** 2).sum()), s.id)
        if best_key is None or key < best_key:
            best, best_key = s, key
    return best


def find_best_path(D, sizes, m: int) -> MergePath | None:
    """Cheapest cluster ordering whose member count reaches m.

    Enumerates every subset of two or more clusters with total size >= m
    and every ordering of each subset, scoring an ordering by the sum of
    consecutive-pair distances. Orientation is canonical (first index
    below last) and ties break toward the lexicographically smallest
    path. Returns None when no subset qualifies. Exhaustive by design;
    cluster counts are capped at MAX_EXHAUSTIVE_CLUSTERS.
    """
    D = np.asarray(D, dtype=float)
    sizes = np.asarray(sizes, dtype=int)
    K = D.shape[0]
    if D.shape != (K, K) or sizes.shape != (K,):
        raise ValueError(f"shape mismatch: D {D.shape} vs sizes {sizes.shape}")
    if K > MAX_EXHAUSTIVE_CLUSTERS:
        raise ValueError(f"at most {MAX_EXHAUSTIVE_CLUSTERS} clusters supported, got {K}")
    off_diag = D[~np.eye(K, dtype=bool)]
    if not np.all(np.isfinite(off_diag)):
        raise ValueError("off-diagonal distances must be finite")
    if np.any(D < 0):
        raise ValueError("distances must be non-negative")
    if np.any(np.abs(D - D.T) > 0):
        raise ValueError("distance matrix must be symmetric")

    best: tuple[float, tuple[int, ...]] | None = None
    for r in range(2, K + 1):
        for subset in itertools.combinations(range(K), r):
            if int(sizes[list(subset)].sum()) < m:
                continue
            for perm in itertools.permutations(subset):
                if perm[0] > perm[-1]:
                    continue
                cost = 0.0
                for t in range(r - 1):
                    cost += D[perm[t], perm[t + 1]]
                if best is None or (cost, perm) < best:
                    best = (cost, perm)
    if best is None:
        return None
    cost, path = best
    return MergePath(path, cost, int(sizes[list(path)].sum()))


def dac(points, cfg: DacConfig, seed=0,
        sinkhorn_cfg: SinkhornConfig | None = None) -> DacResult:
    """Recursively merge the transport-cheapest cluster path.

    Levels stop early when the working set is smaller than K or no
    cluster subset reaches the minimum merge size.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise ValueError("points must be non-empty")
    indices = np.arange(points.shape[0])
    levels = 0
    for level in range(cfg.depth):
        if points.shape[0] < cfg.K:
            break
        km_seed = np.random.SeedSequence(entropy=seed, spawn_key=(level,))
        km = kmeans(points, cfg.K, seed=km_seed)
        clouds = [np.flatnonzero(km.assignments == c) for c in range(cfg.K)]
        clouds = [c for c in clouds if len(c)]
        if len(clouds) < 2:
            break
        sizes = [len(c) for c in clouds]
        views = [points[c] for c in clouds]
        if cfg.cloud_cap is not None:
            cap_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(level, 1)))
            views = [v if len(v) <= cfg.cloud_cap else
                     v[cap_rng.choice(len(v), cfg.cloud_cap, replace=False)]
                     for v in views]
        D = np.zeros((len(clouds), len(clouds)))
        for i in range(len(clouds)):
            for j in range(i + 1, len(clouds)):
                D[i, j] = D[j, i] = sinkhorn_point_clouds(
                    views[i], views[j], sinkhorn_cfg)
        path = find_best_path(D, sizes, cfg.m)
        if path is None:
            break
        merged = np.concatenate([clouds[c] for c in path.path])
        merged.sort()
        points = points[merged]
        indices = indices[merged]
        levels += 1
    return DacResult(points, indices, points.shape[0], levels)
