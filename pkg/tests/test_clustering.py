import itertools

import numpy as np
import pytest

from dualmem.clustering import (
    DacConfig,
    MergePath,
    dac,
    find_best_path,
    kmeans,
    snap_to_medoid,
)
from dualmem.ot import SinkhornConfig
from dualmem.stream import Sample


def test_kmeans_k_equals_n_is_exact():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(4, 3))
    res = kmeans(points, k=4, seed=1)
    assert res.inertia == pytest.approx(0.0, abs=1e-12)
    got = {tuple(np.round(c, 9)) for c in res.centroids}
    want = {tuple(np.round(p, 9)) for p in points}
    assert got == want


def test_kmeans_single_cluster_is_global_mean():
    rng = np.random.default_rng(1)
    points = rng.normal(size=(20, 5))
    res = kmeans(points, k=1, seed=0)
    np.testing.assert_allclose(res.centroids[0], points.mean(axis=0))


def test_kmeans_two_groups_match_partition_oracle():
    points = np.array([[0.0, 0.0], [0.2, 0.0], [10.0, 0.0], [10.2, 0.0]])
    res = kmeans(points, k=2, seed=3)
    got = sorted(map(tuple, np.round(res.centroids, 6)))

    best_cost, best_means = None, None
    for mask in range(1, 2 ** 4 - 1):
        g1 = [i for i in range(4) if mask & (1 << i)]
        g2 = [i for i in range(4) if not mask & (1 << i)]
        m1, m2 = points[g1].mean(axis=0), points[g2].mean(axis=0)
        cost = ((points[g1] - m1) ** 2).sum() + ((points[g2] - m2) ** 2).sum()
        if best_cost is None or cost < best_cost:
            best_cost, best_means = cost, sorted(map(tuple, np.round([m1, m2], 6)))
    assert got == best_means
    assert res.inertia == pytest.approx(best_cost)


def test_kmeans_rejects_oversized_k():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), k=4)


def test_kmeans_inertia_history_never_increases():
    rng = np.random.default_rng(7)
    for trial in range(10):
        points = rng.normal(size=(60, 4))
        res = kmeans(points, k=5, seed=trial)
        h = res.inertia_history
        assert all(h[t + 1] <= h[t] + 1e-9 for t in range(len(h) - 1))
        assert res.inertia == h[-1]


def test_kmeans_survives_duplicate_points():
    points = np.array([[1.0, 1.0]] * 6 + [[5.0, 5.0]] * 2)
    res = kmeans(points, k=3, seed=0)
    assert res.assignments.shape == (8,)
    assert np.isfinite(res.inertia)


def test_kmeans_centroids_are_cluster_means():
    rng = np.random.default_rng(11)
    points = rng.normal(size=(40, 3))
    res = kmeans(points, k=4, seed=2)
    for c in range(4):
        members = points[res.assignments == c]
        if members.shape[0]:
            np.testing.assert_allclose(res.centroids[c], members.mean(axis=0),
                                       atol=1e-12)


def _sample_set(rows):
    return [Sample(i, np.asarray(row, dtype=float), 0)
            for i, row in enumerate(rows)]


def test_snap_exact_match_wins():
    cands = _sample_set([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert snap_to_medoid([1.0, 1.0], cands).id == 1


def test_snap_tie_prefers_lower_id():
    cands = _sample_set([[1.0, 0.0], [-1.0, 0.0]])
    assert snap_to_medoid([0.0, 0.0], cands).id == 0


def test_snap_agrees_with_linear_scan():
    rng = np.random.default_rng(5)
    for _ in range(20):
        rows = rng.normal(size=(10, 4))
        cands = _sample_set(rows)
        centroid = rng.normal(size=4)
        want = int(((rows - centroid) ** 2).sum(axis=1).argmin())
        assert snap_to_medoid(centroid, cands).id == want


def test_snap_requires_candidates():
    with pytest.raises(ValueError):
        snap_to_medoid([0.0], [])


def test_best_path_two_clusters():
    res = find_best_path(np.array([[0.0, 5.0], [5.0, 0.0]]), [3, 3], m=4)
    assert res == MergePath((0, 1), 5.0, 6)


def test_best_path_infeasible_returns_none():
    assert find_best_path(np.array([[0.0, 5.0], [5.0, 0.0]]), [3, 3], m=7) is None


def test_best_path_prefers_cheap_pair_over_triple():
    D = np.array([[0.0, 1.0, 9.0], [1.0, 0.0, 9.0], [9.0, 9.0, 0.0]])
    res = find_best_path(D, [2, 2, 2], m=4)
    assert res.path == (0, 1)
    assert res.cumulative_cost == 1.0
    assert res.total_size == 4


def test_best_path_rejects_bad_matrices():
    with pytest.raises(ValueError):
        find_best_path([[0.0, 1.0], [2.0, 0.0]], [1, 1], m=2)
    with pytest.raises(ValueError):
        find_best_path([[0.0, -1.0], [-1.0, 0.0]], [1, 1], m=2)
    with pytest.raises(ValueError):
        find_best_path([[0.0, np.inf], [np.inf, 0.0]], [1, 1], m=2)


def _brute_force_path(D, sizes, m):
    K = len(sizes)
    best = None
    for r in range(2, K + 1):
        for subset in itertools.combinations(range(K), r):
            if sum(sizes[i] for i in subset) < m:
                continue
            for perm in itertools.permutations(subset):
                if perm[0] > perm[-1]:
                    continue
                cost = 0.0
                for t in range(r - 1):
                    cost = cost + D[perm[t]][perm[t + 1]]
                if best is None or (cost, perm) < best:
                    best = (cost, perm)
    return best


def test_best_path_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(13)
    for _ in range(200):
        K = int(rng.integers(3, 6))
        D = np.round(rng.uniform(0.1, 9.9, size=(K, K)), 3)
        D = (D + D.T) / 2
        np.fill_diagonal(D, 0.0)
        sizes = rng.integers(1, 8, size=K).tolist()
        m = int(rng.integers(2, 16))
        got = find_best_path(D, sizes, m)
        want = _brute_force_path(D.tolist(), sizes, m)
        if want is None:
            assert got is None
        else:
            assert (got.cumulative_cost, got.path) == want


def test_dac_depth_zero_returns_input():
    points = np.arange(12.0).reshape(6, 2)
    res = dac(points, DacConfig(K=3, m=2, depth=0))
    np.testing.assert_array_equal(res.points, points)
    assert res.levels_run == 0


def test_dac_infeasible_merge_returns_input():
    rng = np.random.default_rng(2)
    points = rng.normal(size=(9, 2))
    res = dac(points, DacConfig(K=3, m=50, depth=3))
    np.testing.assert_array_equal(res.points, points)
    assert res.levels_run == 0


def test_dac_merges_the_two_near_blobs():
    rng = np.random.default_rng(4)
    near_a = rng.normal(size=(10, 2)) * 0.1
    near_b = rng.normal(size=(10, 2)) * 0.1 + [3.0, 0.0]
    far = rng.normal(size=(10, 2)) * 0.1 + [50.0, 0.0]
    points = np.concatenate([near_a, far, near_b])
    res = dac(points, DacConfig(K=3, m=15, depth=1), seed=0)
    assert res.size == 20
    want = sorted(list(range(0, 10)) + list(range(20, 30)))
    assert sorted(res.indices.tolist()) == want


def test_dac_output_is_submultiset_and_deterministic():
    rng = np.random.default_rng(9)
    points = rng.normal(size=(40, 3))
    cfg = DacConfig(K=3, m=8, depth=2)
    r1 = dac(points, cfg, seed=5)
    r2 = dac(points, cfg, seed=5)
    np.testing.assert_array_equal(r1.indices, r2.indices)
    np.testing.assert_array_equal(r1.points, points[r1.indices])
    assert r1.size == len(r1.indices) == len(set(r1.indices.tolist()))


def test_dac_small_input_is_terminal():
    points = np.zeros((2, 2))
    res = dac(points, DacConfig(K=3, m=2, depth=2))
    assert res.size == 2
    assert res.levels_run == 0


def test_dac_config_validation():
    with pytest.raises(ValueError):
        DacConfig(K=1, m=2, depth=1)
    with pytest.raises(ValueError):
        DacConfig(K=3, m=0, depth=1)
    with pytest.raises(ValueError):
        DacConfig(K=3, m=2, depth=-1)


def test_dac_respects_sinkhorn_override():
    rng = np.random.default_rng(14)
    points = rng.normal(size=(30, 2))
    cfg = DacConfig(K=3, m=10, depth=1)
    res = dac(points, cfg, seed=1, sinkhorn_cfg=SinkhornConfig(reg=0.5))
    assert res.size >= 10


def test_cloud_cap_keeps_merge_deterministic_and_valid():
    rng = np.random.default_rng(8)
    points = np.concatenate([
        rng.normal(size=(300, 3)),
        rng.normal(size=(300, 3)) + 12.0,
        rng.normal(size=(300, 3)) + np.array([0.0, 24.0, 0.0]),
    ])
    capped = DacConfig(K=3, m=400, depth=1, cloud_cap=64)
    a = dac(points, capped, seed=5)
    b = dac(points, capped, seed=5)
    assert np.array_equal(a.indices, b.indices)
    assert a.levels_run == 1
    assert a.size >= 400
    assert np.all(a.indices < 900)
    # the two nearby blobs merge whether or not the cost is subsampled
    exact = dac(points, DacConfig(K=3, m=400, depth=1), seed=5)
    assert np.array_equal(a.indices, exact.indices)


def test_cloud_cap_validation():
    with pytest.raises(ValueError, match="cloud_cap"):
        DacConfig(K=3, m=10, depth=1, cloud_cap=0)
