import itertools
import math

import numpy as np
import pytest

from pccforge.geometry import (
    PatchSet,
    build_patches,
    check_point_cloud,
    farthest_point_sample,
    knn,
    normalize_unit,
)


def fps_oracle(pts, m, first):
    """O(N*m) reference: recompute min distance to the selected set each round."""
    chosen = [first]
    for _ in range(m - 1):
        best_i, best_d = -1, -1.0
        for i in range(len(pts)):
            d = min(float(np.sum((pts[i] - pts[j]) ** 2)) for j in chosen)
            if d > best_d:
                best_i, best_d = i, d
        chosen.append(best_i)
    return chosen


def test_check_point_cloud_rejects_bad_input():
    with pytest.raises(ValueError):
        check_point_cloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        check_point_cloud(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        check_point_cloud([[0.0, np.nan, 1.0]])


def test_normalize_single_point():
    out, centroid, scale = normalize_unit([[2.0, 2.0, 2.0]])
    assert np.array_equal(out, [[0.0, 0.0, 0.0]])
    assert np.array_equal(centroid, [2.0, 2.0, 2.0])
    assert scale == 1.0


def test_normalize_symmetric_pair():
    out, centroid, scale = normalize_unit([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert np.allclose(out, [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert np.array_equal(centroid, [0.0, 0.0, 0.0])
    assert scale == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_normalize_max_norm_is_one(seed):
    rng = np.random.default_rng(seed)
    out, _, _ = normalize_unit(rng.normal(3.0, 2.0, (100, 3)))
    assert abs(np.max(np.linalg.norm(out, axis=1)) - 1.0) <= 1e-12


def test_normalize_round_trips():
    rng = np.random.default_rng(42)
    pts = rng.normal(3.0, 2.0, (50, 3))
    out, centroid, scale = normalize_unit(pts)
    assert np.allclose(out * scale + centroid, pts, atol=1e-12)


def test_fps_single_point():
    assert np.array_equal(farthest_point_sample([[1.0, 2.0, 3.0]], 1, seed=0), [0])


def test_fps_forced_second_pick():
    pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.1, 0.0, 0.0]]
    for seed in range(50):
        idx = farthest_point_sample(pts, 2, seed=seed)
        if idx[0] == 0:
            assert idx[1] == 1  # 1.0 beats 0.1
            break
    else:
        pytest.fail("no seed produced first pick 0")


def test_fps_m_too_large():
    with pytest.raises(ValueError):
        farthest_point_sample([[0.0, 0.0, 0.0]], 2, seed=0)


@pytest.mark.parametrize("seed", range(50))
def test_fps_matches_greedy_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    pts = rng.uniform(-1, 1, (64, 3))
    got = farthest_point_sample(pts, 8, seed=seed)
    assert list(got) == fps_oracle(pts, 8, first=got[0])


@pytest.mark.parametrize("seed", range(10))
def test_fps_two_approximation_of_k_center(seed):
    rng = np.random.default_rng(2000 + seed)
    n, m = 16, 4
    pts = rng.uniform(-1, 1, (n, 3))
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    opt = min(
        max(min(d[i, j] for j in subset) for i in range(n))
        for subset in itertools.combinations(range(n), m)
    )
    sel = farthest_point_sample(pts, m, seed=seed)
    radius = max(min(d[i, j] for j in sel) for i in range(n))
    assert radius <= 2.0 * opt + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_fps_min_pairwise_distance_non_increasing(seed):
    rng = np.random.default_rng(3000 + seed)
    pts = rng.uniform(-1, 1, (40, 3))
    sel = farthest_point_sample(pts, 12, seed=seed)
    prev = math.inf
    for m in range(2, 13):
        sub = pts[sel[:m]]
        d = np.linalg.norm(sub[:, None] - sub[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        cur = d.min()
        assert cur <= prev + 1e-12
        prev = cur


def test_fps_deterministic_given_seed():
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1, 1, (30, 3))
    a = farthest_point_sample(pts, 10, seed=123)
    b = farthest_point_sample(pts, 10, seed=123)
    assert np.array_equal(a, b)


def test_knn_query_on_cloud_point():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 0.0, 0.0]])
    assert np.array_equal(knn(pts, [1.0, 1.0, 1.0], 1), [1])


def test_knn_collinear():
    pts = np.array([[float(i), 0.0, 0.0] for i in range(4)])
    assert np.array_equal(knn(pts, [0.0, 0.0, 0.0], 2), [0, 1])


def test_knn_k_too_large():
    with pytest.raises(ValueError):
        knn(np.zeros((2, 3)), [0.0, 0.0, 0.0], 3)


@pytest.mark.parametrize("seed", range(10))
def test_knn_matches_full_sort_oracle(seed):
    rng = np.random.default_rng(4000 + seed)
    pts = rng.uniform(-1, 1, (256, 3))
    q = rng.uniform(-1, 1, 3)
    dists = [float(np.sqrt(np.sum((p - q) ** 2))) for p in pts]
    expected = sorted(range(256), key=lambda i: (dists[i], i))[:16]
    assert list(knn(pts, q, 16)) == expected


def test_patches_keys_equal_cloud():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    ps = build_patches(pts, pts, k=1)
    assert ps.patches.shape == (3, 1, 3)
    assert np.allclose(ps.patches, 0.0)


def test_patches_translation_invariant():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, (50, 3))
    keys = pts[farthest_point_sample(pts, 6, seed=0)]
    shift = np.array([10.0, -4.0, 2.5])
    a = build_patches(pts, keys, k=5)
    b = build_patches(pts + shift, keys + shift, k=5)
    assert np.allclose(a.patches, b.patches, atol=1e-12)


def test_patches_match_composed_knn_oracle():
    rng = np.random.default_rng(6)
    pts = rng.uniform(-1, 1, (80, 3))
    keys = pts[farthest_point_sample(pts, 8, seed=1)]
    ps = build_patches(pts, keys, k=7)
    assert isinstance(ps, PatchSet)
    assert ps.m == 8 and ps.k == 7
    for j, key in enumerate(keys):
        idx = knn(pts, key, 7)
        assert np.array_equal(ps.patches[j], pts[idx] - key)
