import math

import numpy as np
import pytest

from rnnq.allnn import KdPartition, all_nearest_neighbors
from rnnq.errors import DuplicatePoints
from rnnq.geometry import dist_sq


def nn_scan(pts, i):
    best = math.inf
    best_j = -1
    for j in range(len(pts)):
        if j == i:
            continue
        dsq = dist_sq(pts[i], pts[j])
        if dsq < best:
            best, best_j = dsq, j
    return best_j, best


def test_tree_shape_smallest_inputs():
    assert KdPartition(np.array([[0.5, 0.5]])).node_count == 1
    assert KdPartition(np.array([[0.0, 0.0], [1.0, 0.0]])).node_count == 3


def test_single_point_has_no_neighbor():
    nn, r_sq = all_nearest_neighbors(np.array([[2.0, 3.0, 4.0]]))
    assert nn.tolist() == [-1]
    assert r_sq.tolist() == [math.inf]


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_matches_linear_scan(d):
    rng = np.random.default_rng(100 + d)
    for n in (2, 3, 10, 64, 257):
        pts = rng.uniform(-5.0, 5.0, size=(n, d))
        nn, r_sq = all_nearest_neighbors(pts)
        for i in range(n):
            j, dsq = nn_scan(pts, i)
            assert nn[i] == j
            assert r_sq[i] == dsq


def test_ties_resolve_to_smallest_index():
    rng = np.random.default_rng(41)
    # lattice points force many exactly equidistant neighbor pairs
    cells = rng.choice(21 * 21, size=120, replace=False)
    pts = np.column_stack([cells // 21, cells % 21]).astype(np.float64)
    nn, r_sq = all_nearest_neighbors(pts)
    for i in range(len(pts)):
        j, dsq = nn_scan(pts, i)
        assert nn[i] == j
        assert r_sq[i] == dsq


def test_collinear_and_clustered():
    xs = np.array([0.0, 1.0, 3.0, 6.0, 10.0, 10.5])
    nn, r_sq = all_nearest_neighbors(xs.reshape(-1, 1))
    assert nn.tolist() == [1, 0, 1, 2, 5, 4]
    assert r_sq.tolist() == [1.0, 1.0, 4.0, 9.0, 0.25, 0.25]

    rng = np.random.default_rng(17)
    centers = rng.uniform(-100, 100, size=(5, 3))
    pts = np.concatenate([c + rng.normal(scale=1e-3, size=(40, 3)) for c in centers])
    nn, r_sq = all_nearest_neighbors(pts)
    for i in range(0, len(pts), 7):
        j, dsq = nn_scan(pts, i)
        assert nn[i] == j and r_sq[i] == dsq


def test_duplicate_points_raise_with_pair():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DuplicatePoints) as exc:
        all_nearest_neighbors(pts)
    assert exc.value.pair == (0, 2)


def test_nearest_with_explicit_query():
    rng = np.random.default_rng(5)
    pts = rng.uniform(size=(50, 2))
    tree = KdPartition(pts)
    for q in rng.uniform(-0.5, 1.5, size=(25, 2)):
        j, dsq = tree.nearest(tuple(q))
        scan = sorted((dist_sq(q, p), i) for i, p in enumerate(pts))
        assert (dsq, j) == scan[0]
