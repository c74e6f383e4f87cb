import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnq.errors import InvalidInput, SpreadTooLarge
from rnnq.geometry import (
    KEY_BITS,
    KEY_MAX,
    OVERLAP_SLACK,
    QtBox,
    ball_box_overlap,
    dist_sq,
    grid_keys,
    level_for_radius,
    normalize,
    point_grid_key,
    point_key,
    root_box,
    smallest_containing_box,
)


def test_point_key_anchors():
    assert point_key(-1.0) == 0
    assert point_key(1.0) == KEY_MAX
    assert point_key(0.0) == 1 << (KEY_BITS - 1)
    assert point_key(-0.25) == 3 << (KEY_BITS - 3)
    # just below the top boundary still lands in the last cell
    assert point_key(math.nextafter(1.0, 0.0)) == KEY_MAX


def test_grid_keys_matches_scalar_path():
    rng = np.random.default_rng(7)
    for n, d in [(1, 1), (13, 2), (257, 3), (1000, 5)]:
        pts = rng.uniform(-1.0, 1.0, size=(n, d))
        keys = grid_keys(pts)
        for i in range(n):
            assert tuple(int(k) for k in keys[i]) == point_grid_key(pts[i])


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_point_key_monotone(a, b):
    if a > b:
        a, b = b, a
    ka, kb = point_key(a), point_key(b)
    assert 0 <= ka <= kb <= KEY_MAX


def test_level_for_radius_examples():
    assert level_for_radius(0.25) == 2
    assert level_for_radius(0.3) == 1
    assert level_for_radius(0.5) == 1
    assert level_for_radius(1.0) == 0
    with pytest.raises(SpreadTooLarge):
        level_for_radius(2.0**-47)
    with pytest.raises(InvalidInput):
        level_for_radius(0.0)


@given(st.floats(2.0**-46, 1.0))
def test_level_for_radius_brackets(r):
    k = level_for_radius(r)
    assert math.ldexp(1.0, -k) >= r > math.ldexp(1.0, -k - 1)


def _scb_by_descent(a, b, d):
    box = root_box(d)
    while box.level < KEY_BITS:
        qa = box.quadrant_of_key(a)
        if qa != box.quadrant_of_key(b):
            return box
        box = box.child(qa)
    return box


@given(
    st.integers(1, 3).flatmap(
        lambda d: st.tuples(
            st.lists(st.integers(0, KEY_MAX), min_size=d, max_size=d),
            st.lists(st.integers(0, KEY_MAX), min_size=d, max_size=d),
        )
    )
)
@settings(deadline=None)
def test_smallest_containing_box_matches_descent(keys):
    a, b = tuple(keys[0]), tuple(keys[1])
    box = smallest_containing_box(a, b)
    assert box == _scb_by_descent(a, b, len(a))
    assert box.contains_key(a) and box.contains_key(b)


def test_smallest_containing_box_edges():
    mid = 1 << (KEY_BITS - 1)
    assert smallest_containing_box((mid - 1,), (mid,)) == root_box(1)
    assert smallest_containing_box((5, 9), (5, 9)) == QtBox(KEY_BITS, (5, 9))
    assert smallest_containing_box((0, 0), (1, 0)).level == KEY_BITS - 1


def test_box_child_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(200):
        d = int(rng.integers(1, 4))
        box = root_box(d)
        key = tuple(int(k) for k in rng.integers(0, KEY_MAX + 1, size=d, dtype=np.uint64))
        while box.level < KEY_BITS:
            q = box.quadrant_of_key(key)
            child = box.child(q)
            assert box.contains_box(child)
            assert child.contains_key(key)
            if box.level > 40:
                break
            box = child
        assert box.contains_key(key)


def test_box_bounds_are_exact_dyadics():
    box = QtBox(2, (1, 3))
    assert box.side() == 0.5
    assert box.low() == (-0.5, 0.5)
    assert root_box(2).low() == (-1.0, -1.0)


def _overlap_exact(center, r_sq, box):
    side = Fraction(2, 1 << box.level)
    acc = Fraction(0)
    for j, c in enumerate(center):
        lo = -1 + box.anchor[j] * side
        hi = lo + side
        x = Fraction(float(c))
        if x < lo:
            acc += (lo - x) ** 2
        elif x > hi:
            acc += (x - hi) ** 2
    return acc <= Fraction(float(r_sq))


@st.composite
def _ball_and_box(draw):
    d = draw(st.integers(1, 3))
    level = draw(st.integers(0, 12))
    anchor = tuple(draw(st.integers(0, (1 << level) - 1)) for _ in range(d))
    center = [draw(st.floats(-1.0, 1.0)) for _ in range(d)]
    r_sq = draw(st.floats(2.0**-60, 0.25))
    return center, r_sq, QtBox(level, anchor)


@given(_ball_and_box())
@settings(deadline=None)
def test_ball_box_overlap_is_conservative(case):
    center, r_sq, box = case
    got = ball_box_overlap(center, r_sq, box)
    if _overlap_exact(center, r_sq, box):
        assert got
    if got:
        # one-sided: anything accepted is within twice the advertised slack
        side = Fraction(2, 1 << box.level)
        acc = Fraction(0)
        for j, c in enumerate(center):
            lo = -1 + box.anchor[j] * side
            hi = lo + side
            x = Fraction(float(c))
            if x < lo:
                acc += (lo - x) ** 2
            elif x > hi:
                acc += (x - hi) ** 2
        assert acc <= Fraction(float(r_sq)) * (1 + Fraction(2) ** -39)


def test_ball_box_overlap_tangent_cases():
    box = QtBox(2, (1, 1))  # [-0.5, 0]^2, closed
    assert ball_box_overlap([0.5, -0.25], 0.25, box)  # exact tangency from outside
    assert not ball_box_overlap([0.5, -0.25], 0.2, box)
    assert ball_box_overlap([-0.25, -0.25], 1e-30, box)  # center inside
    assert ball_box_overlap([0.0, 0.0], 1e-30, box)  # center on the closed corner
    assert OVERLAP_SLACK > 1.0


@given(
    st.integers(1, 6).flatmap(
        lambda d: st.lists(
            st.lists(st.floats(-1e3, 1e3), min_size=d, max_size=d), min_size=2, max_size=2
        )
    )
)
def test_dist_sq_symmetric(pair):
    a, b = pair
    assert dist_sq(a, b) == dist_sq(b, a)
    assert dist_sq(a, a) == 0.0


def test_dist_sq_matches_vectorized_axis_accumulation():
    rng = np.random.default_rng(3)
    for d in (1, 2, 3, 8):
        pts = rng.normal(size=(64, d))
        q = rng.normal(size=d)
        acc = np.zeros(len(pts))
        for j in range(d):
            t = pts[:, j] - q[j]
            acc += t * t
        for i in range(len(pts)):
            assert dist_sq(pts[i], q) == acc[i]


def test_normalize_range_and_scale():
    rng = np.random.default_rng(19)
    for d in (1, 2, 3, 5):
        pts = rng.uniform(-50.0, 90.0, size=(200, d)) * rng.uniform(0.5, 2.0, size=d)
        ps = normalize(pts)
        bound = 1.0 / (4.0 * math.sqrt(d))
        assert np.abs(ps.points).max() <= bound * (1 + 1e-12)
        widest = np.argmax(pts.max(axis=0) - pts.min(axis=0))
        spread = ps.points[:, widest].max() - ps.points[:, widest].min()
        assert spread == pytest.approx(2 * bound, rel=1e-12)
        back = ps.points * ps.transform.sigma + ps.transform.center
        assert np.allclose(back, pts, rtol=1e-12, atol=0)


def test_normalize_degenerate_and_invalid():
    ps = normalize(np.array([[3.0, 7.0]]))
    assert ps.transform.sigma == 1.0
    assert np.all(ps.points == 0.0)

    ps = normalize(np.full((5, 3), 2.5))
    assert ps.transform.sigma == 1.0
    assert np.all(ps.points == 0.0)

    with pytest.raises(InvalidInput):
        normalize(np.array([[0.0, np.nan]]))
    with pytest.raises(InvalidInput):
        normalize(np.array([1.0, 2.0]))
    with pytest.raises(SpreadTooLarge):
        normalize(np.array([[-1e308], [1e308]]))


def test_normalized_points_are_read_only():
    ps = normalize(np.array([[0.0, 0.0], [1.0, 2.0]]))
    with pytest.raises(ValueError):
        ps.points[0, 0] = 5.0
