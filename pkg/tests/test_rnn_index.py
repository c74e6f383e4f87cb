import math

import numpy as np
import pytest

from rnnq import RnnIndex, boxes_for_ball, build, normalize
from rnnq.allnn import all_nearest_neighbors
from rnnq.errors import DuplicatePoints, InvalidInput, SpreadTooLarge
from rnnq.geometry import QtBox
from rnnq.oracle import (
    DISTRIBUTIONS,
    candidate_semantics_check,
    generate_points,
    make_queries,
    rnn_brute_force,
)
from rnnq.rnn_index import _h_boxes


def brute_pairs(ix):
    nn, r_sq = all_nearest_neighbors(ix.point_set.points)
    return nn, r_sq


def assert_matches_oracle(ix, queries):
    _, r_sq = brute_pairs(ix)
    for q in queries:
        assert ix.query(q) == rnn_brute_force(ix.point_set, q, r_sq)


# ----------------------------------------------------------------------
# boxes_for_ball


def test_boxes_for_ball_1d_two_cells():
    boxes = boxes_for_ball([0.0], 0.09)
    assert all(b.level == 1 for b in boxes)
    assert {b.anchor for b in boxes} == {(0,), (1,)}


def test_boxes_for_ball_2d_four_cells():
    boxes = boxes_for_ball([0.1, 0.1], 0.09)
    assert all(b.level == 1 for b in boxes)
    assert {b.anchor for b in boxes} == {(a, b) for a in (0, 1) for b in (0, 1)}


def test_boxes_for_ball_interior_single_cell():
    # radius 0.05 ball centered mid-cell at level 4 (cells of side 0.125)
    boxes = boxes_for_ball([0.3125, 0.3125], 0.0025)
    assert boxes == [QtBox(4, (10, 10))]


def test_boxes_for_ball_tangent_extent_adds_neighbor():
    """A ball whose extent ends exactly on a cell boundary keeps the tangent
    neighbor as a guard cell, so probes keying just across it stay covered."""
    boxes = boxes_for_ball([-0.125], 0.125 * 0.125)
    assert all(b.level == 3 for b in boxes)
    assert {b.anchor for b in boxes} == {(2,), (3,), (4,)}


def test_boxes_for_ball_rejects_bad_radius():
    for r_sq in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(InvalidInput):
            boxes_for_ball([0.0], r_sq)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_h_boxes_match_scalar(d):
    rng = np.random.default_rng(20 + d)
    pts = rng.uniform(-3.0, 7.0, (60, d))
    ps = normalize(pts)
    nn, r_sq = all_nearest_neighbors(ps.points)
    levels, anchors, owners = _h_boxes(ps.points, r_sq, nn)
    seen: dict[int, set] = {i: set() for i in range(60)}
    for lv, anc, ow in zip(levels, anchors, owners):
        seen[int(ow)].add(QtBox(int(lv), tuple(int(a) for a in anc)))
    for i in range(60):
        assert seen[i] == set(boxes_for_ball(ps.points[i], float(r_sq[i])))


# ----------------------------------------------------------------------
# small hand-checked instances


def test_two_points_on_a_line():
    ix = build([[0.0], [1.0]])
    assert ix.query([0.4]) == [0, 1]
    assert ix.query([-0.5]) == [0]
    assert ix.query([2.0]) == [1]
    assert ix.query([2.0001]) == []
    assert ix.query([100.0]) == []


def test_three_points_uneven_gaps():
    # nearest-neighbor radii: 1, 1, 2; the probe at 2 reaches points 1 and 2
    ix = build([[0.0], [1.0], [3.0]])
    assert ix.query([2.0]) == [1, 2]
    assert ix.query([0.0]) == [0, 1]
    assert ix.query([3.9]) == [2]


def test_square_corners():
    # every corner's nearest neighbor is a side away, so all four balls
    # have radius 1 and the center (distance sqrt(1/2)) lies inside each
    ix = build([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert ix.query([0.5, 0.5]) == [0, 1, 2, 3]
    assert ix.query([0.5, 0.0]) == [0, 1]
    assert ix.query([0.0, 0.0]) == [0, 1, 2]
    assert ix.query([-1.0, 0.0]) == [0]


def test_query_at_every_data_point_contains_self():
    pts = generate_points("clusters", 150, 2, 4)
    ix = build(pts)
    for i, p in enumerate(pts):
        assert i in ix.query(p)


def test_single_point_answers_everything():
    ix = build([[2.5, -1.0, 7.0]])
    assert ix.query([2.5, -1.0, 7.0]) == [0]
    assert ix.query([1e300, 0.0, 0.0]) == [0]
    assert ix.query([math.nan, 0.0, 0.0]) == [0]


def test_query_dimension_mismatch():
    ix = build([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(InvalidInput):
        ix.query([0.0])
    with pytest.raises(InvalidInput):
        ix.query([0.0, 0.0, 0.0])


def test_nonfinite_queries_are_empty():
    ix = build([[0.0, 0.0], [1.0, 1.0]])
    assert ix.query([math.nan, 0.0]) == []
    assert ix.query([math.inf, 0.0]) == []
    assert ix.query([0.0, -math.inf]) == []


def test_duplicate_points_rejected():
    with pytest.raises(DuplicatePoints) as ei:
        build([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]])
    assert set(ei.value.pair) == {0, 2}


def test_huge_spread_rejected():
    # distinct points that collapse onto one grid cell after normalization
    with pytest.raises(SpreadTooLarge):
        build([[0.0], [1.0], [1e16]])


def test_input_validation():
    with pytest.raises(InvalidInput):
        build(np.empty((0, 2)))
    with pytest.raises(InvalidInput):
        build([[0.0, math.nan], [1.0, 1.0]])


# ----------------------------------------------------------------------
# oracle equivalence on generated instances


@pytest.mark.parametrize("kind", DISTRIBUTIONS)
def test_matches_oracle_mixed_queries(kind):
    for d in (1, 2, 3):
        pts = generate_points(kind, 200, d, 13)
        ix = build(pts)
        _, r_sq = brute_pairs(ix)
        assert_matches_oracle(ix, make_queries(pts, r_sq, ix.point_set.transform, 80, 13))


def test_matches_oracle_tiny_instances():
    for n in (2, 3, 4, 5):
        for seed in range(4):
            pts = generate_points("uniform", n, 2, seed)
            ix = build(pts)
            _, r_sq = brute_pairs(ix)
            assert_matches_oracle(ix, make_queries(pts, r_sq, ix.point_set.transform, 40, seed))


def test_matches_oracle_dyadic_grid():
    """Exactly representable lattices exercise every tie: probes on cell
    boundaries, balls tangent to cells, radii that are powers of two."""
    g = np.stack(np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij"), -1).reshape(-1, 2)
    ix = build(g)
    _, r_sq = brute_pairs(ix)
    probes = [g[i] + off for i in range(16) for off in ([0.5, 0.0], [0.5, 0.5], [1.0, 0.0], [0.0, 0.0])]
    assert_matches_oracle(ix, probes)
    assert_matches_oracle(ix, make_queries(g, r_sq, ix.point_set.transform, 60, 2))


def test_finger_visits_logarithmic():
    for kind in ("uniform", "two_scale"):
        pts = generate_points(kind, 600, 2, 8)
        ix = build(pts)
        _, r_sq = brute_pairs(ix)
        m = ix.finger.record_count
        cap = 2.0 * math.log2(m) + 4.0
        for q in make_queries(pts, r_sq, ix.point_set.transform, 100, 8):
            _, visits = ix.query_counted(q)
            assert visits <= cap


# ----------------------------------------------------------------------
# candidate-list semantics


@pytest.mark.parametrize("kind", DISTRIBUTIONS)
def test_candidate_semantics_on_corpus(kind):
    for d, n in ((1, 130), (2, 130), (3, 60)):
        ix = build(generate_points(kind, n, d, 17))
        report = candidate_semantics_check(ix)
        assert report.passed, report.failures[:5]


def test_candidate_semantics_flags_missing_candidate():
    ix = build([[0.0], [1.0]])
    victim = next(v for v, lst in enumerate(ix.candidate_lists) if len(lst) == 2)
    ix.candidate_lists[victim] = ix.candidate_lists[victim][1:]
    report = candidate_semantics_check(ix)
    assert not report.passed
    assert {"node": victim, "point": 0, "kind": "missing"} in report.failures


def test_candidate_semantics_flags_bogus_candidate():
    pts = generate_points("uniform", 80, 2, 3)
    ix = build(pts)
    deep = max(
        (v for v in range(ix.tree.node_count) if ix.candidate_lists[v]),
        key=lambda v: int(ix.tree.levels[v]),
    )
    box = ix.tree.cell(deep)
    low, side = box.low(), box.side()

    def clamp_sq(p):
        acc = 0.0
        for j in range(2):
            t = max(low[j] - p[j], p[j] - (low[j] + side), 0.0)
            acc += t * t
        return acc

    members = set(ix.candidate_lists[deep])
    pn = ix.point_set.points
    far = max(
        (i for i in range(80) if i not in members),
        key=lambda i: clamp_sq(pn[i]) / float(ix.r_sq[i]),
    )
    assert clamp_sq(pn[far]) > 1.5 * float(ix.r_sq[far])
    ix.candidate_lists[deep] = sorted(ix.candidate_lists[deep] + [far])
    report = candidate_semantics_check(ix)
    assert not report.passed
    kinds = {f["kind"] for f in report.failures if f.get("node") == deep}
    assert kinds & {"no-overlap", "radius-too-small"}


def test_semantics_check_refuses_large_instances():
    ix = build(generate_points("uniform", 50, 2, 0))
    with pytest.raises(InvalidInput):
        candidate_semantics_check(ix, cap=10)


# ----------------------------------------------------------------------
# serialization


def roundtrip(ix):
    blob = ix.to_bytes()
    clone = RnnIndex.from_bytes(blob)
    assert clone.to_bytes() == blob
    return clone


def test_serialization_roundtrip_bit_exact():
    pts = generate_points("clusters", 300, 2, 21)
    ix = build(pts)
    clone = roundtrip(ix)
    _, r_sq = brute_pairs(ix)
    for q in make_queries(pts, r_sq, ix.point_set.transform, 60, 21):
        assert ix.query(q) == clone.query(q)
    assert ix.stats() == clone.stats()


@pytest.mark.parametrize("d", [1, 3])
def test_serialization_roundtrip_other_dims(d):
    ix = build(generate_points("two_scale", 64, d, 5))
    roundtrip(ix)


def test_serialization_single_point():
    ix = build([[4.0, 4.0]])
    clone = roundtrip(ix)
    assert clone.query([0.0, 0.0]) == [0]


def test_build_is_deterministic():
    pts = generate_points("uniform", 400, 2, 30)
    assert build(pts).to_bytes() == build(pts).to_bytes()


def test_serialized_size_matches_stats():
    ix = build(generate_points("uniform", 120, 2, 1))
    assert len(ix.to_bytes()) == ix.stats().serialized_bytes


def test_from_bytes_rejects_corruption():
    blob = build([[0.0, 0.0], [1.0, 3.0]]).to_bytes()
    with pytest.raises(InvalidInput):
        RnnIndex.from_bytes(blob[:40])
    with pytest.raises(InvalidInput):
        RnnIndex.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(InvalidInput):
        RnnIndex.from_bytes(blob + b"\0")


def test_save_load(tmp_path):
    ix = build(generate_points("grid", 90, 2, 2))
    path = tmp_path / "ix.rnnq"
    ix.save(path)
    clone = RnnIndex.load(path)
    assert clone.to_bytes() == ix.to_bytes()


# ----------------------------------------------------------------------
# stats


def test_stats_shape():
    pts = generate_points("uniform", 250, 2, 9)
    ix = build(pts)
    st = ix.stats()
    assert st.n == 250 and st.d == 2
    assert st.node_count == ix.tree.node_count
    assert st.ordinary_count + st.compressed_count == st.node_count
    assert st.max_candidates == max(len(c) for c in ix.candidate_lists)
    assert st.total_candidates == sum(len(c) for c in ix.candidate_lists)
    assert st.finger_depth > 0 and st.finger_records > 0
    assert st.owner_slots == len(ix.owner_ids)


def test_node_count_linear():
    for n in (10, 100, 1000):
        ix = build(generate_points("uniform", n, 2, 3))
        assert ix.tree.node_count <= 4 * (1 << 2) * n + 1
