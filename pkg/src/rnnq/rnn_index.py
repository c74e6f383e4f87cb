"""Reverse nearest-neighbor index over static points.

The index stores each point's empty ball (centered at the point, reaching its
nearest neighbor), covers every ball with the few grid boxes of side
comparable to its radius (two per axis generically, three when the ball ends
on a cell boundary), builds the compressed quadtree of those boxes, and
pushes per-node candidate lists down the tree: a point is a candidate at a
node when its ball is large relative to the node's cell and touches it. A
query then normalizes the probe, walks the finger structure to the leaf cell
containing it, and keeps the candidates whose balls contain the probe.

Everything here is deterministic: rebuilding from the same input yields the
same arrays, the same candidate order, and byte-identical serialization.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .allnn import all_nearest_neighbors
from .errors import DuplicatePoints, InvalidInput, SpreadTooLarge
from .geometry import (
    KEY_BITS,
    KEY_MAX,
    KEY_SCALE,
    MAX_BALL_LEVEL,
    PointSet,
    QtBox,
    Transform,
    grid_keys,
    level_for_radius,
    normalize,
    padded_reach_sq,
    point_key,
)
from .quadtree import (
    KIND_COMPRESSED,
    KIND_ORDINARY,
    SPLIT_LEAF,
    CompressedQuadtree,
    FingerTree,
    _MODE_BUCKET,
    build_compressed_quadtree_arrays,
    build_finger_tree,
)

_MAGIC = b"RNNQ"
_FORMAT_VERSION = 1

# cell side lengths by level, so the propagation loop never recomputes powers
_SIDE = [2.0 ** (1 - lv) for lv in range(KEY_BITS + 1)]

_EMPTY: list[int] = []


def boxes_for_ball(p: Sequence[float], r_sq: float) -> list[QtBox]:
    """Grid boxes of side in [2r, 4r) covering the ball's bounding box.

    Per axis the covered range is the cells spanning [p_j - r, p_j + r],
    widened by one grid key on each side. The widening guards against the
    rounding gap between this range and the distance filter: a probe the
    filter accepts can key up to one grid unit past the computed bounds, and
    it must still land inside a covered box. Generically each axis spans one
    or two cells (at most 2^d boxes overall); only a ball whose extent ends
    within one grid key of a cell boundary picks up the tangent neighbor as
    a third. The result is a superset of the boxes the ball strictly
    overlaps, deduplicated by construction.
    """
    if not (r_sq > 0.0) or not math.isfinite(r_sq):
        raise InvalidInput(f"ball radius squared must be positive and finite, got {r_sq}")
    r = math.sqrt(r_sq)
    k = max(level_for_radius(r), 0)
    shift = KEY_BITS - k
    ranges = []
    for c in p:
        lo = max(point_key(c - r) - 1, 0) >> shift
        hi = min(point_key(c + r) + 1, KEY_MAX) >> shift
        ranges.append(range(lo, hi + 1))
    return [QtBox(k, anchor) for anchor in itertools.product(*ranges)]


def _h_boxes(
    points: np.ndarray, r_sq: np.ndarray, nn: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All balls' boxes at once: (levels, anchors, owner point ids).

    Vectorized mirror of boxes_for_ball; the per-element arithmetic is the
    same, so the two agree exactly.
    """
    n, d = points.shape
    r = np.sqrt(r_sq)
    frac, expo = np.frexp(r)
    k = np.where(frac == 0.5, 1 - expo, -expo).astype(np.int64)
    if k.max() > MAX_BALL_LEVEL:
        i = int(k.argmax())
        raise SpreadTooLarge(
            f"points {i} and {int(nn[i])} are so close relative to the point "
            f"spread that their empty ball falls below the grid resolution"
        )
    np.maximum(k, 0, out=k)

    one = np.uint64(1)
    shift = (KEY_BITS - k).astype(np.uint64)
    lo_key = grid_keys(points - r[:, None])
    np.maximum(lo_key, one, out=lo_key)
    lo_key -= one
    hi_key = grid_keys(points + r[:, None]) + one
    np.minimum(hi_key, np.uint64(KEY_MAX), out=hi_key)
    lo = lo_key >> shift[:, None]
    hi = hi_key >> shift[:, None]
    span = (hi - lo).astype(np.int64)
    assert int(span.max()) <= 2, "a ball extent crossed three cell boundaries"

    owner_base = np.arange(n, dtype=np.int64)
    out_levels = []
    out_anchors = []
    out_owners = []
    for combo in itertools.product(range(3), repeat=d):
        step = np.array(combo, dtype=np.uint64)
        if any(combo):
            sel = np.logical_and.reduce([span[:, j] >= combo[j] for j in range(d)])
            if not sel.any():
                continue
            anchors = lo[sel] + step
            out_levels.append(k[sel])
            out_owners.append(owner_base[sel])
        else:
            anchors = lo.copy()
            out_levels.append(k)
            out_owners.append(owner_base)
        out_anchors.append(anchors)
    return (
        np.concatenate(out_levels),
        np.concatenate(out_anchors),
        np.concatenate(out_owners),
    )


def _stored_owners(
    tree: CompressedQuadtree,
    box_levels: np.ndarray,
    box_anchors: np.ndarray,
    box_owners: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Group ball owners by the marked node holding each of their boxes.

    Returns (offsets, ids): node v owns ids[offsets[v]:offsets[v+1]], sorted
    ascending. Also asserts the structural invariant that every derived box
    is present in the tree as a marked cell.
    """
    marked_ids = np.flatnonzero(tree.marked)
    marked_rows = np.column_stack(
        [tree.levels[marked_ids].astype(np.uint64), tree.anchors[marked_ids]]
    )
    box_rows = np.column_stack([box_levels.astype(np.uint64), box_anchors])
    rows = np.concatenate([marked_rows, box_rows])
    _, inverse = np.unique(rows, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    m = len(marked_ids)
    group_node = np.full(inverse.max() + 1, -1, dtype=np.int64)
    group_node[inverse[:m]] = marked_ids
    nodes = group_node[inverse[m:]]
    assert (nodes >= 0).all(), "derived ball box missing from the marked cells"

    order = np.lexsort((box_owners, nodes))
    counts = np.bincount(nodes, minlength=tree.node_count)
    offsets = np.zeros(tree.node_count + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, box_owners[order]


def _propagate_candidates(
    tree: CompressedQuadtree,
    points: np.ndarray,
    r_sq: np.ndarray,
    owner_offsets: np.ndarray,
    owner_ids: np.ndarray,
) -> list[list[int]]:
    """Per-node candidate lists, filled in preorder.

    An ordinary node filters its parent's list plus its own stored owners by
    ball/cell overlap (owners included: a corner box from the bounding-box
    product may miss the ball itself, and dropping it early keeps the list
    size bound tight). A compressed node reuses the parent list as is; its
    annulus is covered by the enclosing cell the list was filtered against.
    The overlap test compares against padded_reach_sq rather than the bare
    radius, so candidates survive for probes that key into the cell from a
    rounding hair outside it. Lists stay sorted ascending and are never
    mutated afterwards.
    """
    kinds = tree.kinds.tolist()
    parents = tree.parents.tolist()
    levels = tree.levels.tolist()
    anchors = tree.anchors.tolist()
    offs = owner_offsets.tolist()
    owners = owner_ids.tolist()
    pts = points.tolist()
    d = tree.d
    bounds = np.asarray(padded_reach_sq(r_sq, d)).tolist()
    axes = range(d)

    cands: list[list[int]] = [_EMPTY] * tree.node_count
    for v in range(tree.node_count):
        par = parents[v]
        if kinds[v] == KIND_COMPRESSED:
            cands[v] = cands[par]
            continue
        base = cands[par] if par >= 0 else _EMPTY
        o0 = offs[v]
        o1 = offs[v + 1]
        src = sorted(base + owners[o0:o1]) if o1 > o0 else base
        if not src:
            continue
        side = _SIDE[levels[v]]
        anc = anchors[v]
        out = []
        for i in src:
            p = pts[i]
            bound = bounds[i]
            acc = 0.0
            ok = True
            for j in axes:
                c = p[j]
                low = -1.0 + anc[j] * side
                if c < low:
                    t = low - c
                else:
                    high = low + side
                    if c <= high:
                        continue
                    t = c - high
                acc += t * t
                if acc > bound:
                    ok = False
                    break
            if ok:
                out.append(i)
        cands[v] = out if out else _EMPTY
    return cands


def build(points) -> "RnnIndex":
    """Build the index for an (n, d) array of distinct finite points."""
    original = np.asarray(points, dtype=np.float64)
    ps = normalize(original)
    n, d = ps.n, ps.d
    if n == 1:
        nn = np.full(1, -1, dtype=np.int64)
        r_sq = np.full(1, np.inf)
        tree = build_compressed_quadtree_arrays(
            np.empty(0, np.int64), np.empty((0, d), np.uint64), d
        )
        return RnnIndex(
            point_set=ps,
            nn=nn,
            r_sq=r_sq,
            tree=tree,
            finger=build_finger_tree(tree),
            owner_offsets=np.zeros(2, dtype=np.int64),
            owner_ids=np.empty(0, dtype=np.int64),
            candidate_lists=[[]],
        )

    try:
        nn, r_sq = all_nearest_neighbors(ps.points)
    except DuplicatePoints as e:
        i, j = e.pair
        if np.array_equal(original[i], original[j]):
            raise
        raise SpreadTooLarge(
            f"points {i} and {j} differ but land on the same normalized "
            f"coordinates; the spread ratio exceeds float64 resolution"
        ) from e

    box_levels, box_anchors, box_owners = _h_boxes(ps.points, r_sq, nn)
    tree = build_compressed_quadtree_arrays(box_levels, box_anchors, d)
    owner_offsets, owner_ids = _stored_owners(tree, box_levels, box_anchors, box_owners)
    candidate_lists = _propagate_candidates(tree, ps.points, r_sq, owner_offsets, owner_ids)
    finger = build_finger_tree(tree)
    return RnnIndex(
        point_set=ps,
        nn=nn,
        r_sq=r_sq,
        tree=tree,
        finger=finger,
        owner_offsets=owner_offsets,
        owner_ids=owner_ids,
        candidate_lists=candidate_lists,
    )


@dataclass(frozen=True)
class IndexStats:
    n: int
    d: int
    node_count: int
    ordinary_count: int
    compressed_count: int
    leaf_count: int
    marked_count: int
    tree_depth: int
    finger_records: int
    finger_depth: int
    max_candidates: int
    mean_candidates: float
    total_candidates: int
    owner_slots: int
    serialized_bytes: int


class RnnIndex:
    """Immutable query structure; see build() for construction.

    Attributes are read-only by convention: the arrays are frozen and the
    candidate lists must not be mutated.
    """

    def __init__(
        self,
        point_set: PointSet,
        nn: np.ndarray,
        r_sq: np.ndarray,
        tree: CompressedQuadtree,
        finger: FingerTree,
        owner_offsets: np.ndarray,
        owner_ids: np.ndarray,
        candidate_lists: list[list[int]],
    ):
        self.point_set = point_set
        self.nn = nn
        self.r_sq = r_sq
        self.tree = tree
        self.finger = finger
        self.owner_offsets = owner_offsets
        self.owner_ids = owner_ids
        self.candidate_lists = candidate_lists

        # native copies for the query hot path
        self._pts = point_set.points.tolist()
        self._rsq = r_sq.tolist()
        self._center = [float(c) for c in point_set.transform.center]
        self._sigma = float(point_set.transform.sigma)

    @property
    def n(self) -> int:
        return self.point_set.n

    @property
    def d(self) -> int:
        return self.point_set.d

    def _normalized_query(self, qs: list[float]) -> list[float] | None:
        """Probe in normalized coordinates, or None when no ball can reach it."""
        sigma = self._sigma
        y = []
        for j, c in enumerate(self._center):
            v = (qs[j] - c) / sigma
            # non-finite probes and probes outside the root cube are out of
            # reach of every ball (normalized data diameter is at most 1/2)
            if not (-1.0 <= v <= 1.0):
                return None
            y.append(v)
        return y

    def query(self, q) -> list[int]:
        """All point indices whose empty ball contains q, ascending."""
        return self.query_counted(q)[0]

    def query_counted(self, q) -> tuple[list[int], int]:
        """Like query, plus the number of finger records and bucket entries visited."""
        qs = [float(c) for c in q]
        if len(qs) != self.d:
            raise InvalidInput(f"query has {len(qs)} coordinates, index has d={self.d}")
        if len(self._rsq) == 1:
            # the lone point's nearest neighbor in P plus {q} is always q
            return [0], 0
        y = self._normalized_query(qs)
        if y is None:
            return [], 0
        leaf, visits = self.finger.locate_counted(self._key_of(y))
        return self._filter(y, self.candidate_lists[leaf]), visits

    def _key_of(self, y: list[float]) -> list[int]:
        key = []
        for v in y:
            k = int((v + 1.0) * KEY_SCALE)
            key.append(KEY_MAX if k > KEY_MAX else k)
        return key

    def _filter(self, y: list[float], cand: list[int]) -> list[int]:
        pts = self._pts
        rsq = self._rsq
        d = self.d
        out = []
        for i in cand:
            p = pts[i]
            acc = 0.0
            for j in range(d):
                t = y[j] - p[j]
                acc += t * t
            if acc <= rsq[i]:
                out.append(i)
        return out

    def stats(self) -> IndexStats:
        tree = self.tree
        n_nodes = tree.node_count
        parents = tree.parents
        depth = np.zeros(n_nodes, dtype=np.int64)
        depth[0] = 1
        for v in range(1, n_nodes):
            depth[v] = depth[parents[v]] + 1
        lens = [len(c) for c in self.candidate_lists]
        total = sum(lens)
        compressed = int(np.count_nonzero(tree.kinds == KIND_COMPRESSED))
        return IndexStats(
            n=self.n,
            d=self.d,
            node_count=n_nodes,
            ordinary_count=n_nodes - compressed,
            compressed_count=compressed,
            leaf_count=int(np.count_nonzero(tree.split_kinds == SPLIT_LEAF)),
            marked_count=int(np.count_nonzero(tree.marked)),
            tree_depth=int(depth.max()),
            finger_records=self.finger.record_count,
            finger_depth=self.finger.depth,
            max_candidates=max(lens),
            mean_candidates=total / n_nodes,
            total_candidates=total,
            owner_slots=len(self.owner_ids),
            serialized_bytes=self._serialized_size(),
        )

    # ------------------------------------------------------------------
    # serialization: versioned little-endian binary, bit-exact round trip

    def _flat_candidates(self) -> tuple[np.ndarray, np.ndarray]:
        lens = [len(c) for c in self.candidate_lists]
        offsets = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        flat = np.fromiter(
            itertools.chain.from_iterable(self.candidate_lists),
            dtype=np.int64,
            count=int(offsets[-1]),
        )
        return offsets, flat

    def _finger_parts(self) -> dict[str, np.ndarray]:
        fg = self.finger
        kid_lens = [len(s) for s in fg._kids]
        kid_offsets = np.zeros(len(kid_lens) + 1, dtype=np.int64)
        np.cumsum(kid_lens, out=kid_offsets[1:])
        kid_flat = np.fromiter(
            itertools.chain.from_iterable(fg._kids), dtype=np.int64, count=int(kid_offsets[-1])
        )
        bucket_lens = [len(b) if b is not None else 0 for b in fg._buckets]
        bucket_offsets = np.zeros(len(bucket_lens) + 1, dtype=np.int64)
        np.cumsum(bucket_lens, out=bucket_offsets[1:])
        bucket_flat = np.fromiter(
            (e[0] for b in fg._buckets if b for e in b),
            dtype=np.int64,
            count=int(bucket_offsets[-1]),
        )
        return {
            "modes": np.asarray(fg._modes, dtype=np.uint8),
            "nodes": np.asarray(fg._nodes, dtype=np.int64),
            "rests": np.asarray(fg._rests, dtype=np.int64),
            "kid_offsets": kid_offsets,
            "kid_flat": kid_flat,
            "bucket_offsets": bucket_offsets,
            "bucket_flat": bucket_flat,
        }

    def _serialized_size(self) -> int:
        n, d = self.n, self.d
        nn_nodes = self.tree.node_count
        c = len(self.tree.child_ids)
        w = len(self.owner_ids)
        k = sum(len(x) for x in self.candidate_lists)
        fg = self.finger
        f = fg.record_count
        kd = sum(len(s) for s in fg._kids)
        bk = sum(len(b) for b in fg._buckets if b is not None)
        size = 4 + 2 + 2 + 4 + 4 + 8          # magic, version, flags, d, key bits, n
        size += 8 * d + 8                      # transform
        size += 8 * n * d                      # points
        size += 8 * n + 8 * n                  # balls
        size += 8                              # node count
        size += 3 * nn_nodes                   # kinds, split kinds, marked
        size += 8 * nn_nodes * 2 + 8 * nn_nodes * d * 2   # levels/anchors, inner
        size += 8 * nn_nodes * 2               # parents, subtree sizes
        size += 8 * (nn_nodes + 1) + 8 + 8 * c # children
        size += 8 * (nn_nodes + 1) + 8 + 8 * w # owners
        size += 8 * (nn_nodes + 1) + 8 + 8 * k # candidates
        size += 8 + 8 + 8                      # record count, root, depth
        size += f + 8 * f * 2                  # modes, nodes, rests
        size += 8 * (f + 1) + 8 + 8 * kd       # kid slots
        size += 8 * (f + 1) + 8 + 8 * bk       # buckets
        return size

    def to_bytes(self) -> bytes:
        def le(a, dtype) -> bytes:
            return np.ascontiguousarray(a, dtype=dtype).tobytes()

        tree = self.tree
        cand_offsets, cand_flat = self._flat_candidates()
        fp = self._finger_parts()
        parts = [
            _MAGIC,
            struct.pack("<HHIIQ", _FORMAT_VERSION, 0, self.d, KEY_BITS, self.n),
            le(self.point_set.transform.center, "<f8"),
            struct.pack("<d", self.point_set.transform.sigma),
            le(self.point_set.points, "<f8"),
            le(self.nn, "<i8"),
            le(self.r_sq, "<f8"),
            struct.pack("<Q", tree.node_count),
            le(tree.kinds, "<u1"),
            le(tree.split_kinds, "<u1"),
            le(tree.marked, "<u1"),
            le(tree.levels, "<i8"),
            le(tree.anchors, "<u8"),
            le(tree.inner_levels, "<i8"),
            le(tree.inner_anchors, "<u8"),
            le(tree.parents, "<i8"),
            le(tree.subtree_sizes, "<i8"),
            le(tree.child_offsets, "<i8"),
            struct.pack("<Q", len(tree.child_ids)),
            le(tree.child_ids, "<i8"),
            le(self.owner_offsets, "<i8"),
            struct.pack("<Q", len(self.owner_ids)),
            le(self.owner_ids, "<i8"),
            le(cand_offsets, "<i8"),
            struct.pack("<Q", len(cand_flat)),
            le(cand_flat, "<i8"),
            struct.pack("<QqQ", self.finger.record_count, self.finger.root, self.finger.depth),
            le(fp["modes"], "<u1"),
            le(fp["nodes"], "<i8"),
            le(fp["rests"], "<i8"),
            le(fp["kid_offsets"], "<i8"),
            struct.pack("<Q", len(fp["kid_flat"])),
            le(fp["kid_flat"], "<i8"),
            le(fp["bucket_offsets"], "<i8"),
            struct.pack("<Q", len(fp["bucket_flat"])),
            le(fp["bucket_flat"], "<i8"),
        ]
        out = b"".join(parts)
        assert len(out) == self._serialized_size()
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> "RnnIndex":
        cur = _Cursor(data)
        if cur.take(4) != _MAGIC:
            raise InvalidInput("not an index file (bad magic bytes)")
        version, _flags, d, key_bits, n = struct.unpack("<HHIIQ", cur.take(20))
        if version != _FORMAT_VERSION:
            raise InvalidInput(f"unsupported index format version {version}")
        if key_bits != KEY_BITS:
            raise InvalidInput(f"index built with {key_bits} key bits, expected {KEY_BITS}")
        center = cur.array("<f8", d)
        (sigma,) = struct.unpack("<d", cur.take(8))
        points = cur.array("<f8", n * d).reshape(n, d)
        nn = cur.array("<i8", n)
        r_sq = cur.array("<f8", n)
        ps = PointSet(points=points, transform=Transform(center=center, sigma=float(sigma)))

        (n_nodes,) = struct.unpack("<Q", cur.take(8))
        kinds = cur.array("<u1", n_nodes)
        split_kinds = cur.array("<u1", n_nodes)
        marked = cur.array("<u1", n_nodes).astype(bool)
        levels = cur.array("<i8", n_nodes)
        anchors = cur.array("<u8", n_nodes * d).reshape(n_nodes, d)
        inner_levels = cur.array("<i8", n_nodes)
        inner_anchors = cur.array("<u8", n_nodes * d).reshape(n_nodes, d)
        parents = cur.array("<i8", n_nodes)
        subtree_sizes = cur.array("<i8", n_nodes)
        child_offsets = cur.array("<i8", n_nodes + 1)
        (n_children,) = struct.unpack("<Q", cur.take(8))
        child_ids = cur.array("<i8", n_children)
        tree = CompressedQuadtree(
            d=d,
            kinds=kinds,
            split_kinds=split_kinds,
            levels=levels,
            anchors=anchors,
            inner_levels=inner_levels,
            inner_anchors=inner_anchors,
            marked=marked,
            parents=parents,
            subtree_sizes=subtree_sizes,
            child_offsets=child_offsets,
            child_ids=child_ids,
        )

        owner_offsets = cur.array("<i8", n_nodes + 1)
        (n_owner,) = struct.unpack("<Q", cur.take(8))
        owner_ids = cur.array("<i8", n_owner)
        cand_offsets = cur.array("<i8", n_nodes + 1)
        (n_cand,) = struct.unpack("<Q", cur.take(8))
        cand_flat = cur.array("<i8", n_cand).tolist()
        cand_off = cand_offsets.tolist()
        candidate_lists = [cand_flat[cand_off[v]:cand_off[v + 1]] for v in range(n_nodes)]

        n_records, root, fdepth = struct.unpack("<QqQ", cur.take(24))
        modes = cur.array("<u1", n_records).tolist()
        fnodes = cur.array("<i8", n_records).tolist()
        rests = cur.array("<i8", n_records).tolist()
        kid_offsets = cur.array("<i8", n_records + 1).tolist()
        (n_kid,) = struct.unpack("<Q", cur.take(8))
        kid_flat = cur.array("<i8", n_kid).tolist()
        bucket_offsets = cur.array("<i8", n_records + 1).tolist()
        (n_bucket,) = struct.unpack("<Q", cur.take(8))
        bucket_flat = cur.array("<i8", n_bucket).tolist()
        cur.finish()

        finger = _rebuild_finger(
            tree, modes, fnodes, rests, kid_offsets, kid_flat,
            bucket_offsets, bucket_flat, int(root), int(fdepth),
        )
        return cls(
            point_set=ps,
            nn=nn,
            r_sq=r_sq,
            tree=tree,
            finger=finger,
            owner_offsets=owner_offsets,
            owner_ids=owner_ids,
            candidate_lists=candidate_lists,
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RnnIndex":
        return cls.from_bytes(Path(path).read_bytes())


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, nbytes: int) -> bytes:
        end = self.off + nbytes
        if end > len(self.data):
            raise InvalidInput("truncated index file")
        out = self.data[self.off:end]
        self.off = end
        return out

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        self.take(dt.itemsize * count)
        return np.frombuffer(self.data, dt, count, self.off - dt.itemsize * count)

    def finish(self) -> None:
        if self.off != len(self.data):
            raise InvalidInput(f"{len(self.data) - self.off} trailing bytes in index file")


def _rebuild_finger(
    tree: CompressedQuadtree,
    modes: list[int],
    fnodes: list[int],
    rests: list[int],
    kid_offsets: list[int],
    kid_flat: list[int],
    bucket_offsets: list[int],
    bucket_flat: list[int],
    root: int,
    depth: int,
) -> FingerTree:
    """Reattach the routing skeleton to node geometry taken from the tree."""
    kind_l = tree.kinds.tolist()
    level_l = tree.levels.tolist()
    anchor_t = [tuple(row) for row in tree.anchors.tolist()]
    ilevel_l = tree.inner_levels.tolist()
    ianchor_t = [tuple(row) for row in tree.inner_anchors.tolist()]

    levels = []
    anchors: list[tuple] = []
    ilevels = []
    ianchors: list[tuple] = []
    kid_slots = []
    buckets: list[list | None] = []
    for fid, mode in enumerate(modes):
        v = fnodes[fid]
        if mode == _MODE_BUCKET or v < 0:
            levels.append(0)
            anchors.append(())
            ilevels.append(0)
            ianchors.append(())
        else:
            levels.append(level_l[v])
            anchors.append(anchor_t[v])
            ilevels.append(ilevel_l[v])
            ianchors.append(ianchor_t[v])
        kid_slots.append(tuple(kid_flat[kid_offsets[fid]:kid_offsets[fid + 1]]))
        if mode == _MODE_BUCKET:
            entries = []
            for w in bucket_flat[bucket_offsets[fid]:bucket_offsets[fid + 1]]:
                entries.append((w, kind_l[w], level_l[w], anchor_t[w],
                                ilevel_l[w], ianchor_t[w]))
            buckets.append(entries)
        else:
            buckets.append(None)
    return FingerTree(tree.d, modes, fnodes, levels, anchors, ilevels, ianchors,
                      kid_slots, rests, buckets, root, depth)
