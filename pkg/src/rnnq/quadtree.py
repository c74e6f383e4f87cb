"""Compressed quadtree over dyadic boxes, with separator-based point location.

The tree is built bottom-up in Morton (Z-) order: box corners are sorted by
their interleaved key bits, the set is closed under smallest containing boxes
of consecutive pairs, and the hierarchy falls out of one stack pass over the
sorted sequence. The output matches the textbook top-down recursive
construction node for node (the test suite compares against one directly) but
costs O(m log m) no matter how deeply the boxes nest.

Point location comes in two flavors: plain root descent, and a finger
structure built by recursive centroid splitting whose routing path stays
logarithmic in the node count even when the tree is one long chain of zooms.

Node cells partition the root cube H = [-1, 1)^d. An ordinary node's cell is
its box; internal nodes split either into the 2^d quadrants (all of them
materialized, empty ones as leaves) or into a zoom pair {inner box, box minus
inner box}, whose second member is a compressed leaf.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInput
from .geometry import KEY_BITS, QtBox, root_box

KIND_ORDINARY = 0
KIND_COMPRESSED = 1

SPLIT_LEAF = 0
SPLIT_QUAD = 1
SPLIT_ZOOM = 2

_WORD_BITS = 64

# components at most this large become linear-scan buckets in the finger
# tree; keeps the build cheap while the visit bound stays comfortably inside
# 2*log2(m) + 4 (ceil(log2 m) - 2 routing hops plus at most 8 scans)
_BUCKET_SIZE = 8


def _zorder_words(corners: np.ndarray) -> np.ndarray:
    """Interleave per-axis corner keys into big-endian uint64 words.

    Bit layout: axis 0 contributes the most significant bit of each
    d-bit chunk, chunks ordered from key bit KEY_BITS-1 down. Sorting rows
    lexicographically by these words sorts boxes in Z-order.
    """
    m, d = corners.shape
    total = KEY_BITS * d
    n_words = -(-total // _WORD_BITS)
    words = np.zeros((m, n_words), dtype=np.uint64)
    one = np.uint64(1)
    for g in range(total):
        axis = g % d
        src = np.uint64(KEY_BITS - 1 - g // d)
        w, b = divmod(g, _WORD_BITS)
        bit = (corners[:, axis] >> src) & one
        words[:, w] |= bit << np.uint64(_WORD_BITS - 1 - b)
    return words


def _zsort(levels: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Permutation sorting boxes in Z-order, ancestors before descendants."""
    words = _zorder_words(corners)
    keys = [levels] + [words[:, w] for w in range(words.shape[1] - 1, -1, -1)]
    return np.lexsort(tuple(keys))


def _corner_prefix_levels(corners: np.ndarray) -> np.ndarray:
    """For consecutive rows: deepest level at which both corners share a box.

    Exact: corner XORs are < 2^KEY_BITS, so float64 conversion is lossless
    and frexp reads off the most significant differing bit.
    """
    x = (corners[:-1] ^ corners[1:]).astype(np.float64)
    _, e = np.frexp(x)
    msb = e.max(axis=1) - 1  # -1 where the corners coincide
    return KEY_BITS - 1 - msb.astype(np.int64)


class CompressedQuadtree:
    """Immutable arena of quadtree nodes in depth-first preorder.

    Node ids are preorder positions, so the subtree of v occupies the
    contiguous id range [v, v + subtree_sizes[v]). Children of a quadrant
    split are stored in quadrant-index order; children of a zoom split are
    (inner box node, compressed remainder).
    """

    def __init__(
        self,
        d: int,
        kinds: np.ndarray,
        split_kinds: np.ndarray,
        levels: np.ndarray,
        anchors: np.ndarray,
        inner_levels: np.ndarray,
        inner_anchors: np.ndarray,
        marked: np.ndarray,
        parents: np.ndarray,
        subtree_sizes: np.ndarray,
        child_offsets: np.ndarray,
        child_ids: np.ndarray,
    ):
        self.d = d
        self.kinds = kinds
        self.split_kinds = split_kinds
        self.levels = levels
        self.anchors = anchors
        self.inner_levels = inner_levels
        self.inner_anchors = inner_anchors
        self.marked = marked
        self.parents = parents
        self.subtree_sizes = subtree_sizes
        self.child_offsets = child_offsets
        self.child_ids = child_ids
        self._marked_lookup: dict[QtBox, int] | None = None
        for a in (kinds, split_kinds, levels, anchors, inner_levels, inner_anchors,
                  marked, parents, subtree_sizes, child_offsets, child_ids):
            a.flags.writeable = False

    @property
    def node_count(self) -> int:
        return len(self.kinds)

    def cell(self, v: int) -> QtBox:
        return QtBox(int(self.levels[v]), tuple(int(a) for a in self.anchors[v]))

    def inner_box(self, v: int) -> QtBox | None:
        """The hole of a compressed node or the dense box of a zoom node.

        Inner boxes always have level >= 1 (they are strict sub-boxes), so
        level 0 doubles as "none".
        """
        lv = int(self.inner_levels[v])
        if lv == 0:
            return None
        return QtBox(lv, tuple(int(a) for a in self.inner_anchors[v]))

    def children(self, v: int) -> list[int]:
        return self.child_ids[self.child_offsets[v]:self.child_offsets[v + 1]].tolist()

    def is_leaf(self, v: int) -> bool:
        return self.split_kinds[v] == SPLIT_LEAF

    def marked_node(self, box: QtBox) -> int | None:
        """Node id whose cell is exactly this input box, if the box was built in."""
        if self._marked_lookup is None:
            lookup = {}
            for v in np.flatnonzero(self.marked):
                lookup[self.cell(int(v))] = int(v)
            self._marked_lookup = lookup
        return self._marked_lookup.get(box)

    def cell_set(self) -> frozenset:
        """All node cells as comparable tuples; the structural fingerprint.

        Ordinary nodes appear as ("ord", box), compressed leaves as
        ("comp", outer, inner).
        """
        out = []
        for v in range(self.node_count):
            if self.kinds[v] == KIND_COMPRESSED:
                out.append(("comp", self.cell(v), self.inner_box(v)))
            else:
                out.append(("ord", self.cell(v)))
        return frozenset(out)


def build_compressed_quadtree(
    boxes: Iterable[QtBox], *, d: int | None = None
) -> CompressedQuadtree:
    """Build the compressed quadtree whose marked cells are exactly ``boxes``."""
    boxes = list(boxes)
    if not boxes:
        if d is None:
            raise InvalidInput("cannot infer dimension from an empty box set")
        return build_compressed_quadtree_arrays(
            np.empty(0, np.int64), np.empty((0, d), np.uint64), d
        )
    dd = boxes[0].d if d is None else d
    levels = np.array([b.level for b in boxes], dtype=np.int64)
    anchors = np.array([b.anchor for b in boxes], dtype=np.uint64).reshape(len(boxes), dd)
    return build_compressed_quadtree_arrays(levels, anchors, dd)


def build_compressed_quadtree_arrays(
    levels: np.ndarray, anchors: np.ndarray, d: int
) -> CompressedQuadtree:
    """Array-shaped fast path of build_compressed_quadtree.

    ``levels`` (m,) and ``anchors`` (m, d) describe one box per row.
    Duplicates are tolerated; boxes outside the root cube are rejected.
    """
    if d < 1:
        raise InvalidInput(f"dimension must be >= 1, got {d}")
    levels = np.asarray(levels, dtype=np.int64).reshape(-1)
    anchors = np.asarray(anchors, dtype=np.uint64).reshape(-1, d)
    if len(levels) != len(anchors):
        raise InvalidInput("levels and anchors disagree on the number of boxes")
    if len(levels) and (levels.min() < 0 or levels.max() > KEY_BITS):
        raise InvalidInput("box level outside [0, KEY_BITS]")
    if len(levels) and np.any(anchors >> levels.astype(np.uint64)[:, None]):
        raise InvalidInput("box anchor outside the root cube")

    m = len(levels)
    shift = (KEY_BITS - levels).astype(np.uint64)
    corners = anchors << shift[:, None]

    # Morton pass over the inputs: consecutive smallest containing boxes are
    # enough to close the whole set under pairwise containment
    scb_levels = np.empty(0, np.int64)
    scb_corners = np.empty((0, d), np.uint64)
    if m > 1:
        order = _zsort(levels, corners)
        s_levels = levels[order]
        s_corners = corners[order]
        k = np.minimum(
            _corner_prefix_levels(s_corners),
            np.minimum(s_levels[:-1], s_levels[1:]),
        )
        scb_levels = k
        scb_shift = (KEY_BITS - k).astype(np.uint64)
        scb_corners = (s_corners[:-1] >> scb_shift[:, None]) << scb_shift[:, None]

    all_levels = np.concatenate([levels, [0], scb_levels])
    all_corners = np.concatenate([corners, np.zeros((1, d), np.uint64), scb_corners])
    rows = np.column_stack([all_levels.astype(np.uint64), all_corners])
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    core_marked = np.zeros(len(uniq), dtype=bool)
    core_marked[inverse.reshape(-1)[:m]] = True

    core_levels = uniq[:, 0].astype(np.int64)
    core_corners = np.ascontiguousarray(uniq[:, 1:])
    order = _zsort(core_levels, core_corners)
    core_levels = core_levels[order]
    core_corners = core_corners[order]
    core_marked = core_marked[order]
    n_core = len(core_levels)
    assert core_levels[0] == 0, "root must sort first"

    # one stack pass reads the hierarchy off the Z-order: the parent of each
    # box is the nearest earlier box that contains it, and containment
    # reduces to corner-prefix levels, which chain as running minima
    prefix = _corner_prefix_levels(core_corners) if n_core > 1 else np.empty(0, np.int64)
    pf = prefix.tolist()
    lv = core_levels.tolist()
    parent = [-1] * n_core
    stack = [(0, KEY_BITS)]
    for i in range(1, n_core):
        run = pf[i - 1]
        while True:
            top, carry = stack[-1]
            if lv[top] <= lv[i] and lv[top] <= run:
                break
            run = carry if carry < run else run
            stack.pop()
        parent[i] = top
        stack.append((i, run))

    core_children: list[list[int]] = [[] for _ in range(n_core)]
    for i in range(1, n_core):
        core_children[parent[i]].append(i)

    return _materialize(d, lv, core_corners, core_children, core_marked.tolist())


def _materialize(
    d: int,
    core_levels: list[int],
    core_corners: np.ndarray,
    core_children: list[list[int]],
    core_marked: list[bool],
) -> CompressedQuadtree:
    """Expand the core hierarchy into the full node arena in preorder.

    Core nodes with one child become zoom splits; with several children,
    quadrant splits in which every quadrant is materialized (a recursed core
    node, a zoom pair around it, or an empty leaf).
    """
    corner_cols = [core_corners[:, j].tolist() for j in range(d)]
    n_quadrants = 1 << d

    kinds: list[int] = []
    splits: list[int] = []
    levels: list[int] = []
    anchor_cols: list[list[int]] = [[] for _ in range(d)]
    inner_levels: list[int] = []
    inner_cols: list[list[int]] = [[] for _ in range(d)]
    marked: list[bool] = []
    parents: list[int] = []
    subtree: list[int] = []
    children: list[tuple] = []

    def new_node(kind, split, level, anchor, ilevel, ianchor, mk, parent_id):
        nid = len(kinds)
        kinds.append(kind)
        splits.append(split)
        levels.append(level)
        for j in range(d):
            anchor_cols[j].append(anchor[j])
        inner_levels.append(ilevel)
        for j in range(d):
            inner_cols[j].append(ianchor[j] if ianchor is not None else 0)
        marked.append(mk)
        parents.append(parent_id)
        subtree.append(1)
        children.append(())
        return nid

    def core_box(ci):
        level = core_levels[ci]
        sh = KEY_BITS - level
        return level, tuple(corner_cols[j][ci] >> sh for j in range(d))

    def rec(ci: int, parent_id: int) -> int:
        level, anchor = core_box(ci)
        kids = core_children[ci]
        nid = new_node(KIND_ORDINARY, SPLIT_LEAF, level, anchor, 0, None,
                       core_marked[ci], parent_id)
        if not kids:
            return nid
        if len(kids) == 1:
            ci2 = kids[0]
            ilevel, ianchor = core_box(ci2)
            splits[nid] = SPLIT_ZOOM
            inner_levels[nid] = ilevel
            for j in range(d):
                inner_cols[j][nid] = ianchor[j]
            a = rec(ci2, nid)
            b = new_node(KIND_COMPRESSED, SPLIT_LEAF, level, anchor,
                         ilevel, ianchor, False, nid)
            children[nid] = (a, b)
        else:
            splits[nid] = SPLIT_QUAD
            qshift = KEY_BITS - level - 1
            by_quadrant: dict[int, int] = {}
            for c in kids:
                q = 0
                for j in range(d):
                    q |= ((corner_cols[j][c] >> qshift) & 1) << j
                assert q not in by_quadrant, "containment closure violated"
                by_quadrant[q] = c
            qlevel = level + 1
            ids = []
            for q in range(n_quadrants):
                qanchor = tuple(anchor[j] * 2 + ((q >> j) & 1) for j in range(d))
                c = by_quadrant.get(q)
                if c is None:
                    ids.append(new_node(KIND_ORDINARY, SPLIT_LEAF, qlevel, qanchor,
                                        0, None, False, nid))
                elif core_levels[c] == qlevel:
                    ids.append(rec(c, nid))
                else:
                    ilevel, ianchor = core_box(c)
                    z = new_node(KIND_ORDINARY, SPLIT_ZOOM, qlevel, qanchor,
                                 ilevel, ianchor, False, nid)
                    a = rec(c, z)
                    b = new_node(KIND_COMPRESSED, SPLIT_LEAF, qlevel, qanchor,
                                 ilevel, ianchor, False, z)
                    children[z] = (a, b)
                    subtree[z] = len(kinds) - z
                    ids.append(z)
            children[nid] = tuple(ids)
        subtree[nid] = len(kinds) - nid
        return nid

    rec(0, -1)

    n = len(kinds)
    child_offsets = np.zeros(n + 1, dtype=np.int64)
    child_offsets[1:] = np.cumsum([len(c) for c in children])
    flat = [c for tup in children for c in tup]
    return CompressedQuadtree(
        d=d,
        kinds=np.array(kinds, dtype=np.uint8),
        split_kinds=np.array(splits, dtype=np.uint8),
        levels=np.array(levels, dtype=np.int64),
        anchors=np.array(anchor_cols, dtype=np.uint64).T.copy(),
        inner_levels=np.array(inner_levels, dtype=np.int64),
        inner_anchors=np.array(inner_cols, dtype=np.uint64).T.copy(),
        marked=np.array(marked, dtype=bool),
        parents=np.array(parents, dtype=np.int64),
        subtree_sizes=np.array(subtree, dtype=np.int64),
        child_offsets=child_offsets,
        child_ids=np.array(flat, dtype=np.int64) if flat else np.empty(0, np.int64),
    )


def locate_descend(tree: CompressedQuadtree, key: Sequence[int]) -> int:
    """Leaf whose cell contains the grid key, by walking down from the root."""
    d = tree.d
    v = 0
    while tree.split_kinds[v] != SPLIT_LEAF:
        kids = tree.child_ids
        off = int(tree.child_offsets[v])
        if tree.split_kinds[v] == SPLIT_QUAD:
            shift = KEY_BITS - int(tree.levels[v]) - 1
            q = 0
            for j in range(d):
                q |= ((key[j] >> shift) & 1) << j
            v = int(kids[off + q])
        else:
            ilv = int(tree.inner_levels[v])
            sh = KEY_BITS - ilv
            inner = True
            for j in range(d):
                if (key[j] >> sh) != int(tree.inner_anchors[v, j]):
                    inner = False
                    break
            v = int(kids[off]) if inner else int(kids[off + 1])
    return v


def _concat_ranges(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    nz = lens > 0
    s = starts[nz]
    l = lens[nz]
    if s.size == 0:
        return np.empty(0, dtype=np.int64)
    ends = np.cumsum(l)
    out = np.ones(int(ends[-1]), dtype=np.int64)
    out[0] = s[0]
    out[ends[:-1]] = s[1:] - (s[:-1] + l[:-1] - 1)
    return np.cumsum(out)


_MODE_ORD_LEAF = 0
_MODE_QUAD = 1
_MODE_ZOOM = 2
_MODE_COMP_LEAF = 3
_MODE_BUCKET = 4


class FingerTree:
    """Centroid decomposition of the quadtree for O(log m) point location.

    Each record routes by one geometric test on the separator node's box:
    inside goes to the child piece that must hold the answer, outside goes to
    the rest piece. Components of at most _BUCKET_SIZE nodes are stored as
    flat buckets and scanned directly.
    """

    def __init__(self, d, modes, nodes, levels, anchors, ilevels, ianchors,
                 kid_slots, rests, buckets, root, depth):
        self.d = d
        self._modes = modes
        self._nodes = nodes
        self._levels = levels
        self._anchors = anchors
        self._ilevels = ilevels
        self._ianchors = ianchors
        self._kids = kid_slots
        self._rests = rests
        self._buckets = buckets
        self.root = root
        self.depth = depth

    @property
    def record_count(self) -> int:
        return len(self._modes)

    def locate(self, key: Sequence[int]) -> int:
        return self.locate_counted(key)[0]

    def locate_counted(self, key: Sequence[int]) -> tuple[int, int]:
        """Leaf id plus the number of finger records and bucket entries examined."""
        d = self.d
        modes = self._modes
        f = self.root
        visits = 0
        while True:
            visits += 1
            mode = modes[f]
            if mode == _MODE_BUCKET:
                for node, kind, level, anchor, ilevel, ianchor in self._buckets[f]:
                    sh = KEY_BITS - level
                    inside = True
                    for j in range(d):
                        if (key[j] >> sh) != anchor[j]:
                            inside = False
                            break
                    if inside and kind == KIND_COMPRESSED:
                        ish = KEY_BITS - ilevel
                        hole = True
                        for j in range(d):
                            if (key[j] >> ish) != ianchor[j]:
                                hole = False
                                break
                        inside = not hole
                    if inside:
                        return node, visits
                    visits += 1
                raise AssertionError("bucket scan exhausted; key outside component")
            level = self._levels[f]
            sh = KEY_BITS - level
            anchor = self._anchors[f]
            inside = True
            for j in range(d):
                if (key[j] >> sh) != anchor[j]:
                    inside = False
                    break
            if not inside:
                f = self._rests[f]
            elif mode == _MODE_ORD_LEAF:
                return self._nodes[f], visits
            elif mode == _MODE_QUAD:
                q = 0
                qsh = sh - 1
                for j in range(d):
                    q |= ((key[j] >> qsh) & 1) << j
                f = self._kids[f][q]
            else:
                ilevel = self._ilevels[f]
                ish = KEY_BITS - ilevel
                ianchor = self._ianchors[f]
                hole = True
                for j in range(d):
                    if (key[j] >> ish) != ianchor[j]:
                        hole = False
                        break
                if mode == _MODE_COMP_LEAF:
                    if not hole:
                        return self._nodes[f], visits
                    f = self._rests[f]
                else:
                    f = self._kids[f][0] if hole else self._kids[f][1]
            assert f >= 0, "routed into an empty component"


def build_finger_tree(tree: CompressedQuadtree) -> FingerTree:
    """Recursively split the node set at centroids into a routing hierarchy.

    The separator of each component minimizes the largest remaining piece,
    which is then at most half the component, so both the build recursion and
    every locate path are logarithmic in the node count.
    """
    d = tree.d
    n = tree.node_count
    sz = tree.subtree_sizes
    child_off = tree.child_offsets
    child_ids = tree.child_ids

    kind_l = tree.kinds.tolist()
    split_l = tree.split_kinds.tolist()
    level_l = tree.levels.tolist()
    anchor_t = [tuple(int(a) for a in row) for row in tree.anchors]
    ilevel_l = tree.inner_levels.tolist()
    ianchor_t = [tuple(int(a) for a in row) for row in tree.inner_anchors]

    modes: list[int] = []
    nodes: list[int] = []
    levels: list[int] = []
    anchors: list[tuple] = []
    ilevels: list[int] = []
    ianchors: list[tuple] = []
    kid_slots: list[tuple] = []
    rests: list[int] = []
    buckets: list[list | None] = []
    max_depth = 0

    def new_record() -> int:
        fid = len(modes)
        modes.append(0)
        nodes.append(-1)
        levels.append(0)
        anchors.append(())
        ilevels.append(0)
        ianchors.append(())
        kid_slots.append(())
        rests.append(-1)
        buckets.append(None)
        return fid

    def rec(comp: np.ndarray, depth: int) -> int:
        nonlocal max_depth
        if depth > max_depth:
            max_depth = depth
        fid = new_record()
        if len(comp) <= _BUCKET_SIZE:
            entries = []
            for v in comp.tolist():
                if split_l[v] != SPLIT_LEAF:
                    continue
                entries.append((v, kind_l[v], level_l[v], anchor_t[v],
                                ilevel_l[v], ianchor_t[v]))
            modes[fid] = _MODE_BUCKET
            buckets[fid] = entries
            return fid

        size = len(comp)
        pos = np.arange(size, dtype=np.int64)
        cnt = np.searchsorted(comp, comp + sz[comp]) - pos
        off0 = child_off[comp]
        lens = child_off[comp + 1] - off0
        total = int(lens.sum())
        child_max = np.zeros(size, dtype=np.int64)
        if total:
            flat = child_ids[_concat_ranges(off0, lens)]
            p = np.searchsorted(comp, flat)
            p_safe = np.minimum(p, size - 1)
            in_comp = comp[p_safe] == flat
            ccnt = np.where(in_comp, cnt[p_safe], 0)
            starts = np.zeros(size, dtype=np.int64)
            starts[1:] = np.cumsum(lens)[:-1]
            nonempty = lens > 0
            # reduceat only over nonempty segments: the flat child array is
            # exactly their concatenation, so those starts partition it
            child_max[nonempty] = np.maximum.reduceat(ccnt, starts[nonempty])
        score = np.maximum(child_max, size - cnt)
        v_pos = int(np.argmin(score))
        v = int(comp[v_pos])
        v_cnt = int(cnt[v_pos])

        rest = np.concatenate([comp[:v_pos], comp[v_pos + v_cnt:]])
        split = split_l[v]
        modes[fid] = (_MODE_COMP_LEAF if kind_l[v] == KIND_COMPRESSED else _MODE_ORD_LEAF) \
            if split == SPLIT_LEAF else (_MODE_QUAD if split == SPLIT_QUAD else _MODE_ZOOM)
        nodes[fid] = v
        levels[fid] = level_l[v]
        anchors[fid] = anchor_t[v]
        ilevels[fid] = ilevel_l[v]
        ianchors[fid] = ianchor_t[v]

        slots = []
        for c in child_ids[child_off[v]:child_off[v + 1]].tolist():
            lo = int(np.searchsorted(comp, c))
            if lo < size and comp[lo] == c:
                hi = int(np.searchsorted(comp, c + int(sz[c])))
                slots.append(rec(comp[lo:hi], depth + 1))
            else:
                slots.append(-1)
        kid_slots[fid] = tuple(slots)
        rests[fid] = rec(rest, depth + 1) if len(rest) else -1
        return fid

    root = rec(np.arange(n, dtype=np.int64), 1)
    return FingerTree(d, modes, nodes, levels, anchors, ilevels, ianchors,
                      kid_slots, rests, buckets, root, max_depth)
