"""All nearest neighbors over a static point set.

Builds one median-split partition tree with a single point per leaf and runs
every point's nearest-neighbor search against it. Ties between equidistant
candidates always resolve to the smallest point index, matching the tie rule
used everywhere else in the package.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DuplicatePoints
from .geometry import dist_sq


class KdPartition:
    """Median-split partition of a static point array, one point per leaf.

    Each subset splits on the widest axis of its bounding box at the median
    position, so the tree is balanced regardless of the distribution.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        self.points = [tuple(map(float, row)) for row in pts]
        axis: list[int] = []
        thresh: list[float] = []
        left: list[int] = []
        right: list[int] = []
        owner: list[int] = []

        def build(idx: np.ndarray) -> int:
            node = len(axis)
            axis.append(-1)
            thresh.append(0.0)
            left.append(-1)
            right.append(-1)
            owner.append(-1)
            if idx.size == 1:
                owner[node] = int(idx[0])
                return node
            sub = pts[idx]
            a = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
            mid = idx.size // 2
            order = np.argpartition(sub[:, a], mid)
            axis[node] = a
            # left subtree <= thresh <= right subtree on the split axis
            thresh[node] = float(sub[order[mid], a])
            left[node] = build(idx[order[:mid]])
            right[node] = build(idx[order[mid:]])
            return node

        build(np.arange(pts.shape[0], dtype=np.int64))
        self._axis = axis
        self._thresh = thresh
        self._left = left
        self._right = right
        self._owner = owner

    @property
    def node_count(self) -> int:
        return len(self._axis)

    def nearest(self, q: Sequence[float], exclude: int = -1) -> tuple[int, float]:
        """Index and squared distance of the point nearest to ``q``.

        Ties go to the smallest index. ``exclude`` skips one point, which
        lets a point search for its own nearest neighbor. Returns (-1, inf)
        when every point is excluded.
        """
        axis = self._axis
        thresh = self._thresh
        left = self._left
        right = self._right
        owner = self._owner
        points = self.points
        best = math.inf
        best_j = -1
        stack = [(0, 0.0)]
        while stack:
            node, gap_sq = stack.pop()
            if gap_sq > best:
                continue
            a = axis[node]
            while a >= 0:
                t = thresh[node]
                qa = q[a]
                if qa <= t:
                    far = right[node]
                    node = left[node]
                    g = t - qa
                else:
                    far = left[node]
                    node = right[node]
                    g = qa - t
                gsq = g * g
                # keep equal-gap subtrees: a tied point with a smaller index
                # may live exactly on the splitting plane
                if gsq <= best:
                    stack.append((far, gsq))
                a = axis[node]
            j = owner[node]
            if j != exclude:
                dsq = dist_sq(q, points[j])
                if dsq < best or (dsq == best and j < best_j):
                    best = dsq
                    best_j = j
        return best_j, best


def all_nearest_neighbors(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor index and squared radius for every point.

    Returns (nn, r_sq) arrays; a single point has no neighbor and gets
    (-1, inf). Raises DuplicatePoints as soon as any radius collapses to
    zero, naming one offending pair.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 1:
        return np.array([-1], dtype=np.int64), np.array([math.inf])
    tree = KdPartition(pts)
    nn = np.empty(n, dtype=np.int64)
    r_sq = np.empty(n, dtype=np.float64)
    for i in range(n):
        j, dsq = tree.nearest(tree.points[i], exclude=i)
        if dsq == 0.0:
            raise DuplicatePoints((i, j))
        nn[i] = j
        r_sq[i] = dsq
    return nn, r_sq
