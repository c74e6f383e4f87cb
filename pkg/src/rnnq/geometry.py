"""Grid geometry: normalization, dyadic boxes, keys, and overlap predicates.

Everything downstream works in normalized coordinates inside H = [-1, 1]^d.
Input points are shifted and scaled so that they occupy a cube of side
1/(2*sqrt(d)) centered at the origin; empty-ball radii then never exceed 1/2,
so every ball centered at a data point stays well inside H.

Grid keys quantize each axis into 2^KEY_BITS half-open cells of width
2^(1-KEY_BITS). A box at level k is an axis-aligned cube of side 2^(1-k)
anchored at a multiple of its side; box bounds are exactly representable in
float64, which keeps containment tests and point location free of rounding
surprises. The one deliberately inexact predicate, ball_box_overlap, errs on
the side of reporting an overlap (see OVERLAP_SLACK).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidInput, SpreadTooLarge

KEY_BITS = 48
KEY_SCALE = float(1 << (KEY_BITS - 1))
KEY_MAX = (1 << KEY_BITS) - 1

# Deepest level at which a ball may be covered by grid-aligned boxes. Two
# levels above the key resolution, so a covering box always spans at least
# four grid cells per axis and key arithmetic never degenerates.
MAX_BALL_LEVEL = KEY_BITS - 2

# Relative slack for ball/box overlap: comfortably above the worst-case
# rounding of the clamp accumulation (a few ulps), far below any
# geometrically meaningful gap. Overlapping pairs are never rejected.
OVERLAP_SLACK = 1.0 + 2.0**-40


class QtBox(NamedTuple):
    """Dyadic box: ``level`` k and per-axis ``anchor`` in [0, 2^k).

    Covers grid keys in [anchor << (KEY_BITS - k), (anchor + 1) << (KEY_BITS - k))
    per axis, i.e. the half-open cube of side 2^(1-k) at
    -1 + anchor * 2^(1-k). Level 0 is the root [-1, 1)^d; level KEY_BITS is a
    single grid cell.
    """

    level: int
    anchor: tuple[int, ...]

    @property
    def d(self) -> int:
        return len(self.anchor)

    def side(self) -> float:
        return 2.0 ** (1 - self.level)

    def low(self) -> tuple[float, ...]:
        s = self.side()
        return tuple(-1.0 + a * s for a in self.anchor)

    def contains_key(self, key: Sequence[int]) -> bool:
        shift = KEY_BITS - self.level
        return all(k >> shift == a for k, a in zip(key, self.anchor, strict=True))

    def contains_box(self, other: "QtBox") -> bool:
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return all(b >> shift == a for a, b in zip(self.anchor, other.anchor, strict=True))

    def child(self, index: int) -> "QtBox":
        """Child box at level+1; bit j of ``index`` selects the upper half on axis j."""
        anchor = tuple(a * 2 + ((index >> j) & 1) for j, a in enumerate(self.anchor))
        return QtBox(self.level + 1, anchor)

    def quadrant_of_key(self, key: Sequence[int]) -> int:
        shift = KEY_BITS - self.level - 1
        index = 0
        for j, k in enumerate(key):
            index |= ((k >> shift) & 1) << j
        return index


def root_box(d: int) -> QtBox:
    return QtBox(0, (0,) * d)


@dataclass(frozen=True)
class Transform:
    """Affine map from original to normalized coordinates: y = (x - center) / sigma."""

    center: np.ndarray
    sigma: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) / self.sigma

    def apply_point(self, p: Sequence[float]) -> np.ndarray:
        q = np.asarray(p, dtype=np.float64)
        return (q - self.center) / self.sigma


@dataclass(frozen=True)
class PointSet:
    """Normalized points (read-only (n, d) float64) plus the transform that made them."""

    points: np.ndarray
    transform: Transform

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def normalize(points: np.ndarray) -> PointSet:
    """Shift and scale ``points`` into [-1/(4 sqrt d), +1/(4 sqrt d)]^d.

    The center is the midpoint of the bounding box and the scale is
    2 * sqrt(d) * w where w is the largest bounding-box extent (1 if all
    points coincide), so the normalized diameter is at most 1/2.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise InvalidInput(f"points must be a 2-d array, got shape {pts.shape}")
    n, d = pts.shape
    if n < 1 or d < 1:
        raise InvalidInput(f"need at least one point and one axis, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise InvalidInput("points contain a non-finite coordinate")
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    with np.errstate(over="ignore"):
        extent = maxs - mins
    w = float(extent.max())
    if not math.isfinite(w):
        raise SpreadTooLarge(f"bounding-box extent overflows float64 (spread ~{w})")
    center = mins + extent / 2.0
    sigma = 2.0 * math.sqrt(d) * w if w > 0.0 else 1.0
    if not math.isfinite(sigma):
        raise SpreadTooLarge("normalization scale overflows float64")
    normalized = (pts - center) / sigma
    normalized.flags.writeable = False
    center.flags.writeable = False
    return PointSet(points=normalized, transform=Transform(center=center, sigma=sigma))


def point_key(y: float) -> int:
    """Grid key of one normalized coordinate: floor((y + 1) * 2^(KEY_BITS-1)), clamped.

    The clamp folds the closed top boundary y = 1 into the last cell; callers
    must range-check y themselves (data points always pass by construction).
    """
    k = math.floor((y + 1.0) * KEY_SCALE)
    if k < 0:
        return 0
    if k > KEY_MAX:
        return KEY_MAX
    return k


def point_grid_key(p: Sequence[float]) -> tuple[int, ...]:
    return tuple(point_key(float(y)) for y in p)


def grid_keys(points: np.ndarray) -> np.ndarray:
    """Vectorized point_key over an (n, d) array; returns (n, d) uint64.

    Performs the identical float64 operations as the scalar path (one add,
    one multiply, floor, clamp), so both agree bitwise.
    """
    scaled = np.floor((points + 1.0) * KEY_SCALE)
    return np.clip(scaled, 0.0, float(KEY_MAX)).astype(np.uint64)


def dist_sq(a: Sequence[float], b: Sequence[float]) -> float:
    """Squared Euclidean distance, accumulated axis by axis in index order.

    Every distance in the package routes through this exact operation order
    (the vectorized paths accumulate per axis too), so comparing distances
    computed on different paths is bit-safe.
    """
    acc = 0.0
    for x, y in zip(a, b, strict=True):
        t = x - y
        acc += t * t
    return float(acc)


def ball_box_overlap(center: Sequence[float], r_sq: float, box: QtBox) -> bool:
    """Whether the closed ball touches the closed box, with one-sided slack.

    Computes the squared distance from ``center`` to the box by clamping per
    axis and compares against r_sq * OVERLAP_SLACK: genuinely overlapping
    pairs always pass, and only near-tangent disjoint pairs may slip in.
    """
    side = box.side()
    bound = r_sq * OVERLAP_SLACK
    acc = 0.0
    for j, c in enumerate(center):
        lo = -1.0 + box.anchor[j] * side
        hi = lo + side
        if c < lo:
            t = lo - c
        elif c > hi:
            t = c - hi
        else:
            continue
        acc += t * t
        if acc > bound:
            return False
    return acc <= bound


def padded_reach_sq(r_sq: float | np.ndarray, d: int) -> float | np.ndarray:
    """Squared reach of a ball for candidate filtering, padded for key fuzz.

    A probe point is routed by its grid key, and the cell that key names can
    miss the probe's true position by up to 2^-52 per axis (one rounding in
    the key conversion). Filtering candidates against a cell therefore has to
    honor balls that only reach the cell within that slop, or a probe sitting
    just across a cell boundary could lose a candidate it still satisfies.
    Pads the radius by sqrt(d) * 2^-51 (twice the worst case) and applies
    OVERLAP_SLACK on top; one-sided like ball_box_overlap, so genuine
    overlaps always pass. Accepts a scalar or an array of squared radii.
    """
    pad = math.sqrt(d) * 2.0**-51
    return (np.sqrt(r_sq) + pad) ** 2 * OVERLAP_SLACK


def level_for_radius(r: float) -> int:
    """floor(-log2 r) computed exactly: the largest k with r <= 2^(-k).

    Boxes at this level have side 2^(1-k) in [2r, 4r), so a radius-r ball
    spans at most two of them per axis. Raises when the level would exceed
    MAX_BALL_LEVEL (the ball is too small for the grid to resolve).
    """
    if not (r > 0.0) or not math.isfinite(r):
        raise InvalidInput(f"radius must be positive and finite, got {r}")
    m, e = math.frexp(r)
    k = 1 - e if m == 0.5 else -e
    if k > MAX_BALL_LEVEL:
        raise SpreadTooLarge(
            f"ball radius {r} needs grid level {k} > {MAX_BALL_LEVEL}; "
            "point spread exceeds key resolution"
        )
    return k


def smallest_containing_box(a: Sequence[int], b: Sequence[int]) -> QtBox:
    """Smallest dyadic box containing both grid keys (their cells, not just corners)."""
    msb = -1
    for x, y in zip(a, b, strict=True):
        v = x ^ y
        if v:
            bl = v.bit_length() - 1
            if bl > msb:
                msb = bl
    if msb < 0:
        return QtBox(KEY_BITS, tuple(a))
    level = KEY_BITS - 1 - msb
    shift = KEY_BITS - level
    return QtBox(level, tuple(x >> shift for x in a))
