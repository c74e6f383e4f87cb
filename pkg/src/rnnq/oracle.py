"""Independent reference implementations and randomized instance generators.

Everything here recomputes answers from first principles, deliberately
sharing as little code as possible with the fast paths: query results by
linear scan, quadtree cell sets by direct top-down recursion, structural
invariants by explicit counting. The test suite and the ``check`` command
compare the real implementations against these.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicatePoints, InvalidInput
from .geometry import KEY_BITS, PointSet, QtBox, normalize, padded_reach_sq, root_box


def _corner(box: QtBox) -> tuple[int, ...]:
    shift = KEY_BITS - box.level
    return tuple(a << shift for a in box.anchor)


def _scb_pair(level_a: int, corner_a, level_b: int, corner_b, d: int):
    msb = -1
    for j in range(d):
        v = corner_a[j] ^ corner_b[j]
        if v:
            bl = v.bit_length() - 1
            if bl > msb:
                msb = bl
    k = KEY_BITS - 1 - msb if msb >= 0 else KEY_BITS
    k = min(k, level_a, level_b)
    shift = KEY_BITS - k
    return k, tuple((c >> shift) << shift for c in corner_a)


def _scb_all(boxes: Sequence[QtBox], d: int) -> QtBox:
    level, corner = boxes[0].level, _corner(boxes[0])
    for b in boxes[1:]:
        level, corner = _scb_pair(level, corner, b.level, _corner(b), d)
    shift = KEY_BITS - level
    return QtBox(level, tuple(c >> shift for c in corner))


def naive_cell_set(boxes: Iterable[QtBox], *, d: int | None = None) -> frozenset:
    """Cell set of the compressed quadtree, built by direct recursion.

    The textbook definition applied verbatim: at each box, if every inner box
    fits in one strict sub-box, zoom to their smallest containing box and
    leave the remainder as a compressed cell; otherwise split into quadrants.
    Quadratic-ish and recursive, so only suitable for small instances; exists
    purely to validate the Morton-order builder.
    """
    box_set = {QtBox(b.level, tuple(b.anchor)) for b in boxes}
    if d is None:
        if not box_set:
            raise InvalidInput("cannot infer dimension from an empty box set")
        d = next(iter(box_set)).d
    root = root_box(d)
    cells: list[tuple] = []

    def rec(box: QtBox, inside: list[QtBox]) -> None:
        cells.append(("ord", box))
        if not inside:
            return
        hull = _scb_all(inside, d)
        if hull != box:
            cells.append(("comp", box, hull))
            rec(hull, [b for b in inside if b != hull])
            return
        for q in range(1 << d):
            quadrant = box.child(q)
            sub = [b for b in inside if quadrant.contains_box(b)]
            if not sub:
                cells.append(("ord", quadrant))
                continue
            hull_q = _scb_all(sub, d)
            if hull_q == quadrant:
                rec(quadrant, [b for b in sub if b != quadrant])
            else:
                cells.append(("ord", quadrant))
                cells.append(("comp", quadrant, hull_q))
                rec(hull_q, [b for b in sub if b != hull_q])

    rec(root, [b for b in box_set if b != root])
    assert len(cells) == len(set(cells))
    return frozenset(cells)


def allnn_brute_force(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact all-nearest-neighbors by a chunked O(n^2) distance scan.

    Same arithmetic and the same smallest-index tie-break as the tree-based
    implementation, so the outputs must agree bit for bit.
    """
    pts = np.asarray(points, dtype=np.float64)
    n, d = pts.shape
    if n < 2:
        raise InvalidInput("need at least two points")
    nn = np.empty(n, dtype=np.int64)
    r_sq = np.empty(n, dtype=np.float64)
    chunk = max(1, 4_000_000 // n)
    for a in range(0, n, chunk):
        b = min(a + chunk, n)
        dists = np.zeros((b - a, n))
        for j in range(d):
            t = pts[a:b, j][:, None] - pts[:, j][None, :]
            dists += t * t
        local = np.arange(b - a)
        dists[local, local + a] = np.inf
        best = np.argmin(dists, axis=1)
        val = dists[local, best]
        zero = val == 0.0
        if zero.any():
            i = int(np.flatnonzero(zero)[0])
            raise DuplicatePoints((a + i, int(best[i])))
        nn[a:b] = best
        r_sq[a:b] = val
    return nn, r_sq


def rnn_brute_force(points: PointSet, q: Sequence[float], r_sq: np.ndarray | None = None) -> list[int]:
    """All i whose empty ball contains q, by linear scan in normalized space."""
    pts = points.points
    n, d = pts.shape
    if n == 1:
        return [0]
    if r_sq is None:
        _, r_sq = allnn_brute_force(pts)
    y = points.transform.apply_point(q)
    acc = np.zeros(n)
    for j in range(d):
        t = pts[:, j] - y[j]
        acc += t * t
    return np.flatnonzero(acc <= r_sq).tolist()


@dataclass
class CheckReport:
    """Outcome of one invariant check over one instance.

    Failures carry enough payload (node id, point index, trial data) to
    replay the counterexample by hand.
    """

    name: str
    instance: dict
    passed: bool
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json_line(self) -> str:
        payload = {
            "check": self.name,
            "instance": self.instance,
            "passed": self.passed,
            "summary": self.summary,
            "failures": self.failures[:10],
            "failure_count": len(self.failures),
        }
        return json.dumps(payload, sort_keys=True)

    def describe(self) -> str:
        state = "pass" if self.passed else f"FAIL ({len(self.failures)} failures)"
        inst = " ".join(f"{k}={v}" for k, v in sorted(self.instance.items()))
        return f"{self.name} [{inst}]: {state}"


def _exact_ball_cell_overlap(p: np.ndarray, r_sq: float, level: int, anchor: np.ndarray) -> bool:
    """Closed ball vs half-open cell with rational arithmetic; no rounding.

    Cells are half-open the way grid keys see them: closed on the low faces,
    open on the high faces. A ball that only reaches the closure of the cell
    at a point on a high face does not overlap it (no probe keys there), so
    a tangent contact counts only when the closest point of the closure lies
    off every high face, i.e. the center is strictly below the cell's upper
    bound on every axis.
    """
    side = Fraction(2) ** (1 - level)
    bound = Fraction(r_sq)
    acc = Fraction(0)
    touches_high = False
    for j in range(len(anchor)):
        lo = Fraction(-1) + int(anchor[j]) * side
        hi = lo + side
        c = Fraction(float(p[j]))
        if c >= hi:
            touches_high = True
            t = c - hi
        elif c < lo:
            t = lo - c
        else:
            continue
        acc += t * t
        if acc > bound:
            return False
    if acc == bound:
        return not touches_high
    return True


def lemma_candidate_bound(d: int) -> int:
    """ceil(2 sqrt d)^d * 2 * 5^d: covering constant times the packing constant."""
    c = math.isqrt(4 * d - 1) + 1
    return (c ** d) * 2 * (5 ** d)


# float clamp distances carry relative error well under 2^-48 for d <= 8, so
# anything within this band of the radius gets the exact rational treatment
_SURE = 2.0 ** -38


def candidate_semantics_check(index, cap: int = 2000) -> CheckReport:
    """Exhaustive node-by-point audit of the candidate lists.

    At every ordinary node the list must contain every point whose ball is
    radius-eligible (r > s/4) and exactly overlaps the half-open cell,
    contain nothing radius-ineligible or failing the implementation's padded
    overlap test, stay sorted, and respect the packing size bound. Compressed
    nodes must copy their parent verbatim.
    """
    n, d = index.n, index.d
    if n > cap:
        raise InvalidInput(f"semantics check is quadratic; n={n} exceeds cap={cap}")
    instance = {"n": n, "d": d}
    if n == 1:
        return CheckReport("candidate-semantics", instance, True,
                           summary={"nodes": index.tree.node_count, "vacuous": True})

    tree = index.tree
    cands = index.candidate_lists
    pts = index.point_set.points
    r_sq = index.r_sq
    kinds = tree.kinds
    levels = tree.levels
    anchors = tree.anchors
    parents = tree.parents
    bound = lemma_candidate_bound(d)
    reach = padded_reach_sq(r_sq, d)
    failures: list[dict] = []
    max_list = 0

    for v in range(tree.node_count):
        lst = cands[v]
        if kinds[v] == 1:  # compressed: exact copy of the parent
            if lst != cands[int(parents[v])]:
                failures.append({"node": v, "kind": "compressed-copy"})
            continue
        if any(lst[t] >= lst[t + 1] for t in range(len(lst) - 1)):
            failures.append({"node": v, "kind": "unsorted"})
        if len(lst) > bound:
            failures.append({"node": v, "kind": "size", "len": len(lst), "bound": bound})
        if len(lst) > max_list:
            max_list = len(lst)

        lv = int(levels[v])
        side = 2.0 ** (1 - lv)
        quarter = side / 4.0
        radius_ok = r_sq > quarter * quarter
        acc = np.zeros(n)
        for j in range(d):
            lo = -1.0 + int(anchors[v, j]) * side
            t = np.maximum(np.maximum(lo - pts[:, j], pts[:, j] - (lo + side)), 0.0)
            acc += t * t
        inflated = acc <= reach
        surely_in = acc <= r_sq * (1.0 - _SURE)
        surely_out = acc > r_sq * (1.0 + _SURE)
        exact = surely_in.copy()
        for i in np.flatnonzero(~surely_in & ~surely_out):
            exact[i] = _exact_ball_cell_overlap(pts[i], float(r_sq[i]), lv, anchors[v])

        member = np.zeros(n, dtype=bool)
        for i in lst:
            member[i] = True
            if not radius_ok[i]:
                failures.append({"node": v, "point": int(i), "kind": "radius-too-small"})
            elif not inflated[i]:
                failures.append({"node": v, "point": int(i), "kind": "no-overlap"})
        for i in np.flatnonzero(radius_ok & exact & ~member):
            failures.append({"node": v, "point": int(i), "kind": "missing"})

    return CheckReport(
        "candidate-semantics", instance, not failures, failures,
        {"nodes": tree.node_count, "max_list": max_list, "bound": bound},
    )


def packing_check(points: np.ndarray, trials: int, seed: int = 0) -> CheckReport:
    """Sample balls and count large empty balls touching each one.

    For a probe ball of radius rho, the number of empty balls with radius at
    least rho that intersect it can never exceed 2 * 5^d.
    """
    ps = normalize(np.asarray(points, dtype=np.float64))
    pts = ps.points
    n, d = pts.shape
    _, r_sq = allnn_brute_force(pts)
    radii = np.sqrt(r_sq)
    r_lo, r_hi = float(radii.min()), float(radii.max())
    bound = 2 * 5 ** d
    rng = np.random.default_rng([seed, trials, n, d])

    centers = rng.uniform(-1.0, 1.0, (trials, d))
    rho = np.empty(trials)
    half = trials // 2
    rho[:half] = rng.uniform(0.0, 2.0 * r_hi, half)
    rho[half:] = np.exp(rng.uniform(np.log(r_lo / 4.0), np.log(4.0 * r_hi), trials - half))

    failures: list[dict] = []
    max_count = 0
    chunk = max(1, 2_000_000 // n)
    for a in range(0, trials, chunk):
        b = min(a + chunk, trials)
        dists = np.zeros((b - a, n))
        for j in range(d):
            t = centers[a:b, j][:, None] - pts[:, j][None, :]
            dists += t * t
        reach = (rho[a:b, None] + radii[None, :]) ** 2
        hit = (dists <= reach) & (radii[None, :] >= rho[a:b, None])
        counts = hit.sum(axis=1)
        max_count = max(max_count, int(counts.max()))
        for t in np.flatnonzero(counts > bound):
            failures.append({
                "trial": int(a + t),
                "center": centers[a + t].tolist(),
                "rho": float(rho[a + t]),
                "count": int(counts[t]),
            })

    return CheckReport(
        "packing", {"n": n, "d": d, "trials": trials, "seed": seed},
        not failures, failures, {"max_count": max_count, "bound": bound},
    )


DISTRIBUTIONS = ("uniform", "clusters", "grid", "collinear", "two_scale")


def generate_points(kind: str, n: int, d: int, seed: int) -> np.ndarray:
    """Deterministic test instance: n distinct points in d dimensions.

    The unit-scale shapes get a random placement and scale on top, so the
    normalization transform is always exercised. Kinds: uniform noise,
    Gaussian clusters, an axis-aligned lattice (maximal distance ties),
    points on a line, and two-scale near-duplicate pairs (deep compression).
    """
    if kind not in DISTRIBUTIONS:
        raise InvalidInput(f"unknown distribution {kind!r}, expected one of {DISTRIBUTIONS}")
    if n < 1 or d < 1:
        raise InvalidInput(f"need n >= 1 and d >= 1, got n={n} d={d}")
    rng = np.random.default_rng([DISTRIBUTIONS.index(kind), n, d, seed])

    if kind == "uniform":
        u = rng.uniform(0.0, 1.0, (n, d))
    elif kind == "clusters":
        k = max(1, -(-n // 64))
        centers = rng.uniform(0.0, 1.0, (k, d))
        u = centers[rng.integers(0, k, n)] + rng.normal(0.0, 0.02, (n, d))
    elif kind == "grid":
        m = 1
        while m ** d < n:
            m += 1
        idx = np.arange(n)
        cols = []
        for _ in range(d):
            idx, rem = np.divmod(idx, m)
            cols.append(rem)
        u = np.column_stack(cols).astype(np.float64) / m
        u = u[rng.permutation(n)]
    elif kind == "collinear":
        t = (np.arange(n) + rng.uniform(0.1, 0.9, n)) / n
        direction = rng.normal(0.0, 1.0, d)
        norm = float(np.hypot.reduce(direction)) if d > 1 else abs(float(direction[0]))
        if norm == 0.0:
            direction = np.zeros(d)
            direction[0] = 1.0
            norm = 1.0
        u = t[:, None] * (direction / norm)[None, :]
    else:  # two_scale
        pairs = -(-n // 2)
        anchor = rng.uniform(0.0, 1.0, (pairs, d))
        direction = rng.normal(0.0, 1.0, (pairs, d))
        norms = np.sqrt((direction ** 2).sum(axis=1))
        norms[norms == 0.0] = 1.0
        step = 1e-9 * (1.0 + rng.uniform(0.0, 1.0, pairs))
        partner = anchor + direction / norms[:, None] * step[:, None]
        u = np.empty((2 * pairs, d))
        u[0::2] = anchor
        u[1::2] = partner
        u = u[:n]
        # keep the placement gentle: the pair separation must survive rounding
        return u + rng.uniform(-1.0, 1.0, d)

    scale = 10.0 ** rng.uniform(-2.0, 3.0)
    offset = rng.uniform(-100.0, 100.0, d)
    return offset + scale * u


def make_queries(
    points: np.ndarray,
    r_sq: np.ndarray,
    transform,
    count: int,
    seed: int,
) -> np.ndarray:
    """Query batch in original coordinates: four equal groups.

    Uniform over the inflated bounding box, exactly at data points, at
    empty-ball boundaries (distance r * t for t around 1, the tie-sensitive
    regime), and far outside the hull where the answer must be empty.
    """
    pts = np.asarray(points, dtype=np.float64)
    n, d = pts.shape
    rng = np.random.default_rng([97, n, d, count, seed])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = hi - lo
    diam = float(span.max())
    pad = 0.25 * (diam if diam > 0.0 else 1.0)

    n_far = count // 4
    n_boundary = count // 4
    n_at = count // 4
    n_random = count - n_far - n_boundary - n_at
    out = np.empty((count, d))
    row = 0

    out[row:row + n_random] = rng.uniform(lo - pad, hi + pad, (n_random, d))
    row += n_random

    out[row:row + n_at] = pts[rng.integers(0, n, n_at)]
    row += n_at

    sigma = float(transform.sigma)
    factors = (1.0 - 1e-12, 1.0, 1.0 + 1e-12)
    idx = rng.integers(0, n, n_boundary)
    dirs = rng.normal(0.0, 1.0, (n_boundary, d))
    norms = np.sqrt((dirs ** 2).sum(axis=1))
    norms[norms == 0.0] = 1.0
    dirs /= norms[:, None]
    for t in range(n_boundary):
        i = int(idx[t])
        r = math.sqrt(float(r_sq[i])) * sigma
        if not math.isfinite(r):
            out[row + t] = rng.uniform(lo - pad, hi + pad, d)
            continue
        out[row + t] = pts[i] + dirs[t] * (r * factors[t % 3])
    row += n_boundary

    center = lo + span / 2.0
    dirs = rng.normal(0.0, 1.0, (n_far, d))
    norms = np.sqrt((dirs ** 2).sum(axis=1))
    norms[norms == 0.0] = 1.0
    dirs /= norms[:, None]
    reach = 10.0 * (diam if diam > 0.0 else 1.0)
    out[row:] = center + dirs * (reach * (1.0 + rng.uniform(0.0, 1.0, (n_far, 1))))
    return out
