"""Command-line front end: build, query, check, and bench.

File formats are deliberately plain. Points files hold one point per line as
comma-separated decimals, with blank lines and ``#`` comments ignored; an
optional ``# d=<int>`` header pins the dimension up front. Query results are
emitted as JSON lines of the form ``{"query": [...], "rnn": [...],
"elapsed_ns": 0}`` so that reruns of the same inputs produce byte-identical
files; wall-clock timing goes to stderr instead.

Exit codes: 0 success, 1 a check found a counterexample, 2 duplicate points,
3 point spread beyond float64 resolution, 4 unreadable input (points file,
index file, or arguments), 5 query dimension mismatch.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import DuplicatePoints, InvalidInput, SpreadTooLarge
from .oracle import (
    DISTRIBUTIONS,
    CheckReport,
    allnn_brute_force,
    candidate_semantics_check,
    generate_points,
    make_queries,
    packing_check,
    rnn_brute_force,
)
from .rnn_index import RnnIndex, build

_MAX_CLI_D = 8
_SEMANTICS_CAP = 2000

EXIT_CHECK_FAILED = 1
EXIT_DUPLICATE = 2
EXIT_SPREAD = 3
EXIT_PARSE = 4
EXIT_DIMENSION = 5


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the parse exit code."""

    def error(self, message):
        raise _CliError(EXIT_PARSE, f"{self.prog}: {message}")


_HEADER = re.compile(r"#\s*d\s*=\s*(\d+)\s*$")


def read_points(path: str | Path) -> np.ndarray:
    """Parse a points file, reporting problems with file and line number."""
    rows: list[list[float]] = []
    d: int | None = None
    declared: int | None = None
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise _CliError(EXIT_PARSE, f"cannot read {path}: {e.strerror or e}") from e

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                if rows:
                    raise _CliError(EXIT_PARSE, f"{path}:{lineno}: d= header after data")
                declared = int(m.group(1))
            continue
        parts = line.split(",")
        try:
            vals = [float(x) for x in parts]
        except ValueError:
            raise _CliError(
                EXIT_PARSE, f"{path}:{lineno}: expected comma-separated numbers, got {line!r}"
            ) from None
        if not all(math.isfinite(v) for v in vals):
            raise _CliError(EXIT_PARSE, f"{path}:{lineno}: non-finite coordinate")
        if d is None:
            d = len(vals)
            if declared is not None and d != declared:
                raise _CliError(
                    EXIT_PARSE,
                    f"{path}:{lineno}: header says d={declared} but line has {d} coordinates",
                )
        elif len(vals) != d:
            raise _CliError(
                EXIT_PARSE, f"{path}:{lineno}: expected {d} coordinates, got {len(vals)}"
            )
        rows.append(vals)

    if not rows:
        raise _CliError(EXIT_PARSE, f"{path}: no points found")
    return np.array(rows, dtype=np.float64)


def _dedupe_keep_first(pts: np.ndarray) -> tuple[np.ndarray, list[int], list[int]]:
    """Drop exact duplicate rows, keeping the first occurrence of each.

    Returns (deduped points, kept original row ids ascending, map from every
    original row to its row in the deduped array).
    """
    n = len(pts)
    _, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    first = np.full(int(inverse.max()) + 1, n, dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(n))
    kept = np.sort(first)
    new_pos = {int(orig): new for new, orig in enumerate(kept)}
    mapping = [new_pos[int(first[g])] for g in inverse]
    return pts[kept], [int(k) for k in kept], mapping


def _worker_count() -> int:
    raw = os.environ.get("RNNQ_THREADS", "").strip()
    if not raw:
        return 1
    try:
        workers = int(raw)
    except ValueError:
        raise _CliError(EXIT_PARSE, f"RNNQ_THREADS must be an integer, got {raw!r}") from None
    return max(1, workers)


def _load_index(path: str) -> RnnIndex:
    try:
        return RnnIndex.load(path)
    except OSError as e:
        raise _CliError(EXIT_PARSE, f"cannot read {path}: {e.strerror or e}") from e
    except InvalidInput as e:
        raise _CliError(EXIT_PARSE, f"{path}: {e}") from e


def cmd_build(args) -> int:
    pts = read_points(args.points)
    if pts.shape[1] > _MAX_CLI_D:
        raise _CliError(
            EXIT_PARSE, f"{args.points}: d={pts.shape[1]} exceeds the command-line cap of {_MAX_CLI_D}"
        )
    if args.dedupe:
        pts, kept, mapping = _dedupe_keep_first(pts)
        sidecar = Path(f"{args.output}.dedupe.json")
        sidecar.write_text(json.dumps({"kept": kept, "map": mapping}) + "\n", encoding="utf-8")
        print(f"dedupe: kept {len(kept)} of {len(mapping)} points, map in {sidecar}", file=sys.stderr)

    t0 = time.perf_counter()
    ix = build(pts)
    elapsed = time.perf_counter() - t0
    ix.save(args.output)
    st = ix.stats()
    print(
        f"indexed {st.n} points (d={st.d}) in {elapsed:.3f}s: "
        f"{st.node_count} nodes, {st.serialized_bytes} bytes -> {args.output}",
        file=sys.stderr,
    )
    return 0


def _parse_query_text(text: str, d: int, where: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise _CliError(EXIT_PARSE, f"{where}: expected comma-separated numbers") from None
    if len(vals) != d:
        raise _CliError(EXIT_DIMENSION, f"{where}: query has {len(vals)} coordinates, index has d={d}")
    return vals


def cmd_query(args) -> int:
    ix = _load_index(args.index)
    if args.point is not None:
        queries = np.array([_parse_query_text(args.point, ix.d, "--point")])
    else:
        queries = read_points(args.queries)
        if queries.shape[1] != ix.d:
            raise _CliError(
                EXIT_DIMENSION,
                f"{args.queries}: queries have {queries.shape[1]} coordinates, index has d={ix.d}",
            )

    rows = [q.tolist() for q in queries]
    workers = _worker_count()
    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            answers = list(pool.map(ix.query, rows))
    else:
        answers = [ix.query(q) for q in rows]
    elapsed = time.perf_counter() - t0

    out = sys.stdout if args.output is None else open(args.output, "w", encoding="utf-8")
    try:
        for q, rnn in zip(rows, answers):
            out.write(json.dumps({"query": q, "rnn": rnn, "elapsed_ns": 0}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    per = elapsed / max(1, len(rows))
    print(
        f"{len(rows)} queries in {elapsed:.3f}s ({per * 1e6:.1f}us each, {workers} threads)",
        file=sys.stderr,
    )
    return 0


def cmd_check(args) -> int:
    if args.d > 6:
        raise _CliError(EXIT_PARSE, f"check supports d <= 6, got {args.d}")
    if args.n > 100_000:
        raise _CliError(EXIT_PARSE, f"check supports n <= 100000, got {args.n}")

    pts = generate_points(args.dist, args.n, args.d, args.seed)
    ix = build(pts)
    instance = {"dist": args.dist, "n": args.n, "d": args.d, "seed": args.seed}

    if ix.n > 1:
        _, r_sq = allnn_brute_force(ix.point_set.points)
    else:
        r_sq = None
    queries = make_queries(pts, ix.r_sq if r_sq is None else r_sq, ix.point_set.transform, 100, args.seed)
    mismatches = []
    for q in queries:
        got = ix.query(q)
        want = rnn_brute_force(ix.point_set, q, r_sq)
        if got != want:
            mismatches.append({"query": q.tolist(), "expected": want, "got": got})
    reports = [
        CheckReport("query-equivalence", instance, not mismatches, mismatches, {"queries": len(queries)})
    ]

    if args.n <= _SEMANTICS_CAP:
        reports.append(candidate_semantics_check(ix))
    else:
        print(
            json.dumps({"check": "candidate-semantics", "skipped": True,
                        "reason": f"n={args.n} above audit cap {_SEMANTICS_CAP}"}, sort_keys=True)
        )
    reports.append(packing_check(pts, trials=args.trials, seed=args.seed))

    failed = False
    for rep in reports:
        print(rep.to_json_line())
        failed = failed or not rep.passed
    return EXIT_CHECK_FAILED if failed else 0


def cmd_bench(args) -> int:
    pts = generate_points(args.dist, args.n, args.d, args.seed)
    t0 = time.perf_counter()
    ix = build(pts)
    build_seconds = time.perf_counter() - t0

    _, r_sq = allnn_brute_force(ix.point_set.points) if ix.n > 1 else (None, ix.r_sq)
    queries = make_queries(pts, r_sq, ix.point_set.transform, args.queries, args.seed)
    lat = np.empty(len(queries))
    visits = np.empty(len(queries))
    answered = 0
    for t, q in enumerate(queries):
        t0 = time.perf_counter_ns()
        result, seen = ix.query_counted(q)
        lat[t] = time.perf_counter_ns() - t0
        visits[t] = seen
        answered += len(result)

    st = ix.stats()
    report = {
        "instance": {"dist": args.dist, "n": args.n, "d": args.d, "seed": args.seed},
        "build_seconds": round(build_seconds, 6),
        "queries": {
            "count": len(queries),
            "mean_ns": round(float(lat.mean()), 1),
            "median_ns": float(statistics.median(lat)),
            "p99_ns": float(np.percentile(lat, 99)),
            "mean_visits": round(float(visits.mean()), 3),
            "max_visits": int(visits.max()),
            "mean_answer_size": round(answered / len(queries), 3),
        },
        "index": asdict(st),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="rnnq", description="Exact reverse nearest-neighbor queries.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="index a points file", parents=[], add_help=True)
    p.add_argument("points", help="points file, one comma-separated point per line")
    p.add_argument("-o", "--output", required=True, help="index file to write")
    p.add_argument("--dedupe", action="store_true",
                   help="drop exact duplicate points (keep first), writing a .dedupe.json sidecar")
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("query", help="answer queries against a built index")
    p.add_argument("index", help="index file from rnnq build")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--queries", help="file of query points, same format as points files")
    src.add_argument("--point", help="one query point, e.g. '0.5,0.5'")
    p.add_argument("-o", "--output", help="write JSON lines here instead of stdout")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("check", help="self-check on a generated instance")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="uniform")
    p.add_argument("--trials", type=int, default=20, help="packing probe count")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("bench", help="build and query timings on a generated instance")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="uniform")
    p.add_argument("--queries", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)
    return parser


def entry(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _CliError as e:
        print(f"rnnq: {e}", file=sys.stderr)
        return e.code
    except DuplicatePoints as e:
        i, j = e.pair
        print(f"rnnq: points {i} and {j} are identical; rerun with --dedupe to drop repeats",
              file=sys.stderr)
        return EXIT_DUPLICATE
    except SpreadTooLarge as e:
        print(f"rnnq: {e}", file=sys.stderr)
        return EXIT_SPREAD
    except InvalidInput as e:
        print(f"rnnq: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(entry())
