#!/usr/bin/env python3
"""Benchmark the row-scan and group-by kernels: compiled extension vs the
pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [rows]
"""

from __future__ import annotations

import csv
import io
import sys
import time

from microreduce.data import GenSpec, generate_dataset, resolve_schema
from microreduce.kernels import pykernels
from microreduce.storage import ObjectStore

try:
    from microreduce.kernels import _speedups
except ImportError:
    _speedups = None


def build_rows(n_rows: int) -> tuple[list[list[str]], tuple[int, int, int]]:
    store = ObjectStore()
    generate_dataset(
        GenSpec(files=1, rows_per_file=n_rows, invalid_fraction=0.03, seed=1), store
    )
    text = store.get("part-0000.csv").decode()
    rows = list(csv.reader(io.StringIO(text)))
    schema = resolve_schema(rows[0])
    return rows[1:], (schema.carrier_idx, schema.delay_idx, schema.cancelled_idx)


def bench(label: str, fn, repeats: int = 5) -> tuple[float, object]:
    result = None
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv: list[str]) -> int:
    n_rows = int(argv[1]) if len(argv) > 1 else 500_000
    print(f"building {n_rows} rows ...")
    rows, (ci, di, xi) = build_rows(n_rows)

    backends = [("python", pykernels)]
    if _speedups is not None:
        backends.append(("cython", _speedups))
    else:
        print("compiled extension not available; benchmarking the fallback only")

    print(f"\n{'backend':>8}  {'scan ms':>9}  {'scan Mrows/s':>12}  "
          f"{'group ms':>9}  {'group Mrows/s':>13}")
    results = {}
    for name, impl in backends:
        scan_s, scanned = bench(name, lambda impl=impl: impl.scan_rows(rows, ci, di, xi))
        carriers, delays, total, invalid = scanned
        group_s, grouped = bench(name, lambda impl=impl: impl.group_rows(carriers, delays))
        results[name] = (scanned, grouped)
        print(f"{name:>8}  {scan_s * 1e3:>9.1f}  {total / scan_s / 1e6:>12.2f}  "
              f"{group_s * 1e3:>9.1f}  {len(carriers) / group_s / 1e6:>13.2f}")

    if len(results) == 2:
        assert results["python"] == results["cython"], "backend outputs diverge"
        print("\nbackend outputs identical")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
