#!/usr/bin/env python3
"""Compare the jitted and pure-numpy kernel paths on shared workloads.

Run from the repo root after installing the package:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --cells 500000 --genes 2000

Times are best-of-N wall clock. The jitted path is called once per
workload before timing so compilation is never billed to a sample, and
every workload asserts that both paths produce identical results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from scellar.kernels import numpy_impl
from scellar.spatial import build_index
from scellar.synth import random_raw

try:
    from scellar.kernels import numba_impl
except ImportError:
    numba_impl = None


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def same(a, b) -> bool:
    if isinstance(a, (tuple, list)):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def near(a, b) -> bool:
    """Last-ulp tolerance for kernels that accumulate in different orders."""
    if isinstance(a, (tuple, list)):
        return all(near(x, y) for x, y in zip(a, b))
    x, y = np.asarray(a), np.asarray(b)
    if x.dtype.kind == "f":
        return np.allclose(x, y, rtol=1e-12, atol=0.0)
    return np.array_equal(x, y)


def build_workloads(args):
    """Per-kernel closures taking an impl module, plus a shared dataset."""
    raw = random_raw(args.cells, args.genes, args.density, seed=99)
    m = raw.matrix
    rng = np.random.default_rng(17)

    col_indptr, cells, vals = numpy_impl.csr_to_csc(
        m.n_rows, m.n_cols, m.indptr, m.indices, m.values
    )
    mask = rng.random(args.cells) < 0.3
    cols = rng.integers(0, args.genes, size=100)

    pts = rng.normal(0.0, 5.0, (args.points, 3))
    index = build_index(pts)
    centers = rng.uniform(-10.0, 10.0, (100, 3))
    radii = rng.uniform(1.0, 8.0, 100)

    ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, 8))
    poly_x = 0.7 * np.cos(ang)
    poly_y = 0.7 * np.sin(ang)
    view = np.diag([1 / 15.0, 1 / 15.0, 1 / 40.0, 1.0])

    def transpose(impl):
        return impl.csr_to_csc(m.n_rows, m.n_cols, m.indptr, m.indices, m.values)

    def group_sums(impl):
        return impl.column_group_sums(col_indptr, cells, vals, mask)

    def expr_blocks(impl):
        out = []
        for j in cols:
            s, e = int(col_indptr[j]), int(col_indptr[j + 1])
            out.append(impl.expr_block_u16(cells[s:e], vals[s:e], args.cells, 3.0))
        return out

    def spheres(impl):
        out = []
        for c, r in zip(centers, radii):
            out.append(
                impl.sphere_query(
                    index.points,
                    index.bucket_ids,
                    index.bucket_start,
                    index.point_order,
                    index.lo,
                    index.h,
                    index.nx,
                    index.ny,
                    index.nz,
                    c,
                    float(r),
                )
            )
        return out

    def lassos(impl):
        out = []
        for _ in range(10):
            out.append(impl.lasso_mask(pts, view, poly_x, poly_y))
        return out

    return [
        (f"csr->csc transpose ({args.cells}x{args.genes}, {len(vals)} nnz)", transpose, same),
        (f"column group sums ({args.genes} genes)", group_sums, near),
        ("expression blocks (100 columns)", expr_blocks, same),
        (f"sphere queries (100 on {args.points} pts)", spheres, same),
        (f"lasso masks (10 on {args.points} pts)", lassos, same),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--cells", type=int, default=200_000)
    parser.add_argument("--genes", type=int, default=1000)
    parser.add_argument("--density", type=float, default=0.02)
    parser.add_argument("--points", type=int, default=100_000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    workloads = build_workloads(args)
    print(f"{'workload':<48} {'numba':>10} {'numpy':>10} {'speedup':>9}")
    for name, fn, agree in workloads:
        numpy_s = best_of(lambda: fn(numpy_impl), args.repeats)
        if numba_impl is None:
            print(f"{name:<48} {'n/a':>10} {numpy_s * 1000:>8.1f}ms {'':>9}")
            continue
        got = fn(numba_impl)  # warm the JIT outside the timed region
        assert agree(got, fn(numpy_impl)), f"paths disagree on {name}"
        numba_s = best_of(lambda: fn(numba_impl), args.repeats)
        print(
            f"{name:<48} {numba_s * 1000:>8.1f}ms {numpy_s * 1000:>8.1f}ms"
            f" {numpy_s / numba_s:>8.1f}x"
        )


if __name__ == "__main__":
    main()
