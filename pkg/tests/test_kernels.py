"""Numba and numpy kernel paths must agree bit for bit."""

from __future__ import annotations

import numpy as np
import pytest

from scellar.kernels import backend, numpy_impl
from scellar.spatial import build_index

try:
    from scellar.kernels import numba_impl
except ImportError:  # pragma: no cover - numba always present in CI
    numba_impl = None

pytestmark = pytest.mark.skipif(numba_impl is None, reason="numba unavailable")

IMPLS = [numpy_impl, numba_impl]


def random_csr(rng, n, m, density):
    indptr = [0]
    indices = []
    values = []
    for _ in range(n):
        k = rng.binomial(m, density)
        cols = np.sort(rng.choice(m, k, replace=False))
        indices.extend(cols.tolist())
        values.extend(rng.uniform(0.1, 9.0, k).tolist())
        indptr.append(len(indices))
    return (
        np.array(indptr, np.int64),
        np.array(indices, np.int32),
        np.array(values, np.float64),
    )


def test_backend_name():
    assert backend() in ("numba", "numpy")


def test_csr_to_csc_canonical_example():
    indptr = np.array([0, 2, 3], np.int64)
    indices = np.array([0, 2, 1], np.int32)
    values = np.array([5.0, 7.0, 9.0])
    for impl in IMPLS:
        col_indptr, rows, vals = impl.csr_to_csc(2, 3, indptr, indices, values)
        assert col_indptr.tolist() == [0, 1, 2, 3]
        assert rows.tolist() == [0, 1, 0]
        assert vals.tolist() == [5.0, 9.0, 7.0]


def test_csr_to_csc_paths_agree(rng):
    for density in (0.0, 0.05, 0.4):
        n, m = int(rng.integers(5, 120)), int(rng.integers(3, 90))
        indptr, indices, values = random_csr(rng, n, m, density)
        a = numpy_impl.csr_to_csc(n, m, indptr, indices, values)
        b = numba_impl.csr_to_csc(n, m, indptr, indices, values)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(np.asarray(x), np.asarray(y))
            assert np.asarray(x).dtype == np.asarray(y).dtype


def test_column_group_sums_paths_agree(rng):
    for _ in range(10):
        n, m = int(rng.integers(10, 150)), int(rng.integers(3, 60))
        indptr, indices, values = random_csr(rng, n, m, 0.2)
        col_indptr, rows, vals = numpy_impl.csr_to_csc(n, m, indptr, indices, values)
        mask = rng.random(n) < 0.5
        a = numpy_impl.column_group_sums(col_indptr, rows, vals, mask)
        b = numba_impl.column_group_sums(col_indptr, rows, vals, mask)
        for x, y in zip(a, b):
            np.testing.assert_allclose(
                np.asarray(x, np.float64), np.asarray(y, np.float64), rtol=1e-13, atol=0
            )


def test_column_group_sums_counts_exact(rng):
    n, m = 80, 12
    indptr, indices, values = random_csr(rng, n, m, 0.3)
    col_indptr, rows, vals = numpy_impl.csr_to_csc(n, m, indptr, indices, values)
    mask = rng.random(n) < 0.4
    for impl in IMPLS:
        _, _, nnz_sel, _, _, nnz_rest = impl.column_group_sums(col_indptr, rows, vals, mask)
        np.testing.assert_array_equal(
            np.asarray(nnz_sel) + np.asarray(nnz_rest), np.diff(col_indptr)
        )


def test_expr_block_paths_agree(rng):
    n_cells = 400
    for k in (0, 1, 37, 400):
        cells = np.sort(rng.choice(n_cells, k, replace=False)).astype(np.uint32)
        values = rng.uniform(0.01, 30.0, k)
        clip = float(rng.uniform(0.5, 20.0))
        a = numpy_impl.expr_block_u16(cells, values, n_cells, clip)
        b = numba_impl.expr_block_u16(cells, values, n_cells, clip)
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
        assert np.asarray(a).dtype == np.uint16


def test_sphere_query_paths_agree(rng):
    points = rng.normal(0, 5, (3000, 3))
    index = build_index(points)
    args = (
        index.points,
        index.bucket_ids,
        index.bucket_start,
        index.point_order,
        index.lo,
        index.h,
        index.nx,
        index.ny,
        index.nz,
    )
    for _ in range(40):
        center = rng.normal(0, 5, 3)
        radius = float(rng.uniform(0.2, 9.0))
        a = numpy_impl.sphere_query(*args, center, radius)
        b = numba_impl.sphere_query(*args, center, radius)
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def test_lasso_mask_paths_agree(rng):
    points = rng.normal(0, 1.2, (2500, 3))
    matrix = np.eye(4)
    for _ in range(25):
        k = int(rng.integers(3, 8))
        angles = np.sort(rng.uniform(0, 2 * np.pi, k))
        radii = rng.uniform(0.2, 1.5, k)
        px = radii * np.cos(angles)
        py = radii * np.sin(angles)
        a = numpy_impl.lasso_mask(points, matrix, px, py)
        b = numba_impl.lasso_mask(points, matrix, px, py)
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
