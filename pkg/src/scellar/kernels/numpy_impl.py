"""Pure-numpy implementations of the hot kernels.

Every function here has a numba twin in :mod:`scellar.kernels.numba_impl`
with the same signature and the same output contract. The numpy path is the
fallback selected by ``SCELLAR_NUMBA=0`` and is also what runs when numba is
not importable.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def csr_to_csc(n_rows: int, n_cols: int, indptr, indices, values):
    """Transpose a cell-major CSR matrix into gene-major CSC arrays.

    Rows stay in ascending order inside each output column, so the result is
    canonical and identical to the counting-sort kernel on the numba path.
    Returns ``(col_indptr int64[n_cols+1], row_indices uint32[nnz],
    col_values float64[nnz])``.
    """
    nnz = int(indptr[-1])
    counts = np.bincount(indices, minlength=n_cols).astype(np.int64)
    col_indptr = np.zeros(n_cols + 1, dtype=np.int64)
    np.cumsum(counts, out=col_indptr[1:])
    if nnz == 0:
        return col_indptr, np.zeros(0, np.uint32), np.zeros(0, np.float64)
    # stable sort by column keeps the per-column row order ascending
    order = np.argsort(indices, kind="stable")
    row_of_nz = np.repeat(
        np.arange(n_rows, dtype=np.uint32), np.diff(indptr).astype(np.int64)
    )
    return col_indptr, row_of_nz[order], np.asarray(values, np.float64)[order]


def column_group_sums(col_indptr, cell_indices, values, in_selection):
    """Per-column moment sums split by selection membership.

    ``in_selection`` is a bool mask over cells. Zero cells contribute nothing
    here; callers account for them arithmetically. Returns six arrays of
    length n_cols: sum/sumsq/nonzero-count for the selected group, then the
    same for the complement.
    """
    n_cols = len(col_indptr) - 1
    sel = in_selection[cell_indices]
    col_ids = np.repeat(
        np.arange(n_cols, dtype=np.int64), np.diff(col_indptr).astype(np.int64)
    )
    v = np.asarray(values, np.float64)
    vsq = v * v
    fsel = sel.astype(np.float64)
    frest = 1.0 - fsel
    sum_sel = np.bincount(col_ids, weights=v * fsel, minlength=n_cols)
    sumsq_sel = np.bincount(col_ids, weights=vsq * fsel, minlength=n_cols)
    sum_rest = np.bincount(col_ids, weights=v * frest, minlength=n_cols)
    sumsq_rest = np.bincount(col_ids, weights=vsq * frest, minlength=n_cols)
    nnz_sel = np.bincount(col_ids, weights=fsel, minlength=n_cols).astype(np.int64)
    nnz_rest = np.bincount(col_ids, weights=frest, minlength=n_cols).astype(np.int64)
    return sum_sel, sumsq_sel, nnz_sel, sum_rest, sumsq_rest, nnz_rest


def expr_block_u16(cell_indices, values, n_cells: int, clip: float):
    """Densify one gene column, normalize by ``clip`` and quantize to u16."""
    out = np.zeros(n_cells, dtype=np.uint16)
    if len(values) == 0:
        return out
    q = np.minimum(np.asarray(values, np.float64) / clip, 1.0)
    out[cell_indices] = np.rint(q * 65535.0).astype(np.uint16)
    return out


def sphere_query(
    points,
    bucket_ids,
    bucket_start,
    point_order,
    lo,
    h: float,
    nx: int,
    ny: int,
    nz: int,
    center,
    radius: float,
):
    """Cells within the closed ball around ``center`` via the uniform grid.

    ``bucket_ids`` are sorted linear cell ids, ``bucket_start`` the CSR-style
    offsets into ``point_order``. Result indices come back sorted ascending.
    """
    r2 = radius * radius
    c = np.asarray(center, np.float64)
    # clamp to the grid so out-of-range coords cannot alias onto valid ids
    c0 = np.maximum(np.floor((c - radius - lo) / h).astype(np.int64), 0)
    c1 = np.minimum(
        np.floor((c + radius - lo) / h).astype(np.int64),
        np.array([nx - 1, ny - 1, nz - 1], dtype=np.int64),
    )
    if np.any(c1 < c0):
        return np.zeros(0, dtype=np.int64)
    ix = np.arange(c0[0], c1[0] + 1)
    iy = np.arange(c0[1], c1[1] + 1)
    iz = np.arange(c0[2], c1[2] + 1)
    gx, gy, gz = np.meshgrid(ix, iy, iz, indexing="ij")
    ids = ((gx * ny + gy) * nz + gz).ravel()
    pos = np.searchsorted(bucket_ids, ids)
    ok = pos < len(bucket_ids)
    ok[ok] &= bucket_ids[pos[ok]] == ids[ok]
    hits = pos[ok]
    if len(hits) == 0:
        return np.zeros(0, dtype=np.int64)
    members = np.concatenate(
        [point_order[bucket_start[b] : bucket_start[b + 1]] for b in hits]
    )
    d = points[members] - center
    dist2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    result = members[dist2 <= r2].astype(np.int64)
    result.sort()
    return result


def lasso_mask(points, matrix, poly_x, poly_y):
    """Even-odd point-in-polygon test after projective transform.

    ``matrix`` is the 4x4 row-major projection*view matrix applied to column
    vectors. Points with w <= 0 or NDC depth outside [-1, 1] are excluded.
    Returns a bool mask over points.
    """
    m = np.asarray(matrix, np.float64)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    w = m[3, 0] * x + m[3, 1] * y + m[3, 2] * z + m[3, 3]
    visible = w > 0.0
    wsafe = np.where(visible, w, 1.0)
    px = (m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + m[0, 3]) / wsafe
    py = (m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + m[1, 3]) / wsafe
    pz = (m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + m[2, 3]) / wsafe
    visible &= (pz >= -1.0) & (pz <= 1.0)

    inside = np.zeros(len(points), dtype=bool)
    nv = len(poly_x)
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(nv):
            x1, y1 = poly_x[j], poly_y[j]
            x2, y2 = poly_x[(j + 1) % nv], poly_y[(j + 1) % nv]
            crosses = (y1 > py) != (y2 > py)
            xcross = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            inside ^= crosses & (px < xcross)
    return inside & visible
