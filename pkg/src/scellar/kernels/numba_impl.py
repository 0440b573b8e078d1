"""Numba-jitted implementations of the hot kernels.

Signatures and output contracts mirror :mod:`scellar.kernels.numpy_impl`
exactly; tests assert both paths agree. ``cache=True`` keeps CLI subprocess
start-up cheap after the first compile.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND = "numba"


@njit(cache=True)
def csr_to_csc(n_rows, n_cols, indptr, indices, values):
    nnz = indptr[n_rows]
    col_indptr = np.zeros(n_cols + 1, dtype=np.int64)
    for k in range(nnz):
        col_indptr[indices[k] + 1] += 1
    for c in range(n_cols):
        col_indptr[c + 1] += col_indptr[c]
    row_indices = np.empty(nnz, dtype=np.uint32)
    col_values = np.empty(nnz, dtype=np.float64)
    cursor = col_indptr[:-1].copy()
    # rows visited in ascending order, so each column stays sorted by cell
    for row in range(n_rows):
        for k in range(indptr[row], indptr[row + 1]):
            c = indices[k]
            slot = cursor[c]
            cursor[c] = slot + 1
            row_indices[slot] = row
            col_values[slot] = values[k]
    return col_indptr, row_indices, col_values


@njit(cache=True)
def column_group_sums(col_indptr, cell_indices, values, in_selection):
    n_cols = col_indptr.shape[0] - 1
    sum_sel = np.zeros(n_cols, dtype=np.float64)
    sumsq_sel = np.zeros(n_cols, dtype=np.float64)
    nnz_sel = np.zeros(n_cols, dtype=np.int64)
    sum_rest = np.zeros(n_cols, dtype=np.float64)
    sumsq_rest = np.zeros(n_cols, dtype=np.float64)
    nnz_rest = np.zeros(n_cols, dtype=np.int64)
    for g in range(n_cols):
        s1 = 0.0
        e1 = 0.0
        q1 = 0.0
        f1 = 0.0
        s0 = 0.0
        e0 = 0.0
        q0 = 0.0
        f0 = 0.0
        k1 = 0
        k0 = 0
        for k in range(col_indptr[g], col_indptr[g + 1]):
            v = values[k]
            vv = v * v
            if in_selection[cell_indices[k]]:
                y = v - e1
                t = s1 + y
                e1 = (t - s1) - y
                s1 = t
                y = vv - f1
                t = q1 + y
                f1 = (t - q1) - y
                q1 = t
                k1 += 1
            else:
                y = v - e0
                t = s0 + y
                e0 = (t - s0) - y
                s0 = t
                y = vv - f0
                t = q0 + y
                f0 = (t - q0) - y
                q0 = t
                k0 += 1
        sum_sel[g] = s1
        sumsq_sel[g] = q1
        nnz_sel[g] = k1
        sum_rest[g] = s0
        sumsq_rest[g] = q0
        nnz_rest[g] = k0
    return sum_sel, sumsq_sel, nnz_sel, sum_rest, sumsq_rest, nnz_rest


@njit(cache=True)
def expr_block_u16(cell_indices, values, n_cells, clip):
    out = np.zeros(n_cells, dtype=np.uint16)
    for k in range(values.shape[0]):
        q = values[k] / clip
        if q > 1.0:
            q = 1.0
        out[cell_indices[k]] = np.uint16(np.rint(q * 65535.0))
    return out


@njit(cache=True)
def sphere_query(
    points, bucket_ids, bucket_start, point_order, lo, h, nx, ny, nz, center, radius
):
    r2 = radius * radius
    # clamp to the grid so out-of-range coords cannot alias onto valid ids
    cx0 = max(int(np.floor((center[0] - radius - lo[0]) / h)), 0)
    cx1 = min(int(np.floor((center[0] + radius - lo[0]) / h)), nx - 1)
    cy0 = max(int(np.floor((center[1] - radius - lo[1]) / h)), 0)
    cy1 = min(int(np.floor((center[1] + radius - lo[1]) / h)), ny - 1)
    cz0 = max(int(np.floor((center[2] - radius - lo[2]) / h)), 0)
    cz1 = min(int(np.floor((center[2] + radius - lo[2]) / h)), nz - 1)
    out = np.empty(points.shape[0], dtype=np.int64)
    cnt = 0
    nbuckets = bucket_ids.shape[0]
    for ix in range(cx0, cx1 + 1):
        for iy in range(cy0, cy1 + 1):
            base = (ix * ny + iy) * nz
            for iz in range(cz0, cz1 + 1):
                cid = base + iz
                b = np.searchsorted(bucket_ids, cid)
                if b < nbuckets and bucket_ids[b] == cid:
                    for k in range(bucket_start[b], bucket_start[b + 1]):
                        p = point_order[k]
                        dx = points[p, 0] - center[0]
                        dy = points[p, 1] - center[1]
                        dz = points[p, 2] - center[2]
                        if dx * dx + dy * dy + dz * dz <= r2:
                            out[cnt] = p
                            cnt += 1
    res = out[:cnt].copy()
    res.sort()
    return res


@njit(cache=True)
def lasso_mask(points, matrix, poly_x, poly_y):
    n = points.shape[0]
    nv = poly_x.shape[0]
    inside = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        x = points[i, 0]
        y = points[i, 1]
        z = points[i, 2]
        w = matrix[3, 0] * x + matrix[3, 1] * y + matrix[3, 2] * z + matrix[3, 3]
        if w <= 0.0:
            continue
        px = (matrix[0, 0] * x + matrix[0, 1] * y + matrix[0, 2] * z + matrix[0, 3]) / w
        py = (matrix[1, 0] * x + matrix[1, 1] * y + matrix[1, 2] * z + matrix[1, 3]) / w
        pz = (matrix[2, 0] * x + matrix[2, 1] * y + matrix[2, 2] * z + matrix[2, 3]) / w
        if pz < -1.0 or pz > 1.0:
            continue
        hit = False
        for j in range(nv):
            x1 = poly_x[j]
            y1 = poly_y[j]
            jn = j + 1
            if jn == nv:
                jn = 0
            x2 = poly_x[jn]
            y2 = poly_y[jn]
            if (y1 > py) != (y2 > py):
                if px < (x2 - x1) * (py - y1) / (y2 - y1) + x1:
                    hit = not hit
        inside[i] = hit
    return inside
