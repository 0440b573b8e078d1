"""Geometric cell selection over an embedding's point cloud.

Points go into a uniform grid whose cell edge is sized so a cell holds
about eight points on average. Sphere queries walk only the grid cells
overlapping the ball's bounding box; lasso queries project every point
with the caller's camera matrix and apply the even-odd rule against the
screen-space polygon. Both predicates are exact: a point is selected iff
the closed-form test on its float64 coordinates says so, with no epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .anndata_io import AnnotationColumn
from .errors import NonFiniteCoordinate, ScellarError
from .stats import SelectionMask


class EmptyPointSet(ScellarError):
    """An index needs at least one point."""


class NonPositiveRadius(ScellarError):
    """Sphere radius must be a positive finite number."""


class DegeneratePolygon(ScellarError):
    """A lasso polygon needs 3+ vertices and nonzero area."""


@dataclass
class PointIndex:
    """Uniform-grid spatial index over ``n`` points in three dimensions."""

    points: np.ndarray  # (n, 3) float64
    lo: np.ndarray  # (3,) float64 min corner
    h: float  # grid cell edge length
    nx: int
    ny: int
    nz: int
    bucket_ids: np.ndarray  # sorted unique linear cell ids
    bucket_start: np.ndarray  # offsets into point_order, len n_buckets+1
    point_order: np.ndarray  # point indices grouped by cell

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass
class LassoPolygon:
    """Screen-space polygon plus the camera transform that produced it.

    ``view_transform`` is the 4x4 row-major projection*view matrix acting
    on column vectors; vertices live in the post-divide projection plane.
    The polygon closes implicitly from the last vertex back to the first.
    """

    vertices: np.ndarray  # (k, 2) float64
    view_transform: np.ndarray  # (4, 4) float64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.view_transform = np.asarray(self.view_transform, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise DegeneratePolygon(
                f"expected (k, 2) vertices, got shape {self.vertices.shape}"
            )
        if len(self.vertices) < 3:
            raise DegeneratePolygon(
                f"polygon has {len(self.vertices)} vertices; need at least 3"
            )
        if self.view_transform.shape != (4, 4):
            raise ValueError(
                f"expected a 4x4 view transform, got shape {self.view_transform.shape}"
            )
        if not np.isfinite(self.vertices).all() or not np.isfinite(self.view_transform).all():
            raise NonFiniteCoordinate("polygon and transform must be finite")
        if _shoelace_area(self.vertices) == 0.0:
            raise DegeneratePolygon("polygon has zero area")


def _shoelace_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def build_index(points: np.ndarray) -> PointIndex:
    """Index ``points`` with cell edge h = cbrt(8 * volume / n).

    A degenerate bounding box (zero volume, e.g. planar or single-point
    data) falls back to h = 1 so every coordinate still maps to a cell.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
    n = len(pts)
    if n == 0:
        raise EmptyPointSet("cannot index zero points")
    if not np.isfinite(pts).all():
        raise NonFiniteCoordinate("points contain NaN or infinity")

    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    volume = float(extent[0] * extent[1] * extent[2])
    h = float(np.cbrt(8.0 * volume / n)) if volume > 0.0 else 1.0
    nx = max(1, int(math.ceil(extent[0] / h)))
    ny = max(1, int(math.ceil(extent[1] / h)))
    nz = max(1, int(math.ceil(extent[2] / h)))

    cells = np.floor((pts - lo) / h).astype(np.int64)
    np.minimum(cells, np.array([nx - 1, ny - 1, nz - 1]), out=cells)
    ids = (cells[:, 0] * ny + cells[:, 1]) * nz + cells[:, 2]

    point_order = np.argsort(ids, kind="stable").astype(np.int64)
    sorted_ids = ids[point_order]
    is_start = np.ones(n, dtype=bool)
    is_start[1:] = sorted_ids[1:] != sorted_ids[:-1]
    starts = np.flatnonzero(is_start)
    bucket_ids = sorted_ids[starts]
    bucket_start = np.append(starts, n).astype(np.int64)

    return PointIndex(
        points=pts,
        lo=lo,
        h=h,
        nx=nx,
        ny=ny,
        nz=nz,
        bucket_ids=bucket_ids,
        bucket_start=bucket_start,
        point_order=point_order,
    )


def sphere_select(index: PointIndex, center, radius: float) -> np.ndarray:
    """Indices of points inside the closed ball, sorted ascending.

    Exact: a point at distance equal to ``radius`` is included.
    """
    c = np.asarray(center, dtype=np.float64).reshape(3)
    if not np.isfinite(c).all() or not math.isfinite(radius):
        raise NonFiniteCoordinate("sphere center and radius must be finite")
    if radius <= 0.0:
        raise NonPositiveRadius(f"radius must be positive, got {radius}")
    return kernels.sphere_query(
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
        float(radius),
    )


def lasso_select(points: np.ndarray, lasso: LassoPolygon) -> np.ndarray:
    """Indices of points projecting strictly inside the lasso polygon.

    Points behind the camera (w <= 0 after transform) or with NDC depth
    outside [-1, 1] are never selected. Sorted ascending.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
    mask = kernels.lasso_mask(
        pts,
        np.ascontiguousarray(lasso.view_transform),
        np.ascontiguousarray(lasso.vertices[:, 0]),
        np.ascontiguousarray(lasso.vertices[:, 1]),
    )
    return np.flatnonzero(mask).astype(np.int64)


def combine_selection(current: SelectionMask, addition, mode: str) -> SelectionMask:
    """Fold freshly selected cell indices into the session's selection.

    ``add`` unions, ``replace`` starts over from the addition, ``reset``
    clears everything (the addition is ignored).
    """
    n_cells = current.n_cells
    if mode == "reset":
        return SelectionMask.empty(n_cells)
    idx = np.asarray(addition, dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= n_cells):
        raise ValueError(f"cell indices out of range for {n_cells} cells")
    if mode == "replace":
        return SelectionMask.from_indices(n_cells, idx)
    if mode == "add":
        mask = current.mask.copy()
        mask[idx] = True
        return SelectionMask(mask)
    raise ValueError(f"unknown combine mode {mode!r}")


def category_centroids(
    points: np.ndarray, annotation: AnnotationColumn
) -> list[tuple[str, np.ndarray, int]]:
    """(label, mean position, cell count) per category; empty ones omitted.

    Centroids anchor the in-scene proximity labels at each category's
    average position.
    """
    pts = np.asarray(points, dtype=np.float64)
    codes = np.asarray(annotation.codes, dtype=np.int64)
    n_categories = len(annotation.categories)
    counts = np.bincount(codes[codes >= 0], minlength=n_categories)
    dims = pts.shape[1]
    sums = np.zeros((n_categories, dims), dtype=np.float64)
    valid = codes >= 0
    for d in range(dims):
        sums[:, d] = np.bincount(
            codes[valid], weights=pts[valid, d], minlength=n_categories
        )
    out = []
    for k, label in enumerate(annotation.categories):
        if counts[k] == 0:
            continue
        out.append((label, sums[k] / counts[k], int(counts[k])))
    return out
