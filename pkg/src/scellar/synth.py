"""Deterministic synthetic datasets for demos, tests, and benchmarks.

Two flavors: a small fixture with one strongly enriched gene (index 7)
in a known cluster, and a scalable random dataset for throughput work.
Both are pure functions of their seed. The h5ad writer emits the modern
sparse/categorical encodings so a synthesized file exercises the same
read path as a downloaded one.
"""

from __future__ import annotations

import numpy as np

from .anndata_io import (
    AnnotationColumn,
    Embedding,
    RawDataset,
    SparseMatrixCSR,
)

ENRICHED_GENE = 7


def _csr_from_dense(dense: np.ndarray) -> SparseMatrixCSR:
    n_rows, n_cols = dense.shape
    rows, cols = np.nonzero(dense)
    counts = np.bincount(rows, minlength=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return SparseMatrixCSR(
        n_rows=n_rows,
        n_cols=n_cols,
        indptr=indptr,
        indices=cols.astype(np.int32),
        values=dense[rows, cols].astype(np.float64),
    )


def enriched_raw(n_cells: int = 100, n_genes: int = 20, seed: int = 1234) -> RawDataset:
    """Fixture with gene 7 enriched in the first half of the cells.

    Cells [0, n/2) form the "enriched" cluster: gene 7 sits near 10 there
    and near 1 elsewhere, so selection-vs-rest differential expression
    must rank gene 7 first with a vanishing p-value. The embedding puts
    the two clusters 20 units apart so a sphere of radius 5 around
    (10, 0, 0) selects exactly the enriched half.
    """
    if n_cells < 8 or n_genes <= ENRICHED_GENE:
        raise ValueError("fixture needs >= 8 cells and > 8 genes")
    rng = np.random.default_rng(seed)
    half = n_cells // 2

    dense = np.zeros((n_cells, n_genes), dtype=np.float64)
    background = rng.random((n_cells, n_genes)) < 0.3
    dense[background] = rng.uniform(0.5, 3.0, int(background.sum()))
    dense[:half, ENRICHED_GENE] = 10.0 + rng.normal(0.0, 0.5, half)
    dense[half:, ENRICHED_GENE] = 1.0 + rng.normal(0.0, 0.2, n_cells - half)
    np.clip(dense[:, ENRICHED_GENE], 0.01, None, out=dense[:, ENRICHED_GENE])

    codes = np.zeros(n_cells, dtype=np.int32)
    codes[half:] = 1
    cluster = AnnotationColumn(
        name="cluster", categories=["enriched", "background"], codes=codes
    )
    batch = AnnotationColumn(
        name="batch",
        categories=["b1", "b2"],
        codes=(np.arange(n_cells) % 2).astype(np.int32),
    )

    coords = np.empty((n_cells, 3), dtype=np.float64)
    coords[:half] = rng.normal(0.0, 1.0, (half, 3)) + np.array([10.0, 0.0, 0.0])
    coords[half:] = rng.normal(0.0, 1.0, (n_cells - half, 3)) + np.array([-10.0, 0.0, 0.0])
    umap = Embedding(name="X_umap", dims=3, coords=coords.astype(np.float32))

    return RawDataset(
        matrix=_csr_from_dense(dense),
        annotations=[cluster, batch],
        embeddings=[umap],
        gene_names=[f"G{i:03d}" for i in range(n_genes)],
        cell_count=n_cells,
    )


def random_raw(
    n_cells: int,
    n_genes: int,
    density: float,
    seed: int = 0,
    n_categories: int = 5,
) -> RawDataset:
    """Random sparse dataset at roughly the requested density.

    Nonzero positions are sampled without replacement in flat index
    space, which keeps construction vectorized even at hundreds of
    millions of candidate positions.
    """
    rng = np.random.default_rng(seed)
    total = n_cells * n_genes
    target = int(round(total * density))
    # oversample, dedupe, trim: cheaper than true rejection sampling
    flat = rng.integers(0, total, size=int(target * 1.1) + 16, dtype=np.int64)
    flat = np.unique(flat)[:target]
    rows = (flat // n_genes).astype(np.int64)
    cols = (flat % n_genes).astype(np.int32)
    values = rng.uniform(0.5, 4.5, size=len(flat))

    counts = np.bincount(rows, minlength=n_cells)
    indptr = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    matrix = SparseMatrixCSR(
        n_rows=n_cells, n_cols=n_genes, indptr=indptr, indices=cols, values=values
    )

    codes = rng.integers(0, n_categories, size=n_cells).astype(np.int32)
    cluster = AnnotationColumn(
        name="cluster",
        categories=[f"C{k}" for k in range(n_categories)],
        codes=codes,
    )

    phi = rng.uniform(0.0, 2.0 * np.pi, n_categories)
    costheta = rng.uniform(-1.0, 1.0, n_categories)
    sintheta = np.sqrt(1.0 - costheta * costheta)
    centers = 20.0 * np.stack(
        [sintheta * np.cos(phi), sintheta * np.sin(phi), costheta], axis=1
    )
    coords = centers[codes] + rng.normal(0.0, 2.0, (n_cells, 3))
    umap = Embedding(name="X_umap", dims=3, coords=coords.astype(np.float32))

    return RawDataset(
        matrix=matrix,
        annotations=[cluster],
        embeddings=[umap],
        gene_names=[f"G{i:04d}" for i in range(n_genes)],
        cell_count=n_cells,
    )


def write_h5ad(raw: RawDataset, path: str, layout: str = "csr") -> None:
    """Write a RawDataset as an h5ad file using the modern encodings.

    ``layout`` picks the X encoding: "csr", "csc", or "dense". Only CSR
    input matrices are supported (that is all the builders above emit).
    """
    import h5py

    if not isinstance(raw.matrix, SparseMatrixCSR):
        raise TypeError("write_h5ad expects a CSR matrix")
    n, m = raw.matrix.n_rows, raw.matrix.n_cols
    str_t = h5py.string_dtype(encoding="utf-8")

    with h5py.File(path, "w") as f:
        if layout == "dense":
            dense = np.zeros((n, m), dtype=np.float64)
            for i in range(n):
                lo, hi = raw.matrix.indptr[i], raw.matrix.indptr[i + 1]
                dense[i, raw.matrix.indices[lo:hi]] = raw.matrix.values[lo:hi]
            x = f.create_dataset("X", data=dense)
            x.attrs["encoding-type"] = "array"
            x.attrs["encoding-version"] = "0.2.0"
        elif layout in ("csr", "csc"):
            if layout == "csr":
                indptr = raw.matrix.indptr
                indices = raw.matrix.indices
                values = raw.matrix.values
            else:
                from . import kernels

                indptr, rows, values = kernels.csr_to_csc(
                    n, m, raw.matrix.indptr, raw.matrix.indices.astype(np.int64),
                    raw.matrix.values,
                )
                indices = rows.astype(np.int64)
            g = f.create_group("X")
            g.attrs["encoding-type"] = f"{layout}_matrix"
            g.attrs["encoding-version"] = "0.1.0"
            g.attrs["shape"] = np.array([n, m], dtype=np.int64)
            g.create_dataset("data", data=np.asarray(values, dtype=np.float64))
            g.create_dataset("indices", data=np.asarray(indices, dtype=np.int64))
            g.create_dataset("indptr", data=np.asarray(indptr, dtype=np.int64))
        else:
            raise ValueError(f"unknown layout {layout!r}")

        obs = f.create_group("obs")
        obs.attrs["encoding-type"] = "dataframe"
        obs.attrs["encoding-version"] = "0.2.0"
        obs.attrs["_index"] = "_index"
        obs.attrs["column-order"] = np.array(
            [c.name for c in raw.annotations], dtype=str_t
        )
        obs.create_dataset(
            "_index", data=np.array([f"cell{i}" for i in range(n)], dtype=str_t)
        )
        for col in raw.annotations:
            cg = obs.create_group(col.name)
            cg.attrs["encoding-type"] = "categorical"
            cg.attrs["encoding-version"] = "0.2.0"
            cg.attrs["ordered"] = False
            cg.create_dataset("codes", data=col.codes.astype(np.int64))
            cg.create_dataset(
                "categories", data=np.array(col.categories, dtype=str_t)
            )

        var = f.create_group("var")
        var.attrs["encoding-type"] = "dataframe"
        var.attrs["encoding-version"] = "0.2.0"
        var.attrs["_index"] = "_index"
        var.create_dataset("_index", data=np.array(raw.gene_names, dtype=str_t))

        obsm = f.create_group("obsm")
        for emb in raw.embeddings:
            d = obsm.create_dataset(emb.name, data=emb.coords.astype(np.float32))
            d.attrs["encoding-type"] = "array"
            d.attrs["encoding-version"] = "0.2.0"
