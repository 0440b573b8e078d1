"""AnnData ``h5ad`` parsing into validated in-memory structures.

Reads the HDF5 layout directly (X / obs / var / obsm) and keeps the
expression matrix sparse. Supports CSR and CSC sparse groups as well as a
2-D dense dataset, and both the group-based and legacy reference-based
categorical encodings for obs columns.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import h5py
import numpy as np

from .errors import IndexOutOfRange, NonFiniteCoordinate, ScellarError


class FileNotReadable(ScellarError, OSError):
    """Path missing, unreadable, or not an HDF5 file."""


class NotAnnData(ScellarError):
    """File lacks the required AnnData groups (X, obs)."""


class UnsupportedEncoding(ScellarError):
    """X or an obs column uses a layout this parser does not understand."""


class DimensionMismatch(ScellarError):
    """obs/obsm/var lengths disagree with the expression matrix."""


@dataclass
class SparseMatrixCSR:
    """Cell-major sparse expression matrix (canonical serving-input form)."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray  # int64, len n_rows+1
    indices: np.ndarray  # int32 column ids, sorted strictly increasing per row
    values: np.ndarray  # float64

    def get_row(self, row: int) -> np.ndarray:
        if row < 0 or row >= self.n_rows:
            raise IndexOutOfRange(f"row {row} out of range for {self.n_rows} rows")
        out = np.zeros(self.n_cols, dtype=np.float64)
        lo, hi = self.indptr[row], self.indptr[row + 1]
        out[self.indices[lo:hi]] = self.values[lo:hi]
        return out


@dataclass
class SparseMatrixCSC:
    """Gene-major sparse matrix kept in its on-disk orientation.

    Conversion to the serving layout happens once in the store module; this
    class only provides the row API needed for validation and parity tests.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray  # int64, len n_cols+1
    indices: np.ndarray  # int32 cell ids, sorted strictly increasing per column
    values: np.ndarray  # float64

    def get_row(self, row: int) -> np.ndarray:
        if row < 0 or row >= self.n_rows:
            raise IndexOutOfRange(f"row {row} out of range for {self.n_rows} rows")
        out = np.zeros(self.n_cols, dtype=np.float64)
        hits = np.flatnonzero(self.indices == row)
        cols = np.searchsorted(self.indptr, hits, side="right") - 1
        out[cols] = self.values[hits]
        return out


@dataclass
class DenseMatrix:
    """Adapter giving a dense 2-D X dataset the same row API."""

    n_rows: int
    n_cols: int
    data: np.ndarray  # float64 (n_rows, n_cols)

    def get_row(self, row: int) -> np.ndarray:
        if row < 0 or row >= self.n_rows:
            raise IndexOutOfRange(f"row {row} out of range for {self.n_rows} rows")
        return np.array(self.data[row], dtype=np.float64)


Matrix = SparseMatrixCSR | SparseMatrixCSC | DenseMatrix


@dataclass
class AnnotationColumn:
    name: str
    categories: list[str]
    codes: np.ndarray  # int32, every code a valid category index

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int32)


@dataclass
class Embedding:
    name: str
    dims: int  # 2 or 3
    coords: np.ndarray  # float32 (n_cells, dims)


@dataclass
class RawDataset:
    matrix: Matrix
    annotations: list[AnnotationColumn]
    embeddings: list[Embedding]
    gene_names: list[str]
    cell_count: int = field(default=0)

    def __post_init__(self):
        if self.cell_count == 0:
            self.cell_count = self.matrix.n_rows
        _validate_dataset(self)


def get_row(m: Matrix, row: int) -> np.ndarray:
    """Dense row of any matrix adapter; zeros fill absent entries."""
    return m.get_row(row)


def open_and_parse(path: str | os.PathLike) -> RawDataset:
    """Parse an h5ad file into a :class:`RawDataset`.

    The expression matrix stays sparse when the file stores it sparsely.
    Raises :class:`FileNotReadable`, :class:`NotAnnData`,
    :class:`UnsupportedEncoding` or :class:`DimensionMismatch`.
    """
    path = os.fspath(path)
    if not os.path.isfile(path) or not os.access(path, os.R_OK):
        raise FileNotReadable(f"cannot read {path!r}")
    try:
        f = h5py.File(path, "r")
    except OSError as e:
        raise FileNotReadable(f"{path!r} is not a readable HDF5 file: {e}") from e
    with f:
        if "X" not in f or "obs" not in f:
            raise NotAnnData(f"{path!r} lacks X or obs; not an AnnData file")
        matrix = _parse_x(f["X"])
        gene_names = _parse_var(f.get("var"), matrix.n_cols)
        annotations = _parse_obs(f["obs"], matrix.n_rows)
        embeddings = _parse_obsm(f.get("obsm"), matrix.n_rows)
    return RawDataset(
        matrix=matrix,
        annotations=annotations,
        embeddings=embeddings,
        gene_names=gene_names,
        cell_count=matrix.n_rows,
    )


def parse_categorical(node, name: str | None = None) -> AnnotationColumn:
    """Parse one obs column node into an :class:`AnnotationColumn`.

    Accepts the modern group encoding (categories + codes), the legacy
    integer dataset with a categories reference attribute, and plain string
    datasets (factorized in first-appearance order). Missing codes (-1)
    become an explicit NA category appended last.
    """
    if name is None:
        name = node.name.rsplit("/", 1)[-1]
    if isinstance(node, h5py.Group):
        if "categories" not in node or "codes" not in node:
            raise UnsupportedEncoding(f"obs column {name!r}: unknown group layout")
        categories = _decode_strings(node["categories"][...])
        codes = np.asarray(node["codes"][...], dtype=np.int64)
    elif isinstance(node, h5py.Dataset):
        if "categories" in node.attrs:
            ref = node.attrs["categories"]
            categories = _decode_strings(node.file[ref][...])
            codes = np.asarray(node[...], dtype=np.int64)
        elif node.dtype.kind in ("S", "O", "U"):
            return _factorize(name, _decode_strings(node[...]))
        elif node.dtype.kind == "b":
            return _factorize(name, [str(bool(v)) for v in node[...]])
        else:
            raise UnsupportedEncoding(f"obs column {name!r}: dtype {node.dtype} is not categorical")
    else:
        raise UnsupportedEncoding(f"obs column {name!r}: unsupported node type")
    return _build_categorical(name, categories, codes)


def _build_categorical(name: str, categories: list[str], codes: np.ndarray) -> AnnotationColumn:
    n_cat = len(categories)
    if len(set(categories)) != n_cat:
        raise UnsupportedEncoding(f"obs column {name!r}: duplicate category labels")
    if codes.size and (codes.min() < -1 or codes.max() >= n_cat):
        raise UnsupportedEncoding(f"obs column {name!r}: code out of range for {n_cat} categories")
    if np.any(codes == -1):
        na_label = "NA"
        k = 1
        while na_label in categories:
            na_label = f"NA#{k}"
            k += 1
        categories = categories + [na_label]
        codes = np.where(codes == -1, n_cat, codes)
    return AnnotationColumn(name=name, categories=list(categories), codes=codes.astype(np.int32))


def _factorize(name: str, strings: list[str]) -> AnnotationColumn:
    arr = np.asarray(strings, dtype=object)
    if arr.size == 0:
        return AnnotationColumn(name, [], np.zeros(0, np.int32))
    cats_sorted, first, inverse = np.unique(arr, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(len(cats_sorted), dtype=np.int64)
    rank[order] = np.arange(len(cats_sorted))
    return AnnotationColumn(
        name, [str(cats_sorted[i]) for i in order], rank[inverse].astype(np.int32)
    )


def _parse_x(node) -> Matrix:
    if isinstance(node, h5py.Dataset):
        if node.ndim != 2:
            raise UnsupportedEncoding(f"dense X must be 2-D, got ndim={node.ndim}")
        data = np.asarray(node[...], dtype=np.float64)
        return DenseMatrix(n_rows=data.shape[0], n_cols=data.shape[1], data=data)
    if not isinstance(node, h5py.Group):
        raise UnsupportedEncoding("X is neither a dataset nor a group")
    for key in ("data", "indices", "indptr"):
        if key not in node:
            raise UnsupportedEncoding(f"sparse X group lacks {key!r}")

    enc = node.attrs.get("encoding-type", node.attrs.get("h5sparse_format", None))
    if isinstance(enc, bytes):
        enc = enc.decode()
    shape = node.attrs.get("shape", node.attrs.get("h5sparse_shape", None))
    if shape is None:
        raise UnsupportedEncoding("sparse X group lacks a shape attribute")
    n_rows, n_cols = int(shape[0]), int(shape[1])

    indptr = np.asarray(node["indptr"][...], dtype=np.int64)
    if enc in ("csr_matrix", "csr"):
        layout = "csr"
    elif enc in ("csc_matrix", "csc"):
        layout = "csc"
    elif enc is None:
        # infer from indptr length; ambiguous for square matrices
        if len(indptr) == n_rows + 1 and n_rows != n_cols:
            layout = "csr"
        elif len(indptr) == n_cols + 1 and n_rows != n_cols:
            layout = "csc"
        else:
            raise UnsupportedEncoding("cannot infer sparse X orientation without encoding-type")
    else:
        raise UnsupportedEncoding(f"unknown X encoding {enc!r}")

    values = np.asarray(node["data"][...], dtype=np.float64)
    indices = np.asarray(node["indices"][...], dtype=np.int64)
    major, minor = (n_rows, n_cols) if layout == "csr" else (n_cols, n_rows)
    indptr, indices, values = _canonicalize_sparse(indptr, indices, values, major, minor)
    if layout == "csr":
        return SparseMatrixCSR(n_rows, n_cols, indptr, indices, values)
    return SparseMatrixCSC(n_rows, n_cols, indptr, indices, values)


def _canonicalize_sparse(indptr, indices, values, n_major: int, n_minor: int):
    """Validate sparse arrays and sort each major slice by minor index."""
    if len(indptr) != n_major + 1:
        raise UnsupportedEncoding(
            f"indptr length {len(indptr)} does not match major dimension {n_major}"
        )
    if indptr[0] != 0 or np.any(np.diff(indptr) < 0):
        raise UnsupportedEncoding("indptr is not a non-decreasing offset array starting at 0")
    nnz = int(indptr[-1])
    if len(indices) != nnz or len(values) != nnz:
        raise UnsupportedEncoding("indices/data length disagrees with indptr")
    if nnz and (indices.min() < 0 or indices.max() >= n_minor):
        raise UnsupportedEncoding(f"sparse index out of range for minor dimension {n_minor}")

    if nnz:
        widths = np.diff(indptr)
        major_of_nz = np.repeat(np.arange(n_major, dtype=np.int64), widths)
        inner = np.diff(indices)
        same_slice = np.diff(major_of_nz) == 0
        if np.any(same_slice & (inner <= 0)):
            order = np.lexsort((indices, major_of_nz))
            indices = indices[order]
            values = values[order]
            inner = np.diff(indices)
            if np.any((np.diff(major_of_nz) == 0) & (inner == 0)):
                raise UnsupportedEncoding("duplicate (major, minor) entries in sparse X")
    return indptr, indices.astype(np.int32), values


def _parse_var(node, n_genes: int) -> list[str]:
    names: list[str] | None = None
    if isinstance(node, h5py.Group):
        index_key = node.attrs.get("_index", "_index")
        if isinstance(index_key, bytes):
            index_key = index_key.decode()
        if index_key in node and isinstance(node[index_key], h5py.Dataset):
            names = _decode_strings(node[index_key][...])
    elif isinstance(node, h5py.Dataset) and node.dtype.names:
        for key in ("index", "_index"):
            if key in node.dtype.names:
                names = _decode_strings(node[key])
                break
    if names is None:
        names = [f"gene_{i}" for i in range(n_genes)]
    if len(names) != n_genes:
        raise DimensionMismatch(f"var has {len(names)} entries but X has {n_genes} genes")
    return _dedup_names(names)


def _dedup_names(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    taken = set(names)
    out = []
    for name in names:
        if name not in seen:
            seen[name] = 0
            out.append(name)
            continue
        k = seen[name] + 1
        candidate = f"{name}#{k}"
        while candidate in taken:
            k += 1
            candidate = f"{name}#{k}"
        seen[name] = k
        taken.add(candidate)
        out.append(candidate)
    return out


def _parse_obs(node, n_cells: int) -> list[AnnotationColumn]:
    annotations: list[AnnotationColumn] = []
    if isinstance(node, h5py.Dataset):
        # pre-0.1 compound obs table
        if not node.dtype.names:
            raise UnsupportedEncoding("obs dataset is not a compound table")
        if node.shape[0] != n_cells:
            raise DimensionMismatch(f"obs has {node.shape[0]} rows but X has {n_cells} cells")
        for fname in node.dtype.names:
            if fname in ("index", "_index"):
                continue
            if node.dtype[fname].kind in ("S", "O", "U"):
                annotations.append(_factorize(fname, _decode_strings(node[fname])))
        return annotations

    index_key = node.attrs.get("_index", "_index")
    if isinstance(index_key, bytes):
        index_key = index_key.decode()
    order = node.attrs.get("column-order", None)
    if order is not None:
        keys = [k.decode() if isinstance(k, bytes) else str(k) for k in order]
        keys = [k for k in keys if k in node]
    else:
        keys = list(node.keys())
    for key in keys:
        if key == index_key or key == "__categories":
            continue
        child = node[key]
        try:
            col = parse_categorical(child, name=key)
        except UnsupportedEncoding:
            if _looks_categorical(child):
                raise
            continue  # numeric metadata is not a colorable annotation
        if len(col.codes) != n_cells:
            raise DimensionMismatch(
                f"obs column {key!r} has {len(col.codes)} entries but X has {n_cells} cells"
            )
        annotations.append(col)
    return annotations


def _looks_categorical(node) -> bool:
    if isinstance(node, h5py.Group):
        return "categories" in node or "codes" in node
    if isinstance(node, h5py.Dataset):
        return "categories" in node.attrs or node.dtype.kind in ("S", "O", "U", "b")
    return False


def _parse_obsm(node, n_cells: int) -> list[Embedding]:
    embeddings: list[Embedding] = []
    if node is None or not isinstance(node, h5py.Group):
        return embeddings
    for key in node.keys():
        child = node[key]
        if not isinstance(child, h5py.Dataset) or child.ndim != 2:
            continue
        dims = child.shape[1]
        if dims not in (2, 3):
            continue  # high-dimensional obsm entries (e.g. PCA) are not embeddings
        if child.shape[0] != n_cells:
            raise DimensionMismatch(
                f"obsm[{key!r}] has {child.shape[0]} rows but X has {n_cells} cells"
            )
        coords = np.asarray(child[...], dtype=np.float32)
        if not np.all(np.isfinite(coords)):
            raise NonFiniteCoordinate(f"obsm[{key!r}] contains NaN or infinite coordinates")
        embeddings.append(Embedding(name=key, dims=int(dims), coords=coords))
    return embeddings


def _validate_dataset(ds: RawDataset) -> None:
    n = ds.matrix.n_rows
    if ds.cell_count != n:
        raise DimensionMismatch(f"cell_count {ds.cell_count} != matrix rows {n}")
    if len(ds.gene_names) != ds.matrix.n_cols:
        raise DimensionMismatch(
            f"{len(ds.gene_names)} gene names but matrix has {ds.matrix.n_cols} columns"
        )
    if len(set(ds.gene_names)) != len(ds.gene_names):
        raise DimensionMismatch("gene names are not unique after de-duplication")
    for col in ds.annotations:
        if len(col.codes) != n:
            raise DimensionMismatch(f"annotation {col.name!r} length {len(col.codes)} != {n}")
        if col.codes.size and (col.codes.min() < 0 or col.codes.max() >= len(col.categories)):
            raise DimensionMismatch(f"annotation {col.name!r} has out-of-range codes")
    for emb in ds.embeddings:
        if emb.coords.shape != (n, emb.dims):
            raise DimensionMismatch(
                f"embedding {emb.name!r} shape {emb.coords.shape} != ({n}, {emb.dims})"
            )


def _decode_strings(arr) -> list[str]:
    out = []
    for v in np.asarray(arr).ravel():
        if isinstance(v, bytes):
            out.append(v.decode("utf-8"))
        else:
            out.append(str(v))
    return out
