"""Gene-major columnar store: the unified on-disk serving format.

A store file holds the expression matrix transposed to gene-major (CSC)
order plus annotations, embeddings, the gene-name search index, and an
optional precomputed-marker section. Layout is little-endian, versioned,
and every section carries a CRC32 verified on open. Builds are
deterministic: the same RawDataset always produces byte-identical files.

See docs/FORMATS.md for the bit-exact layout.
"""

from __future__ import annotations

import bisect
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .anndata_io import (
    AnnotationColumn,
    DenseMatrix,
    Embedding,
    RawDataset,
    SparseMatrixCSC,
    SparseMatrixCSR,
)
from .errors import IndexOutOfRange, IoFailure, ScellarError

MAGIC = b"SCLR"
FORMAT_VERSION = 1

SEC_GENE_INDEX = 0
SEC_EXPRESSION = 1
SEC_ANNOTATIONS = 2
SEC_EMBEDDINGS = 3
SEC_MARKERS = 4
N_SECTIONS = 5

FLAG_HAS_MARKERS = 1 << 0

_HEADER_FMT = "<4sIQQQ" + "QQII" * N_SECTIONS
_HEADER_STRUCT = struct.Struct(_HEADER_FMT)
HEADER_SIZE = 160  # struct size (152) padded for future fields

DEFAULT_MEMORY_BUDGET = 16 << 30


class CorruptSection(ScellarError):
    """Magic/version mismatch, offsets outside the file, or CRC failure."""


class OutOfMemoryBudget(ScellarError):
    """Estimated transpose workspace exceeds the configured cap."""


@dataclass
class SectionInfo:
    offset: int
    length: int
    crc: int


@dataclass
class StoreHeader:
    n_cells: int
    n_genes: int
    flags: int
    sections: list[SectionInfo]

    def pack(self) -> bytes:
        fields = [MAGIC, FORMAT_VERSION, self.n_cells, self.n_genes, self.flags]
        for s in self.sections:
            fields.extend([s.offset, s.length, s.crc, 0])
        raw = _HEADER_STRUCT.pack(*fields)
        return raw + b"\0" * (HEADER_SIZE - len(raw))

    @classmethod
    def unpack(cls, raw: bytes) -> "StoreHeader":
        if len(raw) < HEADER_SIZE:
            raise CorruptSection("file too short for a store header")
        vals = _HEADER_STRUCT.unpack(raw[: _HEADER_STRUCT.size])
        if vals[0] != MAGIC:
            raise CorruptSection(f"bad magic {vals[0]!r}")
        if vals[1] != FORMAT_VERSION:
            raise CorruptSection(f"unsupported store version {vals[1]}")
        sections = []
        for i in range(N_SECTIONS):
            off, length, crc, _ = vals[5 + 4 * i : 9 + 4 * i]
            sections.append(SectionInfo(off, length, crc))
        return cls(n_cells=vals[2], n_genes=vals[3], flags=vals[4], sections=sections)


@dataclass
class GeneColumnCSC:
    """One gene's sparse expression column."""

    gene_index: int
    cell_indices: np.ndarray  # uint32, strictly increasing
    values: np.ndarray  # float64
    max_value: float
    nonzero_count: int


def _pad8(n: int) -> int:
    return (8 - n % 8) % 8


class _SectionWriter:
    """Streams one section to a file, tracking length and CRC."""

    def __init__(self, f):
        self.f = f
        self.start = f.tell()
        self.crc = 0
        self.length = 0

    def write(self, data) -> None:
        view = memoryview(data).cast("B")
        self.f.write(view)
        self.crc = zlib.crc32(view, self.crc)
        self.length += len(view)

    def write_array(self, arr: np.ndarray, dtype: str) -> None:
        self.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype)))
        self.align()

    def write_str(self, s: str) -> None:
        b = s.encode("utf-8")
        self.write(struct.pack("<I", len(b)))
        self.write(b)

    def align(self, to: int = 8) -> None:
        pad = (to - self.length % to) % to
        if pad:
            self.write(b"\0" * pad)

    def info(self) -> SectionInfo:
        return SectionInfo(self.start, self.length, self.crc)


def _gene_major_arrays(matrix):
    """Return (col_indptr int64, cell_indices uint32, values float64)."""
    if isinstance(matrix, SparseMatrixCSR):
        return kernels.csr_to_csc(
            matrix.n_rows,
            matrix.n_cols,
            matrix.indptr,
            matrix.indices.astype(np.int64),
            matrix.values,
        )
    if isinstance(matrix, SparseMatrixCSC):
        return (
            matrix.indptr.astype(np.int64),
            matrix.indices.astype(np.uint32),
            matrix.values.astype(np.float64),
        )
    if isinstance(matrix, DenseMatrix):
        cols, rows = np.nonzero(matrix.data.T != 0.0)
        counts = np.bincount(cols, minlength=matrix.n_cols)
        col_indptr = np.zeros(matrix.n_cols + 1, dtype=np.int64)
        np.cumsum(counts, out=col_indptr[1:])
        values = matrix.data.T[cols, rows].astype(np.float64)
        return col_indptr, rows.astype(np.uint32), values
    raise TypeError(f"unsupported matrix type {type(matrix).__name__}")


def _column_maxima(col_indptr: np.ndarray, values: np.ndarray, n_genes: int) -> np.ndarray:
    maxv = np.zeros(n_genes, dtype=np.float64)
    nonempty = np.flatnonzero(np.diff(col_indptr) > 0)
    if len(nonempty):
        maxv[nonempty] = np.maximum.reduceat(values, col_indptr[nonempty])
    return maxv


def _name_sort_order(names: list[str]) -> np.ndarray:
    order = sorted(range(len(names)), key=lambda i: (names[i].casefold(), names[i], i))
    return np.asarray(order, dtype=np.uint32)


def build_store(
    raw: RawDataset, dest: str | os.PathLike, *, memory_budget_bytes: int = DEFAULT_MEMORY_BUDGET
) -> StoreHeader:
    """Write the complete store file for ``raw`` at ``dest``.

    The cell-major matrix is transposed to gene-major in one counting-sort
    pass. The write goes to a temporary file renamed into place on success,
    so a crash never leaves a partial store under the final name.
    """
    dest = os.fspath(dest)
    if isinstance(raw.matrix, SparseMatrixCSR):
        nnz = int(raw.matrix.indptr[-1])
        workspace = nnz * 28 + (raw.matrix.n_cols + 1) * 16
        if workspace > memory_budget_bytes:
            raise OutOfMemoryBudget(
                f"transpose workspace ~{workspace} B exceeds budget {memory_budget_bytes} B"
            )

    col_indptr, cell_indices, values = _gene_major_arrays(raw.matrix)
    n_cells, n_genes = raw.matrix.n_rows, raw.matrix.n_cols
    col_max = _column_maxima(col_indptr, values, n_genes)
    sort_order = _name_sort_order(raw.gene_names)

    tmp = dest + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(b"\0" * HEADER_SIZE)
            sections: list[SectionInfo] = []

            sec = _SectionWriter(f)
            blob = b"".join(name.encode("utf-8") for name in raw.gene_names)
            name_offsets = np.zeros(n_genes + 1, dtype=np.int64)
            np.cumsum(
                [len(name.encode("utf-8")) for name in raw.gene_names],
                out=name_offsets[1:],
            )
            sec.write(struct.pack("<QQ", n_genes, len(blob)))
            sec.write_array(name_offsets, "<i8")
            sec.write(blob)
            sec.align()
            sec.write_array(sort_order, "<u4")
            sec.write_array(col_indptr, "<i8")
            sec.write_array(col_max, "<f8")
            sections.append(sec.info())

            sec = _SectionWriter(f)
            sec.write_array(cell_indices, "<u4")
            sec.write_array(values, "<f8")
            sections.append(sec.info())

            sec = _SectionWriter(f)
            sec.write(struct.pack("<I", len(raw.annotations)))
            for col in raw.annotations:
                sec.write_str(col.name)
                sec.write(struct.pack("<I", len(col.categories)))
                for cat in col.categories:
                    sec.write_str(cat)
                sec.align(4)
                sec.write_array(col.codes, "<i4")
            sections.append(sec.info())

            sec = _SectionWriter(f)
            default_idx, z_pad = _pick_default_embedding(raw.embeddings)
            sec.write(struct.pack("<IiI", len(raw.embeddings), default_idx, 1 if z_pad else 0))
            for emb in raw.embeddings:
                sec.write_str(emb.name)
                sec.write(struct.pack("<I", emb.dims))
                sec.align()
                sec.write_array(emb.coords, "<f4")
            sections.append(sec.info())

            # markers live last so precompute can replace them without
            # touching earlier sections; empty until precompute runs
            sec = _SectionWriter(f)
            sections.append(sec.info())

            header = StoreHeader(n_cells=n_cells, n_genes=n_genes, flags=0, sections=sections)
            f.seek(0)
            f.write(header.pack())
        os.replace(tmp, dest)
    except OSError as e:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"failed writing store {dest!r}: {e}") from e
    return header


def _pick_default_embedding(embeddings: list[Embedding]) -> tuple[int, bool]:
    for i, emb in enumerate(embeddings):
        if emb.dims == 3:
            return i, False
    if embeddings:
        return 0, True
    return -1, False


class _Cursor:
    """Sequential reader over a section's bytes with 8-byte array alignment."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        b = self.buf[self.pos : self.pos + n]
        if len(b) != n:
            raise CorruptSection("section truncated")
        self.pos += n
        return b

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        a = np.frombuffer(self.take(int(np.dtype(dtype).itemsize) * count), dtype=dtype)
        self.align()
        return a

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def align(self, to: int = 8) -> None:
        self.pos += (to - self.pos % to) % to


class Store:
    """An opened, immutable store file.

    Expression and embedding arrays are memory-mapped; the gene index,
    annotations, and markers are loaded into memory on open. Safe for
    unlimited concurrent readers.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        try:
            size = os.path.getsize(self.path)
            with open(self.path, "rb") as f:
                header = StoreHeader.unpack(f.read(HEADER_SIZE))
                for sec in header.sections:
                    if sec.offset + sec.length > size:
                        raise CorruptSection("section extends beyond end of file")
                    _verify_crc(f, sec)
                self.header = header
                self._read_gene_index(f, header.sections[SEC_GENE_INDEX])
                self._read_annotations(f, header.sections[SEC_ANNOTATIONS])
                self._read_embedding_directory(f, header.sections[SEC_EMBEDDINGS])
                self._read_markers(f, header.sections[SEC_MARKERS])
        except OSError as e:
            raise IoFailure(f"cannot open store {self.path!r}: {e}") from e

        self.n_cells = header.n_cells
        self.n_genes = header.n_genes
        nnz = int(self.col_indptr[-1])
        expr = header.sections[SEC_EXPRESSION]
        self.cell_indices = _map_array(self.path, expr.offset, "<u4", nnz)
        self.values = _map_array(self.path, expr.offset + _aligned(4 * nnz), "<f8", nnz)

    # -- section parsing ---------------------------------------------------

    def _read_gene_index(self, f, sec: SectionInfo) -> None:
        cur = _Cursor(_read_section(f, sec))
        n_genes, blob_len = cur.unpack("<QQ")
        offsets = cur.array("<i8", n_genes + 1)
        blob = cur.take(blob_len)
        cur.align()
        self.gene_names = [
            blob[offsets[i] : offsets[i + 1]].decode("utf-8") for i in range(n_genes)
        ]
        self.sort_order = np.array(cur.array("<u4", n_genes))
        self.col_indptr = np.array(cur.array("<i8", n_genes + 1))
        self.col_max = np.array(cur.array("<f8", n_genes))
        self._sorted_keys = [self.gene_names[i].casefold() for i in self.sort_order]

    def _read_annotations(self, f, sec: SectionInfo) -> None:
        cur = _Cursor(_read_section(f, sec))
        (count,) = cur.unpack("<I")
        self.annotations: list[AnnotationColumn] = []
        for _ in range(count):
            name = cur.string()
            (n_cat,) = cur.unpack("<I")
            categories = [cur.string() for _ in range(n_cat)]
            cur.align(4)
            codes = np.array(cur.array("<i4", self.header.n_cells))
            self.annotations.append(AnnotationColumn(name, categories, codes))

    def _read_embedding_directory(self, f, sec: SectionInfo) -> None:
        cur = _Cursor(_read_section(f, sec))
        count, self.default_embedding, zpad = cur.unpack("<IiI")
        self.default_needs_zpad = bool(zpad)
        self.embeddings: list[Embedding] = []
        for _ in range(count):
            name = cur.string()
            (dims,) = cur.unpack("<I")
            cur.align()
            abs_off = sec.offset + cur.pos
            coords = _map_array(self.path, abs_off, "<f4", self.header.n_cells * dims)
            cur.pos += self.header.n_cells * dims * 4
            cur.align()
            self.embeddings.append(
                Embedding(name=name, dims=dims, coords=coords.reshape(self.header.n_cells, dims))
            )

    def _read_markers(self, f, sec: SectionInfo) -> None:
        if self.header.flags & FLAG_HAS_MARKERS and sec.length:
            self.markers_blob: bytes | None = _read_section(f, sec)
        else:
            self.markers_blob = None

    # -- queries -----------------------------------------------------------

    def get_column(self, gene: int) -> GeneColumnCSC:
        if gene < 0 or gene >= self.n_genes:
            raise IndexOutOfRange(f"gene {gene} out of range for {self.n_genes} genes")
        lo, hi = int(self.col_indptr[gene]), int(self.col_indptr[gene + 1])
        return GeneColumnCSC(
            gene_index=gene,
            cell_indices=self.cell_indices[lo:hi],
            values=self.values[lo:hi],
            max_value=float(self.col_max[gene]),
            nonzero_count=hi - lo,
        )

    def fetch_gene_column(self, gene: int) -> tuple[np.ndarray, float, int]:
        col = self.get_column(gene)
        dense = np.zeros(self.n_cells, dtype=np.float64)
        if col.nonzero_count:
            dense[col.cell_indices] = col.values
        return dense, col.max_value, col.nonzero_count

    def lookup_gene(self, query: str, limit: int = 20) -> list[tuple[int, str]]:
        """Case-insensitive exact match first, then prefix matches."""
        q = query.casefold()
        if not q:
            return []
        exact: list[tuple[int, str]] = []
        prefix: list[tuple[int, str]] = []
        pos = bisect.bisect_left(self._sorted_keys, q)
        while pos < len(self._sorted_keys) and self._sorted_keys[pos].startswith(q):
            gi = int(self.sort_order[pos])
            if self._sorted_keys[pos] == q:
                exact.append((gi, self.gene_names[gi]))
            else:
                prefix.append((gi, self.gene_names[gi]))
            pos += 1
        return (exact + prefix)[:limit]

    def embedding_by_name(self, name: str) -> Embedding | None:
        for emb in self.embeddings:
            if emb.name == name:
                return emb
        return None

    def default_embedding_3d(self) -> tuple[np.ndarray, str, bool] | None:
        """Default embedding as float32 (n, 3); 2-D sources get z = 0."""
        if self.default_embedding < 0:
            return None
        emb = self.embeddings[self.default_embedding]
        return self.embedding_3d(emb.name)

    def embedding_3d(self, name: str) -> tuple[np.ndarray, str, bool] | None:
        emb = self.embedding_by_name(name)
        if emb is None:
            return None
        if emb.dims == 3:
            return np.array(emb.coords), emb.name, False
        coords = np.zeros((self.n_cells, 3), dtype=np.float32)
        coords[:, :2] = emb.coords
        return coords, emb.name, True

    def close(self) -> None:
        self.cell_indices = None
        self.values = None
        self.embeddings = []


def _aligned(n: int) -> int:
    return n + _pad8(n)


def _read_section(f, sec: SectionInfo) -> bytes:
    f.seek(sec.offset)
    return f.read(sec.length)


def _verify_crc(f, sec: SectionInfo, chunk: int = 1 << 24) -> None:
    f.seek(sec.offset)
    remaining = sec.length
    crc = 0
    while remaining:
        block = f.read(min(chunk, remaining))
        if not block:
            raise CorruptSection("unexpected end of file while checksumming")
        crc = zlib.crc32(block, crc)
        remaining -= len(block)
    if crc != sec.crc:
        raise CorruptSection(
            f"CRC mismatch at offset {sec.offset}: stored {sec.crc:#010x}, computed {crc:#010x}"
        )


def _map_array(path: str, offset: int, dtype: str, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=dtype)
    return np.memmap(path, mode="r", dtype=dtype, offset=offset, shape=(count,))


def open_store(path: str | os.PathLike) -> Store:
    return Store(path)


def fetch_gene_column(store: Store, gene: int) -> tuple[np.ndarray, float, int]:
    """Dense expression vector for one gene plus (max_value, nonzero_count)."""
    return store.fetch_gene_column(gene)


def lookup_gene(store: Store, query: str) -> list[tuple[int, str]]:
    """Resolve a gene query to at most 20 (index, name) matches."""
    return store.lookup_gene(query)


def replace_markers_section(path: str | os.PathLike, payload: bytes) -> None:
    """Swap in a new markers section (always the final section).

    The store is rewritten next to the original and renamed into place;
    in-place updates are deliberately not supported.
    """
    path = os.fspath(path)
    with open(path, "rb") as f:
        header = StoreHeader.unpack(f.read(HEADER_SIZE))
        markers = header.sections[SEC_MARKERS]
        f.seek(0)
        body = f.read(markers.offset)
    header.sections[SEC_MARKERS] = SectionInfo(markers.offset, len(payload), zlib.crc32(payload))
    header.flags = (header.flags | FLAG_HAS_MARKERS) if payload else (header.flags & ~FLAG_HAS_MARKERS)
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(header.pack())
            f.write(body[HEADER_SIZE:])
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"failed updating markers in {path!r}: {e}") from e
