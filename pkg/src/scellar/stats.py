"""Welch t-test differential expression and precomputed marker tables.

Group statistics come from a single pass over each gene's sparse column;
cells absent from the column contribute exact zeros. The two-sided p-value
is computed from the regularized incomplete beta function, implemented
here directly so tests can compare it against an independent reference.

For a selection A versus the remaining cells B, each gene gets

    t  = (mean_A - mean_B) / sqrt(var_A/n_A + var_B/n_B)
    df = Welch-Satterthwaite effective degrees of freedom
    p  = two-sided tail probability of Student's t at df

and genes are ranked by p ascending, breaking ties by absolute log fold
change descending, then by gene index. The top 10 form a marker table.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ScellarError
from .store import GeneColumnCSC, Store, replace_markers_section

TOP_K = 10
LFC_EPSILON = 1e-9

_BETA_TOL = 1e-12
_BETA_MAX_ITER = 300

_MARKER_MAGIC = b"MRK1"

SKIP_GROUP_TOO_SMALL = "group too small"


class GroupTooSmall(ScellarError):
    """A t statistic needs at least two cells in each group."""


class SelectionTooSmall(ScellarError):
    """Differential expression needs 2+ cells selected and 2+ unselected."""


class ConvergenceFailure(ScellarError):
    """The incomplete beta continued fraction did not reach tolerance."""


class InvalidDf(ScellarError):
    """Degrees of freedom must be a positive finite number."""


class MarkersNotComputed(ScellarError):
    """The store has no marker section yet; run precompute first."""


class UnknownAnnotation(ScellarError, LookupError):
    """No such annotation or category in the marker tables."""


@dataclass(frozen=True)
class GroupStats:
    """Sample moments of one group; variance is NaN (undefined) when n < 2."""

    n: int
    mean: float
    variance: float  # unbiased, n-1 denominator


@dataclass
class SelectionMask:
    """Boolean membership over all cells; the complement is implicit."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.count = int(np.count_nonzero(self.mask))

    @classmethod
    def from_indices(cls, n_cells: int, indices) -> "SelectionMask":
        mask = np.zeros(n_cells, dtype=bool)
        mask[np.asarray(indices, dtype=np.int64)] = True
        return cls(mask)

    @classmethod
    def empty(cls, n_cells: int) -> "SelectionMask":
        return cls(np.zeros(n_cells, dtype=bool))

    @property
    def n_cells(self) -> int:
        return len(self.mask)

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def __len__(self) -> int:
        return len(self.mask)


@dataclass(frozen=True)
class MarkerRecord:
    gene_index: int
    gene_name: str
    t: float
    df: float
    p_value: float
    log_fold_change: float  # base 2
    mean_selected: float
    mean_rest: float


@dataclass
class MarkerTable:
    """Top differentially expressed genes for one group-vs-rest comparison."""

    group_label: str
    records: list[MarkerRecord]
    n_selected: int
    n_rest: int
    annotation: str | None = None
    skipped_reason: str | None = None


def compute_group_stats(
    column: GeneColumnCSC, mask: SelectionMask
) -> tuple[GroupStats, GroupStats]:
    """Per-group mean and sample variance for one gene's sparse column.

    One pass over the nonzeros; the zero cells of each group enter the
    moments arithmetically (they add nothing to either sum). Summation
    uses math.fsum so results do not depend on nonzero order. Groups
    with n < 2 get NaN variance rather than an error.
    """
    n_cells = mask.n_cells
    n_sel = mask.count
    n_rest = n_cells - n_sel
    in_sel = mask.mask[column.cell_indices]
    vals = np.asarray(column.values, dtype=np.float64)
    return (
        _stats_from_nonzeros(vals[in_sel], n_sel),
        _stats_from_nonzeros(vals[~in_sel], n_rest),
    )


def _stats_from_nonzeros(nonzeros: np.ndarray, n: int) -> GroupStats:
    if n == 0:
        return GroupStats(n=0, mean=math.nan, variance=math.nan)
    s = math.fsum(nonzeros)
    mean = s / n
    if n < 2:
        return GroupStats(n=n, mean=mean, variance=math.nan)
    sq = math.fsum(v * v for v in nonzeros.tolist())
    var = max(0.0, (sq - n * mean * mean) / (n - 1))
    return GroupStats(n=n, mean=mean, variance=var)


def welch_t(a: GroupStats, b: GroupStats) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom.

    When both variances are zero the standard error vanishes: equal means
    give t = 0, unequal means give a signed infinity sentinel; both use
    the pooled df n_a + n_b - 2 so downstream ranking stays defined.
    """
    if a.n < 2 or b.n < 2:
        raise GroupTooSmall(f"groups of {a.n} and {b.n} cells; need 2 each")
    va_n = a.variance / a.n
    vb_n = b.variance / b.n
    se2 = va_n + vb_n
    if se2 == 0.0:
        pooled_df = float(a.n + b.n - 2)
        if a.mean == b.mean:
            return 0.0, pooled_df
        return math.copysign(math.inf, a.mean - b.mean), pooled_df
    t = (a.mean - b.mean) / math.sqrt(se2)
    df = se2 * se2 / (va_n * va_n / (a.n - 1) + vb_n * vb_n / (b.n - 1))
    return t, df


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value for Student's t with (possibly fractional) df.

    Uses p = I_x(df/2, 1/2) with x = df / (df + t^2), the regularized
    incomplete beta at the symmetric two-tailed point. The infinite-t
    sentinel from welch_t maps to p = 0.
    """
    if math.isnan(df) or df <= 0.0:
        raise InvalidDf(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        raise InvalidDf("t statistic is NaN")
    if t == 0.0:
        return 1.0
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(0.5 * df, 0.5, x)


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) by Lentz's continued fraction with the symmetry flip."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_TOL:
            return h
    raise ConvergenceFailure(
        f"incomplete beta did not converge for a={a!r}, b={b!r}, x={x!r}"
    )


def log_fold_change(a: GroupStats, b: GroupStats) -> float:
    """Base-2 log ratio of group means with a 1e-9 pseudocount."""
    return math.log2((a.mean + LFC_EPSILON) / (b.mean + LFC_EPSILON))


def differential_expression(
    store: Store, mask: SelectionMask, top_k: int = TOP_K
) -> MarkerTable:
    """Rank every gene by Welch t-test p-value and keep the top ``top_k``."""
    table = de_from_arrays(
        np.asarray(store.col_indptr),
        np.asarray(store.cell_indices),
        np.asarray(store.values),
        store.n_cells,
        mask,
        store.gene_names,
        top_k=top_k,
    )
    return table


def de_from_arrays(
    col_indptr: np.ndarray,
    cell_indices: np.ndarray,
    values: np.ndarray,
    n_cells: int,
    mask: SelectionMask,
    gene_names: list[str],
    top_k: int = TOP_K,
) -> MarkerTable:
    """Differential expression over raw gene-major arrays.

    All group sums come from one batched pass. Degenerate genes (zero
    variance in both groups, equal means) get t = 0 and p = 1, ranking
    last. Ties in p break by |log2 fold change| descending, then index.
    """
    n_sel = mask.count
    n_rest = n_cells - n_sel
    if n_sel < 2 or n_rest < 2:
        raise SelectionTooSmall(
            f"selection splits cells {n_sel} vs {n_rest}; need 2 on each side"
        )
    n_genes = len(col_indptr) - 1

    sum_sel, sumsq_sel, _, sum_rest, sumsq_rest, _ = kernels.column_group_sums(
        np.asarray(col_indptr, dtype=np.int64),
        np.asarray(cell_indices, dtype=np.uint32),
        np.asarray(values, dtype=np.float64),
        mask.mask,
    )

    mean_sel = sum_sel / n_sel
    mean_rest = sum_rest / n_rest
    var_sel = np.maximum(0.0, (sumsq_sel - n_sel * mean_sel * mean_sel) / (n_sel - 1))
    var_rest = np.maximum(0.0, (sumsq_rest - n_rest * mean_rest * mean_rest) / (n_rest - 1))

    va_n = var_sel / n_sel
    vb_n = var_rest / n_rest
    se2 = va_n + vb_n
    pooled_df = float(n_sel + n_rest - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (mean_sel - mean_rest) / np.sqrt(se2)
        df = se2 * se2 / (va_n * va_n / (n_sel - 1) + vb_n * vb_n / (n_rest - 1))
    degenerate = se2 == 0.0
    if degenerate.any():
        diff = mean_sel - mean_rest
        t[degenerate] = np.where(
            diff[degenerate] == 0.0,
            0.0,
            np.copysign(np.inf, diff[degenerate]),
        )
        df[degenerate] = pooled_df

    p = np.empty(n_genes, dtype=np.float64)
    for g in range(n_genes):
        p[g] = t_two_sided_p(float(t[g]), float(df[g]))

    lfc = np.log2((mean_sel + LFC_EPSILON) / (mean_rest + LFC_EPSILON))
    order = np.lexsort((np.arange(n_genes), -np.abs(lfc), p))

    records = []
    for g in order[:top_k]:
        gi = int(g)
        records.append(
            MarkerRecord(
                gene_index=gi,
                gene_name=gene_names[gi],
                t=float(t[gi]),
                df=float(df[gi]),
                p_value=float(p[gi]),
                log_fold_change=float(lfc[gi]),
                mean_selected=float(mean_sel[gi]),
                mean_rest=float(mean_rest[gi]),
            )
        )
    return MarkerTable(
        group_label="selection", records=records, n_selected=n_sel, n_rest=n_rest
    )


# -- marker persistence ----------------------------------------------------


def encode_markers(tables: dict[str, dict[str, MarkerTable]]) -> bytes:
    out = [_MARKER_MAGIC, struct.pack("<I", len(tables))]
    for annotation, per_category in tables.items():
        out.append(_pack_str(annotation))
        out.append(struct.pack("<I", len(per_category)))
        for category, table in per_category.items():
            out.append(_pack_str(category))
            out.append(_pack_str(table.skipped_reason or ""))
            out.append(
                struct.pack("<QQI", table.n_selected, table.n_rest, len(table.records))
            )
            for r in table.records:
                out.append(struct.pack("<I", r.gene_index))
                out.append(_pack_str(r.gene_name))
                out.append(
                    struct.pack(
                        "<6d",
                        r.t,
                        r.df,
                        r.p_value,
                        r.log_fold_change,
                        r.mean_selected,
                        r.mean_rest,
                    )
                )
    return b"".join(out)


def decode_markers(blob: bytes) -> dict[str, dict[str, MarkerTable]]:
    if blob[:4] != _MARKER_MAGIC:
        raise MarkersNotComputed("marker section has an unknown format")
    pos = 4
    (n_ann,), pos = _unpack(blob, "<I", pos)
    tables: dict[str, dict[str, MarkerTable]] = {}
    for _ in range(n_ann):
        annotation, pos = _unpack_str(blob, pos)
        (n_cat,), pos = _unpack(blob, "<I", pos)
        per_category: dict[str, MarkerTable] = {}
        for _ in range(n_cat):
            category, pos = _unpack_str(blob, pos)
            skipped, pos = _unpack_str(blob, pos)
            (n_sel, n_rest, n_rec), pos = _unpack(blob, "<QQI", pos)
            records = []
            for _ in range(n_rec):
                (gene_index,), pos = _unpack(blob, "<I", pos)
                gene_name, pos = _unpack_str(blob, pos)
                (t, df, p, lfc, m_sel, m_rest), pos = _unpack(blob, "<6d", pos)
                records.append(
                    MarkerRecord(gene_index, gene_name, t, df, p, lfc, m_sel, m_rest)
                )
            per_category[category] = MarkerTable(
                group_label=category,
                records=records,
                n_selected=n_sel,
                n_rest=n_rest,
                annotation=annotation,
                skipped_reason=skipped or None,
            )
        tables[annotation] = per_category
    return tables


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _unpack(blob: bytes, fmt: str, pos: int):
    s = struct.Struct(fmt)
    return s.unpack_from(blob, pos), pos + s.size


def _unpack_str(blob: bytes, pos: int) -> tuple[str, int]:
    (n,), pos = _unpack(blob, "<I", pos)
    return blob[pos : pos + n].decode("utf-8"), pos + n


def precompute_markers(store_path: str) -> dict[str, dict[str, MarkerTable]]:
    """Compute marker tables for every annotation category and persist them.

    Categories too small to test (fewer than 2 cells on either side) are
    recorded as skipped with a reason rather than dropped, so readers can
    tell "computed, nothing to report" from "never computed". The store
    file is rewritten atomically; no annotations yields an empty (but
    present) marker section.
    """
    store = Store(store_path)
    col_indptr = np.asarray(store.col_indptr)
    cell_indices = np.asarray(store.cell_indices)
    values = np.asarray(store.values)
    tables: dict[str, dict[str, MarkerTable]] = {}
    for col in store.annotations:
        per_category: dict[str, MarkerTable] = {}
        for k, category in enumerate(col.categories):
            mask = SelectionMask(col.codes == np.int32(k))
            n_sel = mask.count
            n_rest = store.n_cells - n_sel
            if n_sel < 2 or n_rest < 2:
                per_category[category] = MarkerTable(
                    group_label=category,
                    records=[],
                    n_selected=n_sel,
                    n_rest=n_rest,
                    annotation=col.name,
                    skipped_reason=SKIP_GROUP_TOO_SMALL,
                )
                continue
            table = de_from_arrays(
                col_indptr, cell_indices, values, store.n_cells, mask, store.gene_names
            )
            per_category[category] = replace(
                table, group_label=category, annotation=col.name
            )
        tables[col.name] = per_category
    blob = encode_markers(tables)
    store.close()
    replace_markers_section(store_path, blob)
    return tables


def load_markers(store: Store, annotation: str, category: str) -> MarkerTable:
    if store.markers_blob is None:
        raise MarkersNotComputed(f"store {store.path!r} has no precomputed markers")
    tables = decode_markers(store.markers_blob)
    if annotation not in tables:
        raise UnknownAnnotation(f"no marker tables for annotation {annotation!r}")
    per_category = tables[annotation]
    if category not in per_category:
        raise UnknownAnnotation(
            f"no marker table for category {category!r} of annotation {annotation!r}"
        )
    return per_category[category]


def load_all_markers(store: Store) -> dict[str, dict[str, MarkerTable]]:
    if store.markers_blob is None:
        raise MarkersNotComputed(f"store {store.path!r} has no precomputed markers")
    return decode_markers(store.markers_blob)


def to_tsv(table: MarkerTable) -> str:
    """Marker table as tab-separated text, one row per gene."""
    lines = ["annotation\tcategory\tgene\tt\tdf\tp_value\tlog2_fc"]
    annotation = table.annotation or ""
    for r in table.records:
        lines.append(
            f"{annotation}\t{table.group_label}\t{r.gene_name}"
            f"\t{r.t:.6g}\t{r.df:.6g}\t{r.p_value:.6g}\t{r.log_fold_change:.6g}"
        )
    return "\n".join(lines) + "\n"
