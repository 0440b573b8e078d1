"""Shared display semantics: expression normalization, palettes, view state.

Expression color is driven by values clipped at the 99th percentile of
the gene's nonzero entries, so a handful of extreme cells cannot wash
out the contrast of everything else. The clip value and the raw range
travel with the data so a viewer can label its scale honestly.

Categorical colors step the hue by the golden-angle fraction, keeping
neighboring categories far apart for any category count.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ScellarError
from .store import GeneColumnCSC
from . import kernels

PHI_INV = (math.sqrt(5.0) - 1.0) / 2.0
PALETTE_SATURATION = 0.75
PALETTE_VALUE = 0.95

MODE_METADATA = "metadata"
MODE_EXPRESSION = "expression"


class NegativeExpression(ScellarError):
    """Expression values must be non-negative."""


@dataclass(frozen=True)
class NormalizationInfo:
    gene_name: str
    raw_min: float
    raw_max: float
    clip_value: float  # the normalization divisor


@dataclass(frozen=True)
class ViewState:
    """One session's display mode, annotation choice, and gene cursor."""

    mode: str = MODE_METADATA
    active_annotation: int = 0
    gene_set: tuple[int, ...] = ()
    gene_cursor: int = 0

    def current_gene(self) -> int | None:
        if not self.gene_set:
            return None
        return self.gene_set[self.gene_cursor]


def compute_clip(values: np.ndarray) -> float:
    """Normalization divisor: 99th-percentile (nearest-rank) nonzero value.

    With fewer than 100 nonzeros the percentile is noise, so the max
    nonzero is used; an all-zero vector gets 1 so division stays defined.
    """
    nz = values[values > 0.0]
    m = len(nz)
    if m == 0:
        return 1.0
    if m < 100:
        return float(nz.max())
    k = math.ceil(0.99 * m)  # 1-based rank
    return float(np.partition(nz, k - 1)[k - 1])


def normalize_expression(
    values: np.ndarray, gene_name: str = ""
) -> tuple[np.ndarray, NormalizationInfo]:
    """Map a dense expression vector into [0, 1] for color display.

    normalized = min(v / clip, 1) with the percentile clip above. The
    returned info carries the true (unnormalized) min/max for the scale.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size and not np.isfinite(v).all():
        raise ValueError("expression values must be finite")
    if v.size and float(v.min()) < 0.0:
        raise NegativeExpression("expression values must be non-negative")
    if v.size == 0 or float(v.max()) == 0.0:
        info = NormalizationInfo(gene_name, 0.0, 0.0, 1.0)
        return np.zeros(v.shape, dtype=np.float64), info
    clip = compute_clip(v)
    info = NormalizationInfo(gene_name, float(v.min()), float(v.max()), clip)
    return np.minimum(v / clip, 1.0), info


def quantize_u16(normalized: np.ndarray) -> np.ndarray:
    """16-bit fixed-point encoding of values already in [0, 1]."""
    return np.rint(np.asarray(normalized, dtype=np.float64) * 65535.0).astype(np.uint16)


def dequantize_u16(block: np.ndarray) -> np.ndarray:
    return np.asarray(block, dtype=np.float64) / 65535.0


def column_expression_block(
    column: GeneColumnCSC, n_cells: int, gene_name: str = ""
) -> tuple[np.ndarray, NormalizationInfo]:
    """Normalized + quantized block for one sparse gene column.

    Same semantics as normalize_expression followed by quantize_u16, but
    never densifies to float64 first; the kernel scatters straight into
    the u16 output. Cells absent from the column are exact zeros.
    """
    vals = np.asarray(column.values, dtype=np.float64)
    if vals.size and not np.isfinite(vals).all():
        raise ValueError("expression values must be finite")
    if vals.size and float(vals.min()) < 0.0:
        raise NegativeExpression("expression values must be non-negative")
    if vals.size == 0:
        info = NormalizationInfo(gene_name, 0.0, 0.0, 1.0)
        return np.zeros(n_cells, dtype=np.uint16), info
    clip = compute_clip(vals)
    raw_min = 0.0 if column.nonzero_count < n_cells else float(vals.min())
    info = NormalizationInfo(gene_name, raw_min, float(column.max_value), clip)
    block = kernels.expr_block_u16(
        np.asarray(column.cell_indices, dtype=np.uint32), vals, n_cells, clip
    )
    return block, info


def categorical_palette(n: int) -> np.ndarray:
    """RGB colors for ``n`` categories, deterministic in ``n`` and k."""
    out = np.empty((n, 3), dtype=np.float64)
    for k in range(n):
        hue = math.modf(k * PHI_INV)[0]
        out[k] = colorsys.hsv_to_rgb(hue, PALETTE_SATURATION, PALETTE_VALUE)
    return out


def palette_hex(colors: np.ndarray) -> list[str]:
    return [
        "#%02x%02x%02x" % tuple(int(round(c * 255.0)) for c in row) for row in colors
    ]


def step_view(
    state: ViewState,
    action: str,
    *,
    genes: Sequence[int] | None = None,
    n_annotations: int = 1,
) -> ViewState:
    """Pure transition function for the display state machine.

    Actions: toggle_mode, next_annotation (cyclic over ``n_annotations``),
    next_gene / prev_gene (cyclic over the gene set; no-ops when empty),
    and load_gene_set (replaces the set, cursor back to 0).
    """
    if action == "toggle_mode":
        mode = MODE_EXPRESSION if state.mode == MODE_METADATA else MODE_METADATA
        return replace(state, mode=mode)
    if action == "next_annotation":
        if n_annotations <= 0:
            return state
        return replace(state, active_annotation=(state.active_annotation + 1) % n_annotations)
    if action == "next_gene":
        if not state.gene_set:
            return state
        return replace(state, gene_cursor=(state.gene_cursor + 1) % len(state.gene_set))
    if action == "prev_gene":
        if not state.gene_set:
            return state
        return replace(state, gene_cursor=(state.gene_cursor - 1) % len(state.gene_set))
    if action == "load_gene_set":
        return replace(state, gene_set=tuple(int(g) for g in (genes or ())), gene_cursor=0)
    raise ValueError(f"unknown view action {action!r}")
