"""Kernel dispatch: numba-jitted hot loops with a pure-numpy fallback.

The active path is chosen once at import time. Set ``SCELLAR_NUMBA=0`` to
force the numpy fallback; any other value (or an importable numba) selects
the jitted kernels. ``benchmarks/bench_kernels.py`` compares both.
"""

from __future__ import annotations

import os

from . import numpy_impl

_flag = os.environ.get("SCELLAR_NUMBA", "").strip().lower()

if _flag in ("0", "false", "no", "off"):
    _impl = numpy_impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:
        _impl = numpy_impl

csr_to_csc = _impl.csr_to_csc
column_group_sums = _impl.column_group_sums
expr_block_u16 = _impl.expr_block_u16
sphere_query = _impl.sphere_query
lasso_mask = _impl.lasso_mask


def backend() -> str:
    """Name of the active kernel path ("numba" or "numpy")."""
    return _impl.BACKEND
