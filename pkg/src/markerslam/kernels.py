"""Numeric kernel dispatch.

The compiled extension ``markerslam._native`` is used when it imports; the
numpy implementation in ``markerslam._fallback`` is used otherwise.
:func:`use_backend` switches explicitly (tests and benchmarks run both).
"""

from __future__ import annotations

import numpy as np

from . import _fallback

try:
    from . import _native
except ImportError:  # extension not built
    _native = None

BACKENDS = ("native", "python") if _native is not None else ("python",)

_impl = _native if _native is not None else _fallback
backend = "native" if _native is not None else "python"


def use_backend(name: str) -> None:
    global _impl, backend
    if name == "native":
        if _native is None:
            raise RuntimeError("compiled kernels are not available")
        _impl = _native
    elif name == "python":
        _impl = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")
    backend = name


def scatter_add(buf, idx, vals) -> None:
    """``buf[idx] += vals`` with repeated indices accumulated."""
    idx = np.ascontiguousarray(idx, dtype=np.int64).ravel()
    vals = np.ascontiguousarray(vals, dtype=float).ravel()
    _impl.scatter_add(buf, idx, vals)


def block_cholesky(buf, sizes, col_ptr, blk_row, blk_off, upd_ptr, upd_a, upd_b, upd_dst) -> int:
    if len(sizes) == 0:
        return 0
    return _impl.block_cholesky(buf, sizes, col_ptr, blk_row, blk_off, upd_ptr, upd_a, upd_b, upd_dst)


def block_solve(buf, sizes, col_ptr, blk_row, blk_off, scalar_off, x) -> None:
    if len(sizes) == 0:
        return
    _impl.block_solve(buf, sizes, col_ptr, blk_row, blk_off, scalar_off, x)
