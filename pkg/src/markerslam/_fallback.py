"""Pure numpy implementation of the numeric kernels.

Mirrors ``_native.pyx`` operation for operation; see :mod:`markerslam.linsys`
for the buffer layout.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular


def scatter_add(buf: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    buf += np.bincount(idx.ravel(), weights=vals.ravel(), minlength=buf.size)


def _block(buf, off, rows, cols):
    return buf[off : off + rows * cols].reshape(rows, cols)


def block_cholesky(buf, sizes, col_ptr, blk_row, blk_off, upd_ptr, upd_a, upd_b, upd_dst) -> int:
    """Right-looking block Cholesky in place; returns 0 or ``1 + failing column``."""
    n = len(sizes)
    for p in range(n):
        sp = int(sizes[p])
        b0, b1 = int(col_ptr[p]), int(col_ptr[p + 1])
        D = _block(buf, blk_off[b0], sp, sp)
        lower = np.tril(D)
        sym = lower + np.tril(D, -1).T
        try:
            Lpp = np.linalg.cholesky(sym)
        except np.linalg.LinAlgError:
            return p + 1
        if not np.all(np.isfinite(Lpp)):
            return p + 1
        D[...] = Lpp
        for b in range(b0 + 1, b1):
            sr = int(sizes[blk_row[b]])
            B = _block(buf, blk_off[b], sr, sp)
            # B <- B L^-T
            B[...] = solve_triangular(Lpp, B.T, lower=True, check_finite=False).T
        for u in range(int(upd_ptr[p]), int(upd_ptr[p + 1])):
            ia, ib, dst = int(upd_a[u]), int(upd_b[u]), int(upd_dst[u])
            sa = int(sizes[blk_row[ia]])
            sb = int(sizes[blk_row[ib]])
            A = _block(buf, blk_off[ia], sa, sp)
            B = _block(buf, blk_off[ib], sb, sp)
            _block(buf, blk_off[dst], sa, sb)[...] -= A @ B.T
    return 0


def block_solve(buf, sizes, col_ptr, blk_row, blk_off, scalar_off, x) -> None:
    """Forward and back substitution with the factor from :func:`block_cholesky`."""
    n = len(sizes)
    for p in range(n):
        sp = int(sizes[p])
        o = int(scalar_off[p])
        Lpp = _block(buf, blk_off[col_ptr[p]], sp, sp)
        xp = solve_triangular(Lpp, x[o : o + sp], lower=True, check_finite=False)
        x[o : o + sp] = xp
        for b in range(int(col_ptr[p]) + 1, int(col_ptr[p + 1])):
            r = int(blk_row[b])
            sr = int(sizes[r])
            ro = int(scalar_off[r])
            x[ro : ro + sr] -= _block(buf, blk_off[b], sr, sp) @ xp
    for p in range(n - 1, -1, -1):
        sp = int(sizes[p])
        o = int(scalar_off[p])
        acc = x[o : o + sp].copy()
        for b in range(int(col_ptr[p]) + 1, int(col_ptr[p + 1])):
            r = int(blk_row[b])
            sr = int(sizes[r])
            ro = int(scalar_off[r])
            acc -= _block(buf, blk_off[b], sr, sp).T @ x[ro : ro + sr]
        Lpp = _block(buf, blk_off[col_ptr[p]], sp, sp)
        x[o : o + sp] = solve_triangular(Lpp, acc, lower=True, trans="T", check_finite=False)
