"""Block-sparse symmetric positive-definite systems.

The symbolic phase (fill-reducing ordering, factor pattern, memory layout and
the list of Schur-complement block updates) runs once per graph structure in
Python. The numeric phase -- assembly, factorization and solves -- goes
through :mod:`markerslam.kernels`, which is either the compiled extension or
the numpy fallback.

Layout of the flat buffer: block columns follow the elimination order; each
column stores its diagonal block first, then the sub-diagonal blocks sorted by
row. Every block is row-major with shape ``(size[row], size[col])``. The
assembled matrix lives in the same buffer and is factored in place.
"""

from __future__ import annotations

import heapq
from typing import Iterable, Sequence

import numpy as np

from . import kernels


def minimum_degree_order(n: int, adjacency: Sequence[set[int]]) -> tuple[list[int], list[list[int]]]:
    """Greedy minimum-degree elimination with explicit fill.

    Ties are broken by node index so the order is deterministic. Returns the
    elimination order and, for each eliminated node, its neighbours at the
    time of elimination (the sub-diagonal pattern of its factor column).
    """
    adj = [set(a) for a in adjacency]
    heap = [(len(adj[v]), v) for v in range(n)]
    heapq.heapify(heap)
    done = [False] * n
    order: list[int] = []
    cols: list[list[int]] = []
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        nbrs = adj[v]
        order.append(v)
        cols.append(sorted(nbrs))
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au.update(w for w in nbrs if w != u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return order, cols


class BlockSystem:
    """Symbolic structure plus numeric storage for ``H x = b``.

    ``sizes[i]`` is the dimension of variable ``i``; ``pairs`` lists the
    off-diagonal couplings ``(i, j)``.
    """

    def __init__(self, sizes: Sequence[int], pairs: Iterable[tuple[int, int]]):
        n = len(sizes)
        self.n = n
        adjacency = [set() for _ in range(n)]
        for i, j in pairs:
            if i != j:
                adjacency[i].add(j)
                adjacency[j].add(i)
        order, cols = minimum_degree_order(n, adjacency)
        pos = np.empty(n, dtype=np.int64)
        pos[order] = np.arange(n)
        self.order = np.asarray(order, dtype=np.int64)
        self.pos = pos

        psizes = np.asarray([sizes[v] for v in order], dtype=np.int64)
        self.sizes = psizes
        self.scalar_off = np.concatenate([[0], np.cumsum(psizes)]).astype(np.int64)
        self.dim = int(self.scalar_off[-1])

        col_ptr = [0]
        blk_row: list[int] = []
        blk_off: list[int] = []
        lookup: list[dict[int, int]] = []
        off = 0
        for p, nbrs in enumerate(cols):
            rows = [p] + sorted(int(pos[u]) for u in nbrs)
            table = {}
            for r in rows:
                table[r] = len(blk_row)
                blk_row.append(r)
                blk_off.append(off)
                off += int(psizes[r] * psizes[p])
            lookup.append(table)
            col_ptr.append(len(blk_row))
        self.col_ptr = np.asarray(col_ptr, dtype=np.int64)
        self.blk_row = np.asarray(blk_row, dtype=np.int64)
        self.blk_off = np.asarray(blk_off, dtype=np.int64)
        self.nnz = off
        self._lookup = lookup
        # sorted (column, row) keys of the stored blocks, for vectorized lookup
        cols_of = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.col_ptr))
        self._keys = cols_of * max(n, 1) + self.blk_row

        upd_ptr = [0]
        upd_a: list[int] = []
        upd_b: list[int] = []
        upd_dst: list[int] = []
        for p in range(n):
            blocks = range(col_ptr[p] + 1, col_ptr[p + 1])
            for ia in blocks:
                ra = blk_row[ia]
                dst_col = lookup[ra]
                for ib in blocks:
                    rb = blk_row[ib]
                    if rb < ra:
                        continue
                    upd_a.append(ib)  # L[rb, p]
                    upd_b.append(ia)  # L[ra, p]
                    upd_dst.append(dst_col[rb])
            upd_ptr.append(len(upd_a))
        self.upd_ptr = np.asarray(upd_ptr, dtype=np.int64)
        self.upd_a = np.asarray(upd_a, dtype=np.int64)
        self.upd_b = np.asarray(upd_b, dtype=np.int64)
        self.upd_dst = np.asarray(upd_dst, dtype=np.int64)

        diag = []
        for p in range(n):
            s = int(psizes[p])
            o = blk_off[col_ptr[p]]
            diag.extend(o + k * s + k for k in range(s))
        self.diag_idx = np.asarray(diag, dtype=np.int64)

        self.values = np.zeros(self.nnz)
        self.rhs = np.zeros(self.dim)

    # -- assembly ---------------------------------------------------------

    def block_index(self, i: int, j: int) -> np.ndarray:
        """Flat buffer positions of the ``sizes[i] x sizes[j]`` block ``H[i, j]``
        (row-major), accounting for storage of its transpose."""
        pi, pj = int(self.pos[i]), int(self.pos[j])
        si, sj = int(self.sizes[pi]), int(self.sizes[pj])
        if pi >= pj:
            base = self.blk_off[self._lookup[pj][pi]]
            return base + np.arange(si)[:, None] * sj + np.arange(sj)[None, :]
        base = self.blk_off[self._lookup[pi][pj]]
        return base + np.arange(sj)[None, :] * si + np.arange(si)[:, None]

    def block_indices(self, I: np.ndarray, J: np.ndarray, si: int, sj: int) -> np.ndarray:
        """Vectorized :meth:`block_index` for equally sized blocks; shape (k, si, sj)."""
        pi, pj = self.pos[I], self.pos[J]
        lower = pi >= pj
        key = np.where(lower, pj, pi) * max(self.n, 1) + np.where(lower, pi, pj)
        base = self.blk_off[np.searchsorted(self._keys, key)][:, None, None]
        r = np.arange(si)[None, :, None]
        c = np.arange(sj)[None, None, :]
        return np.where(lower[:, None, None], base + r * sj + c, base + c * si + r)

    def rhs_indices(self, I: np.ndarray, s: int) -> np.ndarray:
        return self.scalar_off[self.pos[I]][:, None] + np.arange(s)[None, :]

    def rhs_index(self, i: int) -> np.ndarray:
        p = int(self.pos[i])
        return self.scalar_off[p] + np.arange(self.sizes[p])

    def zero(self) -> None:
        self.values[:] = 0.0
        self.rhs[:] = 0.0

    def add(self, idx: np.ndarray, vals: np.ndarray) -> None:
        kernels.scatter_add(self.values, idx, vals)

    def add_rhs(self, idx: np.ndarray, vals: np.ndarray) -> None:
        kernels.scatter_add(self.rhs, idx, vals)

    def diagonal(self) -> np.ndarray:
        """Diagonal of H in permuted scalar order."""
        return self.values[self.diag_idx]

    def to_dense(self) -> np.ndarray:
        """Dense H in the original variable order (testing aid)."""
        H = np.zeros((self.dim, self.dim))
        for p in range(self.n):
            sp = int(self.sizes[p])
            for b in range(self.col_ptr[p], self.col_ptr[p + 1]):
                r = int(self.blk_row[b])
                sr = int(self.sizes[r])
                blk = self.values[self.blk_off[b] : self.blk_off[b] + sr * sp].reshape(sr, sp)
                ro, co = self.scalar_off[r], self.scalar_off[p]
                H[ro : ro + sr, co : co + sp] = blk
                if r != p:
                    H[co : co + sp, ro : ro + sr] = blk.T
        perm = np.concatenate([self.rhs_index(i) for i in range(self.n)]) if self.n else np.zeros(0, int)
        return H[np.ix_(perm, perm)]

    # -- numeric ------------------------------------------------------------

    def solve(self, damping: float = 0.0, min_diagonal: float = 1e-6) -> np.ndarray | None:
        """Solve ``(H + damping * max(diag(H), min_diagonal)) x = rhs``.

        Returns ``x`` in permuted scalar order (see :meth:`unpermute`), or
        ``None`` when the damped matrix is not numerically positive definite.
        """
        L = self.values.copy()
        if damping > 0.0:
            d = L[self.diag_idx]
            L[self.diag_idx] = d + damping * np.maximum(d, min_diagonal)
        status = kernels.block_cholesky(
            L, self.sizes, self.col_ptr, self.blk_row, self.blk_off,
            self.upd_ptr, self.upd_a, self.upd_b, self.upd_dst,
        )
        if status != 0:
            return None
        x = self.rhs.copy()
        kernels.block_solve(L, self.sizes, self.col_ptr, self.blk_row, self.blk_off, self.scalar_off, x)
        if not np.all(np.isfinite(x)):
            return None
        return x

    def unpermute(self, x: np.ndarray, i: int) -> np.ndarray:
        return x[self.rhs_index(i)]
