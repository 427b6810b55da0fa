"""Jaccard-weighted K-nearest-neighbour similarity graphs in CSR form."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

DEFAULT_K = 1000
_ROW_CHUNK = 512


@dataclass(frozen=True)
class SparseSymMatrix:
    """Symmetric matrix in compressed-row layout.

    Column indices are strictly increasing within each row.  Used both for
    adjacency matrices (non-negative, zero diagonal) and for Laplacians
    (explicit diagonal).
    """

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        if ro.shape != (self.n + 1,) or ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(va):
            raise ValueError("inconsistent CSR arrays")
        for arr in (ro, ci, va):
            arr.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        object.__setattr__(self, "_csr", None)

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals) -> "SparseSymMatrix":
        """Build from triplets; duplicates are summed.  Symmetry is not imposed."""
        mat = sp.coo_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows), np.asarray(cols))), shape=(n, n)
        ).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return cls(n, mat.indptr, mat.indices, mat.data)

    @classmethod
    def from_scipy(cls, mat) -> "SparseSymMatrix":
        mat = sp.csr_matrix(mat, dtype=np.float64)
        mat.sum_duplicates()
        mat.sort_indices()
        return cls(mat.shape[0], mat.indptr, mat.indices, mat.data)

    @classmethod
    def from_dense(cls, dense) -> "SparseSymMatrix":
        """Stores nonzeros plus the full diagonal (explicit zeros included)."""
        dense = np.asarray(dense, dtype=np.float64)
        n = dense.shape[0]
        off = ~np.eye(n, dtype=bool) & (dense != 0)
        rows, cols = np.nonzero(off)
        diag = np.arange(n)
        return cls.from_coo(
            n,
            np.concatenate([rows, diag]),
            np.concatenate([cols, diag]),
            np.concatenate([dense[rows, cols], dense[diag, diag]]),
        )

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def to_scipy(self) -> sp.csr_matrix:
        if self._csr is None:
            csr = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets), shape=(self.n, self.n)
            )
            csr.has_sorted_indices = True
            object.__setattr__(self, "_csr", csr)
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def edges(self):
        """(i, j, w) arrays for stored off-diagonal entries with i < j."""
        rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        upper = rows < self.col_indices
        return rows[upper], self.col_indices[upper], self.values[upper]

    def is_symmetric(self, tol: float = 0.0) -> bool:
        a = self.to_scipy()
        diff = (a - a.T).tocoo()
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= tol


@dataclass(frozen=True)
class DegreeVector:
    d: np.ndarray
    d_max: float


def jaccard(set_a, set_b) -> float:
    """|A & B| / |A | B|, zero when both sets are empty."""
    a, b = set(set_a), set(set_b)
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def _membership_matrix(sets, n: int | None = None) -> sp.csr_matrix:
    if isinstance(sets, Mapping):
        n = (max(sets) + 1 if sets else 0) if n is None else n
        seq = [sets.get(k, ()) for k in range(n)]
    else:
        seq = list(sets)
        n = len(seq) if n is None else n
        seq = seq + [()] * (n - len(seq))
    rows, cols = [], []
    for node, members in enumerate(seq):
        for m in members:
            rows.append(node)
            cols.append(m)
    n_cols = (max(cols) + 1) if cols else 0
    mat = sp.csr_matrix(
        (np.ones(len(rows)), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(n, n_cols),
    )
    mat.sum_duplicates()
    mat.data[:] = 1.0
    return mat


def jaccard_topk(membership: sp.csr_matrix, K: int) -> sp.csr_matrix:
    """Directed top-K Jaccard neighbour lists, one row per node.

    Only pairs that share at least one member are scored (the product
    ``B @ B.T`` visits co-occurring pairs only).  Self pairs and zero
    similarities are excluded; ties at the K-th value go to the smaller
    node index.
    """
    membership = sp.csr_matrix(membership, dtype=np.float64)
    n = membership.shape[0]
    sizes = np.asarray(membership.sum(axis=1)).ravel()
    bt = membership.T.tocsc()
    out_rows, out_cols, out_vals = [], [], []
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        inter = (membership[start:stop] @ bt).tocsr()
        inter.sort_indices()
        for local in range(stop - start):
            node = start + local
            lo, hi = inter.indptr[local], inter.indptr[local + 1]
            cols = inter.indices[lo:hi]
            counts = inter.data[lo:hi]
            mask = cols != node
            cols, counts = cols[mask], counts[mask]
            if len(cols) == 0:
                continue
            sims = counts / (sizes[node] + sizes[cols] - counts)
            if len(cols) > K:
                order = np.lexsort((cols, -sims))[:K]
                cols, sims = cols[order], sims[order]
            out_rows.append(np.full(len(cols), node, dtype=np.int64))
            out_cols.append(cols.astype(np.int64))
            out_vals.append(sims)
    if out_rows:
        rows, cols, vals = map(np.concatenate, (out_rows, out_cols, out_vals))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def knn_graph(sets, K: int = DEFAULT_K, n: int | None = None) -> SparseSymMatrix:
    """Union-symmetrised Jaccard KNN graph.

    ``sets`` is either a sequence of member sets (node k -> sets[k]) or a
    mapping from node index to set; ``n`` pads the node count for mappings
    that omit trailing nodes.
    """
    return _knn_from_membership(_membership_matrix(sets, n), K)


def knn_graph_from_log(log, K: int = DEFAULT_K, side: str = "user") -> SparseSymMatrix:
    """User graph (users linked by shared items) or item graph (items linked by shared users)."""
    from .interactions import interaction_matrix

    if side not in ("user", "item"):
        raise ValueError("side must be 'user' or 'item'")
    return _knn_from_membership(interaction_matrix(log, transpose=(side == "item")), K)


def _knn_from_membership(membership: sp.csr_matrix, K: int) -> SparseSymMatrix:
    n = membership.shape[0]
    if n < 2:
        raise ValueError("knn_graph needs at least 2 nodes")
    if K < 1:
        raise ValueError("K must be >= 1")
    if K >= n:
        warnings.warn(f"K={K} >= node count {n}; clamping to {n - 1}", stacklevel=3)
        K = n - 1
    return _symmetrize(jaccard_topk(membership, K))


def _symmetrize(directed: sp.csr_matrix) -> SparseSymMatrix:
    n = directed.shape[0]
    d = directed.tocoo()
    rows = np.concatenate([d.row, d.col])
    cols = np.concatenate([d.col, d.row])
    vals = np.concatenate([d.data, d.data])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    both = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    mat.sort_indices()
    both.sort_indices()
    mat.data = mat.data / both.data
    return SparseSymMatrix(n, mat.indptr, mat.indices, mat.data)


def degrees(W: SparseSymMatrix) -> DegreeVector:
    d = np.asarray(W.to_scipy().sum(axis=1)).ravel()
    return DegreeVector(d, float(d.max()) if len(d) else 0.0)


def write_edge_list(W: SparseSymMatrix, path: str | os.PathLike) -> None:
    """TSV ``i<TAB>j<TAB>weight`` with i < j."""
    rows, cols, vals = W.edges()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j, w in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            fh.write(f"{i}\t{j}\t{w:.17g}\n")


def read_edge_list(path: str | os.PathLike, n: int) -> SparseSymMatrix:
    rows, cols, vals = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path}: line {lineno}: expected i, j, weight")
            i, j, w = int(fields[0]), int(fields[1]), float(fields[2])
            if not (0 <= i < j < n):
                raise ValueError(f"{path}: line {lineno}: bad edge ({i}, {j}) for n={n}")
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
    return SparseSymMatrix.from_coo(n, rows, cols, vals)
