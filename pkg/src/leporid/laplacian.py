"""Graph Laplacians: plain, symmetric-normalised, and their popularity-regularised forms."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .simgraph import SparseSymMatrix, degrees

DEFAULT_ALPHA = 0.5


class Kind(str, enum.Enum):
    UNNORMALIZED = "unnormalized"
    SYM = "sym"
    REG = "reg"
    REGSYM = "regsym"


class IsolatedNodeError(ValueError):
    pass


@dataclass(frozen=True)
class LaplacianVariant:
    kind: Kind = Kind.REGSYM
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def normalized(self) -> bool:
        return self.kind in (Kind.SYM, Kind.REGSYM)

    @property
    def regularized(self) -> bool:
        return self.kind in (Kind.REG, Kind.REGSYM)


def variant_for(normalized: bool, alpha: float | None) -> LaplacianVariant:
    """LE variant when ``alpha`` is None, regularised variant otherwise."""
    if alpha is None:
        return LaplacianVariant(Kind.SYM if normalized else Kind.UNNORMALIZED, 0.0)
    return LaplacianVariant(Kind.REGSYM if normalized else Kind.REG, alpha)


def regularized_degrees(d: np.ndarray, alpha: float) -> np.ndarray:
    """(1 - a) d + a d_max, written as d + a (d_max - d) so that a = 0 and d = d_max are exact."""
    if len(d) == 0:
        return d.copy()
    return d + alpha * (d.max() - d)


def build_laplacian(W: SparseSymMatrix, variant: LaplacianVariant | str = LaplacianVariant()) -> SparseSymMatrix:
    """Assemble the requested Laplacian with its diagonal stored explicitly."""
    if isinstance(variant, str):
        variant = LaplacianVariant(variant)
    d = degrees(W).d
    alpha = variant.alpha if variant.regularized else 0.0
    dreg = regularized_degrees(d, alpha)

    n = W.n
    rows = np.repeat(np.arange(n), np.diff(W.row_offsets))
    cols = W.col_indices
    off = rows != cols
    rows, cols, w = rows[off], cols[off], W.values[off]

    if variant.normalized:
        if np.any(dreg <= 0):
            bad = int(np.flatnonzero(dreg <= 0)[0])
            raise IsolatedNodeError(
                f"isolated node {bad} (degree 0); use Reg/RegSym or remove node"
            )
        scale = 1.0 / np.sqrt(dreg)
        off_vals = -w * scale[rows] * scale[cols]
        # D^{-1/2} D D^{-1/2}: diagonal entries are dreg_i / dreg_i
        diag_vals = dreg * scale * scale
    else:
        off_vals = -w
        diag_vals = dreg
    diag = np.arange(n)
    return SparseSymMatrix.from_coo(
        n,
        np.concatenate([rows, diag]),
        np.concatenate([cols, diag]),
        np.concatenate([off_vals, diag_vals]),
    )


def quadratic_form(L: SparseSymMatrix, q) -> float:
    """q^T L q."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (L.n,):
        raise ValueError(f"vector of length {q.shape} does not match matrix order {L.n}")
    return float(q @ (L.to_scipy() @ q))


def smoothness_objective(W: SparseSymMatrix, q, alpha: float = 0.0) -> float:
    """Direct evaluation of 1/2 sum_ij W_ij (q_i - q_j)^2 + alpha sum_i (d_max - d_i) q_i^2."""
    q = np.asarray(q, dtype=np.float64)
    i, j, w = W.edges()
    d = degrees(W)
    edge_term = float(np.sum(w * (q[i] - q[j]) ** 2))
    penalty = float(np.sum((d.d_max - d.d) * q * q)) if len(q) else 0.0
    return edge_term + alpha * penalty
