"""Extreme eigenpairs of sparse symmetric matrices.

The smallest eigenpairs of a PSD matrix ``M`` are obtained as the largest
eigenpairs of ``sigma*I - M``, where ``sigma`` is the Gershgorin upper bound
on the spectrum.  The largest eigenpairs come from a restarted Lanczos
iteration with full reorthogonalisation: after each cycle the basis is
compressed to the best Ritz vectors plus the Krylov continuation vector
(thick restart, equivalent to implicit restarting with exact shifts).
Converged Ritz pairs are locked and deflated.  Before returning, a fresh
Krylov sequence is run in the deflated space to pick up further copies of
repeated eigenvalues, which a single start vector cannot see.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .simgraph import SparseSymMatrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_RESTARTS = 1000
DEFAULT_SEED = 123


class EigenNonConvergence(RuntimeError):
    def __init__(self, message: str, residuals: np.ndarray):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    restarts: int = 0
    matvecs: int = 0


def _as_operator(M):
    if isinstance(M, SparseSymMatrix):
        return M.to_scipy(), M.n
    if sp.issparse(M):
        return sp.csr_matrix(M), M.shape[0]
    arr = np.asarray(M, dtype=np.float64)
    return arr, arr.shape[0]


def spmv(M: SparseSymMatrix, x) -> np.ndarray:
    """y = M x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != M.n:
        raise ValueError(f"vector of length {x.shape[0]} does not match matrix order {M.n}")
    return M.to_scipy() @ x


def gershgorin_bound(M) -> float:
    """max_i (M_ii + sum_{j != i} |M_ij|), an upper bound on the eigenvalues."""
    mat, _ = _as_operator(M)
    if sp.issparse(mat):
        absrow = np.asarray(abs(mat).sum(axis=1)).ravel()
        diag = mat.diagonal()
    else:
        absrow = np.abs(mat).sum(axis=1)
        diag = np.diag(mat)
    return float(np.max(diag + (absrow - np.abs(diag))))


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry is positive."""
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _orthogonalize(v: np.ndarray, *bases: np.ndarray) -> np.ndarray:
    # classical Gram-Schmidt, applied twice
    for _ in range(2):
        for basis in bases:
            if basis.shape[1]:
                v = v - basis @ (basis.T @ v)
    return v


def _largest(apply, n: int, nev: int, tol: float, max_restarts: int,
             rng: np.random.Generator, verbose: bool, scale: float):
    """Largest ``nev`` eigenpairs of the symmetric operator ``apply``.

    Returns (values descending, vectors, residual norms, restarts, matvecs).
    """
    m = min(max(2 * nev, nev + 20), n)
    breakdown = 1e-12 * max(scale, 1.0)

    X = np.zeros((n, 0))                 # locked eigenvectors
    X_vals = np.zeros(0)
    X_res = np.zeros(0)
    V = np.empty((n, m))                 # active basis, orthogonal to X
    AV = np.empty((n, m))
    k = 0
    f = None                             # Krylov continuation, orthogonal to X and V
    pending = 1                          # start a new Krylov sequence
    verified = False
    matvecs = 0
    last_res = np.full(nev, np.inf)

    def random_direction():
        r = _orthogonalize(rng.standard_normal(n), X, V[:, :k])
        nr = np.linalg.norm(r)
        return r / nr if nr > breakdown else None

    for restart in range(max_restarts + 1):
        cap = min(m, n - X.shape[1])
        if pending and f is None:
            f = random_direction()
        pending = 0

        # Lanczos expansion with full reorthogonalisation
        while k < cap:
            if f is None:
                f = random_direction()
                if f is None:
                    break
            V[:, k] = f
            AV[:, k] = apply(f)
            matvecs += 1
            k += 1
            r = _orthogonalize(AV[:, k - 1], X, V[:, :k])
            nr = np.linalg.norm(r)
            f = r / nr if nr > breakdown else None

        if k == 0:
            break

        # Rayleigh-Ritz on the active space
        H = V[:, :k].T @ AV[:, :k]
        theta, Y = np.linalg.eigh(0.5 * (H + H.T))
        order = np.argsort(-theta, kind="stable")
        theta, Y = theta[order], Y[:, order]
        U = V[:, :k] @ Y
        AU = AV[:, :k] @ Y
        res = np.linalg.norm(AU - U * theta, axis=0)

        # wanted: the nev largest among locked values and active Ritz values
        all_vals = np.concatenate([X_vals, theta])
        wanted = np.argsort(-all_vals, kind="stable")[:nev]
        wanted_active = np.sort(wanted[wanted >= len(X_vals)] - len(X_vals))
        last_res = np.concatenate([X_res, res])[wanted]

        if verbose:
            shown = ", ".join(f"{x:.2e}" for x in res[wanted_active][:8])
            print(f"[lanczos] restart {restart}: locked={X.shape[1]} "
                  f"active-wanted={len(wanted_active)} residuals=[{shown}]", file=sys.stderr)

        lock = [int(j) for j in wanted_active if res[j] <= tol]
        remaining = [int(j) for j in wanted_active if res[j] > tol]
        if lock:
            X = np.column_stack([X, U[:, lock]])
            X_vals = np.concatenate([X_vals, theta[lock]])
            X_res = np.concatenate([X_res, res[lock]])
            verified = False

        if not remaining and X.shape[1] >= nev:
            if verified or X.shape[1] >= n:
                break
            # A single Krylov sequence sees one direction per eigenspace.  Before
            # accepting, run a fresh sequence in the deflated space: a missed
            # copy of a repeated (or skipped) eigenvalue shows up as a wanted
            # Ritz value there.
            verified = True
            k = 0
            f = None
            pending = 1
            continue

        k = len(remaining)
        V[:, :k] = U[:, remaining]
        AV[:, :k] = AU[:, remaining]
    else:
        raise EigenNonConvergence(
            f"Lanczos did not converge within {max_restarts} restarts "
            f"({X.shape[1]} of {nev} pairs locked)", last_res
        )

    order = np.argsort(-X_vals, kind="stable")[:nev]
    if len(order) < nev:
        raise EigenNonConvergence(
            f"only {len(order)} of {nev} eigenpairs found (invariant subspace exhausted)", last_res
        )
    return X_vals[order], X[:, order], X_res[order], restart, matvecs


def largest_eigenpairs(M, D: int, tol: float = DEFAULT_TOL,
                       max_restarts: int = DEFAULT_MAX_RESTARTS, seed: int = DEFAULT_SEED,
                       verbose: bool = False) -> EigenResult:
    """The D largest eigenpairs of a symmetric matrix, values ascending."""
    mat, n = _as_operator(M)
    if not 1 <= D <= n:
        raise ValueError(f"D={D} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    scale = gershgorin_bound(mat)
    vals, vecs, res, restarts, matvecs = _largest(
        lambda x: mat @ x, n, D, tol, max_restarts, rng, verbose, abs(scale)
    )
    vecs = fix_signs(vecs)
    lam = np.einsum("ij,ij->j", vecs, mat @ vecs)
    res = np.linalg.norm(mat @ vecs - vecs * lam, axis=0)
    order = np.argsort(lam, kind="stable")
    return EigenResult(lam[order], vecs[:, order], res[order], restarts, matvecs)


def smallest_eigenpairs(M, D: int, tol: float = DEFAULT_TOL,
                        max_restarts: int = DEFAULT_MAX_RESTARTS, seed: int = DEFAULT_SEED,
                        verbose: bool = False) -> EigenResult:
    """The D smallest eigenpairs of a symmetric PSD matrix.

    Runs Lanczos for the largest eigenpairs of ``sigma*I - M`` with ``sigma``
    the Gershgorin bound, then maps the values back.  Eigenvalues are
    re-evaluated as Rayleigh quotients on ``M`` itself, which keeps values
    near zero accurate to roundoff instead of to ``eps * sigma``.
    """
    mat, n = _as_operator(M)
    if D >= n:
        raise ValueError(f"D={D} must be smaller than the matrix order {n}")
    if D < 1:
        raise ValueError("D must be positive")
    sigma = gershgorin_bound(mat)
    rng = np.random.default_rng(seed)
    _, vecs, _, restarts, matvecs = _largest(
        lambda x: sigma * x - mat @ x, n, D, tol, max_restarts, rng, verbose, abs(sigma)
    )
    vecs = fix_signs(vecs)
    MV = mat @ vecs
    lam = np.einsum("ij,ij->j", vecs, MV)
    res = np.linalg.norm(MV - vecs * lam, axis=0)
    order = np.argsort(lam, kind="stable")
    return EigenResult(lam[order], vecs[:, order], res[order], restarts, matvecs)


def dense_eig_oracle(M) -> EigenResult:
    """Full spectrum by a direct symmetric solver (LAPACK), ascending."""
    if isinstance(M, SparseSymMatrix):
        M = M.to_dense()
    elif sp.issparse(M):
        M = M.toarray()
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.shape[0] > 2000:
        raise ValueError("dense oracle limited to n <= 2000")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > 1e-10:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vecs = fix_signs(vecs)
    res = np.linalg.norm(M @ vecs - vecs * vals, axis=0)
    return EigenResult(vals, vecs, res)
