"""Embedding initialisers (LE, LEPORID, SVD, Gaussian) and their file formats."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .eigensolver import (
    DEFAULT_SEED,
    DEFAULT_TOL,
    dense_eig_oracle,
    largest_eigenpairs,
    smallest_eigenpairs,
)
from .interactions import InteractionLog, interaction_matrix
from .laplacian import DEFAULT_ALPHA, LaplacianVariant, build_laplacian, variant_for
from .simgraph import SparseSymMatrix

DEFAULT_DIM = 64
RANDOM_STD = 0.01

PROVENANCE_KEYS = ("method", "variant", "alpha", "K", "seed", "dim", "skip_trivial")


@dataclass(frozen=True)
class EmbeddingMatrix:
    values: np.ndarray
    entity_ids: tuple[str, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("embedding values must be a 2-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains NaN or Inf")
        ids = tuple(str(i) for i in self.entity_ids)
        if len(ids) != values.shape[0]:
            raise ValueError(f"{len(ids)} ids for {values.shape[0]} rows")
        prov = {key: None for key in PROVENANCE_KEYS}
        prov.update(self.provenance)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "entity_ids", ids)
        object.__setattr__(self, "provenance", prov)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _ids(ids, n: int) -> tuple[str, ...]:
    return tuple(str(i) for i in ids) if ids is not None else tuple(str(i) for i in range(n))


def _spectral(W: SparseSymMatrix, D: int, variant: LaplacianVariant, seed: int,
              skip_trivial: bool, tol: float, solver: str):
    L = build_laplacian(W, variant)
    k = D + 1 if skip_trivial else D
    if solver == "dense":
        res = dense_eig_oracle(L)
        vals, vecs = res.eigenvalues[:k], res.eigenvectors[:, :k]
    elif solver == "lanczos":
        res = smallest_eigenpairs(L, k, tol=tol, seed=seed)
        vals, vecs = res.eigenvalues, res.eigenvectors
    else:
        raise ValueError(f"unknown solver {solver!r}")
    if skip_trivial:
        vals, vecs = vals[1:], vecs[:, 1:]
    return vals, vecs


def le_embed(W: SparseSymMatrix, D: int = DEFAULT_DIM, normalized: bool = True,
             seed: int = DEFAULT_SEED, *, skip_trivial: bool = False, tol: float = DEFAULT_TOL,
             solver: str = "lanczos", entity_ids=None, K: int | None = None) -> EmbeddingMatrix:
    """Laplacian Eigenmaps: rows of the D eigenvectors with smallest eigenvalues.

    The leading (trivial) eigenvector is kept unless ``skip_trivial``.
    """
    variant = variant_for(normalized, None)
    vals, vecs = _spectral(W, D, variant, seed, skip_trivial, tol, solver)
    prov = dict(method="le", variant=variant.kind.value, alpha=0.0, K=K, seed=seed, dim=D,
                skip_trivial=skip_trivial, eigenvalues=vals.tolist())
    return EmbeddingMatrix(vecs, _ids(entity_ids, W.n), prov)


def leporid_embed(W: SparseSymMatrix, D: int = DEFAULT_DIM, alpha: float = DEFAULT_ALPHA,
                  normalized: bool = True, seed: int = DEFAULT_SEED, *, skip_trivial: bool = False,
                  tol: float = DEFAULT_TOL, solver: str = "lanczos", entity_ids=None,
                  K: int | None = None) -> EmbeddingMatrix:
    """Laplacian Eigenmaps on the popularity-regularised Laplacian (Reg / RegSym)."""
    variant = variant_for(normalized, alpha)
    vals, vecs = _spectral(W, D, variant, seed, skip_trivial, tol, solver)
    prov = dict(method="leporid", variant=variant.kind.value, alpha=float(alpha), K=K, seed=seed,
                dim=D, skip_trivial=skip_trivial, eigenvalues=vals.tolist())
    return EmbeddingMatrix(vecs, _ids(entity_ids, W.n), prov)


def svd_embed(train: InteractionLog, D: int = DEFAULT_DIM, seed: int = DEFAULT_SEED,
              tol: float = DEFAULT_TOL) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    """Truncated SVD of the binary interaction matrix T ~ U S V^T.

    Users get U S^{1/2}, items V S^{1/2}.  The singular vectors of the
    smaller side come from the Gram matrix (T^T T or T T^T) through the
    Lanczos solver; the other side follows as T v / s.
    """
    T = interaction_matrix(train)
    n_u, n_i = T.shape
    if not 1 <= D <= min(n_u, n_i):
        raise ValueError(f"D={D} must lie in [1, min(n_users, n_items)={min(n_u, n_i)}]")
    items_side = n_i <= n_u
    gram = (T.T @ T) if items_side else (T @ T.T)
    res = largest_eigenpairs(SparseSymMatrix.from_scipy(gram), D, tol=tol, seed=seed)
    order = np.argsort(-res.eigenvalues, kind="stable")
    sigma = np.sqrt(np.clip(res.eigenvalues[order], 0.0, None))
    small = res.eigenvectors[:, order]
    other = (T @ small) if items_side else (T.T @ small)
    nz = sigma > 1e-12 * max(sigma.max(initial=0.0), 1.0)
    other[:, nz] /= sigma[nz]
    other[:, ~nz] = 0.0
    U, V = (other, small) if items_side else (small, other)
    root = np.sqrt(sigma)
    prov = dict(method="svd", variant="binary", alpha=None, K=None, seed=seed, dim=D,
                skip_trivial=False, singular_values=sigma.tolist())
    users = EmbeddingMatrix(U * root, train.user_ids, dict(prov, side="user"))
    items = EmbeddingMatrix(V * root, train.item_ids, dict(prov, side="item"))
    return users, items


def random_embed(n: int, D: int = DEFAULT_DIM, seed: int = DEFAULT_SEED,
                 entity_ids=None) -> EmbeddingMatrix:
    """I.i.d. N(0, 0.01^2) entries."""
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, RANDOM_STD, size=(n, D))
    prov = dict(method="random", variant="gaussian", alpha=None, K=None, seed=seed, dim=D,
                skip_trivial=False, std=RANDOM_STD)
    return EmbeddingMatrix(values, _ids(entity_ids, n), prov)


def save_embeddings(emb: EmbeddingMatrix, path: str | os.PathLike, fmt: str = "binary") -> None:
    """Binary container, or TSV (17 significant digits) with a JSON provenance sidecar."""
    if fmt == "binary":
        container.write_bytes(path, container.encode_matrix(emb.values, emb.entity_ids, emb.provenance))
    elif fmt == "tsv":
        header = "\t".join(["id"] + [f"v{k + 1}" for k in range(emb.dim)])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for ident, row in zip(emb.entity_ids, emb.values):
                fh.write(ident + "\t" + "\t".join(f"{x:.17g}" for x in row) + "\n")
        _sidecar(path).write_text(json.dumps(emb.provenance, sort_keys=True), encoding="utf-8")
    else:
        raise ValueError(f"unknown embedding format {fmt!r}")


def _sidecar(path) -> Path:
    return Path(str(path) + ".provenance.json")


def load_embeddings(path: str | os.PathLike) -> EmbeddingMatrix:
    """Load either format; the binary magic decides."""
    data = container.read_bytes(path)
    if data[:4] == container.MAGIC or not data.startswith(b"id"):
        values, ids, prov = container.decode_matrix(data, path)
        return EmbeddingMatrix(values, ids, prov)
    lines = data.decode("utf-8").splitlines()
    dim = len(lines[0].split("\t")) - 1
    ids, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != dim + 1:
            raise ValueError(f"{path}: line {lineno}: expected {dim + 1} fields")
        ids.append(fields[0])
        rows.append([float(x) for x in fields[1:]])
    values = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    side = _sidecar(path)
    prov = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    return EmbeddingMatrix(values, ids, prov)
