"""How much does one extra edge move a node's Laplacian-eigenmap embedding?

Barabasi-Albert graphs are perturbed one edge at a time and the change of
the touched node's embedding row is recorded against its prior degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .eigensolver import fix_signs
from .simgraph import SparseSymMatrix

GAP_TOL = 1e-8


def ba_graph(m0: int = 10, n: int = 100, m_attach: int = 10, seed: int = 123) -> SparseSymMatrix:
    """Preferential attachment from an edgeless graph on m0 nodes.

    The first new node picks m_attach of the initial nodes uniformly; later
    nodes sample distinct targets with probability proportional to degree,
    drawn from the pool of edge endpoints as networkx does.
    """
    if not 1 <= m_attach <= m0 or m0 > n:
        raise ValueError(f"need 1 <= m_attach ({m_attach}) <= m0 ({m0}) <= n ({n})")
    rng = np.random.default_rng(seed)
    targets = sorted(rng.choice(m0, size=m_attach, replace=False).tolist())
    pool: list[int] = []
    rows, cols = [], []
    for source in range(m0, n):
        rows.extend([source] * m_attach)
        cols.extend(targets)
        pool.extend(targets)
        pool.extend([source] * m_attach)
        chosen: set[int] = set()
        while len(chosen) < m_attach:
            chosen.add(pool[rng.integers(len(pool))])
        targets = sorted(chosen)
    r = np.array(rows + cols, dtype=np.int64)
    c = np.array(cols + rows, dtype=np.int64)
    return SparseSymMatrix.from_coo(n, r, c, np.ones(len(r)))


@dataclass(frozen=True)
class SimConfig:
    m0: int = 10
    n: int = 100
    m_attach: int = 10
    graphs: int = 50
    insertions_per_node: int = 30
    embed_dim: int = 40
    seed: int = 123
    batch: int = 256

    def __post_init__(self):
        if not self.m0 < self.n:
            raise ValueError("m0 must be smaller than n")
        if min(self.m0, self.m_attach, self.graphs, self.insertions_per_node, self.embed_dim, self.batch) < 1:
            raise ValueError("all counts must be >= 1")
        if self.embed_dim >= self.n:
            raise ValueError("embed_dim must be smaller than n")


@dataclass
class DegreeChangeCurve:
    degrees: np.ndarray
    mean_change: np.ndarray
    counts: np.ndarray
    excluded_trials: int = 0
    skipped_trials: int = 0
    total_trials: int = 0
    meta: dict = field(default_factory=dict)

    def spearman(self) -> float:
        if len(self.degrees) < 2:
            return math.nan
        return float(stats.spearmanr(self.degrees, self.mean_change).statistic)

    def to_tsv(self) -> str:
        lines = ["degree\tmean_change\tcount"]
        lines += [f"{d}\t{m:.10g}\t{c}" for d, m, c in zip(self.degrees, self.mean_change, self.counts)]
        lines.append(f"# spearman={self.spearman():.6f}\tbuckets={len(self.degrees)}\t"
                     f"trials={self.total_trials}\texcluded_degenerate={self.excluded_trials}\t"
                     f"skipped_saturated={self.skipped_trials}")
        return "\n".join(lines) + "\n"


def _embed(L: np.ndarray, dim: int):
    """Smallest ``dim`` eigenpairs (batched) plus the gap to the next eigenvalue."""
    vals, vecs = np.linalg.eigh(L)
    return vecs[..., :dim], vals[..., dim] - vals[..., dim - 1]


def matched_change(before: np.ndarray, after: np.ndarray, node: int) -> float:
    """Row change after flipping each ``after`` column to the sign closest to ``before``."""
    flip = np.where(np.einsum("ij,ij->j", before, after) < 0, -1.0, 1.0)
    return float(np.linalg.norm(after[node] * flip - before[node]))


def sample_insertions(A: np.ndarray, per_node: int, rng: np.random.Generator):
    """``per_node`` absent edges (v, w) per node v, uniform over v's non-neighbours.

    Nodes already adjacent to everything contribute ``per_node`` skipped trials.
    """
    n = A.shape[0]
    trials = []
    skipped = 0
    for v in range(n):
        absent = np.flatnonzero((A[v] == 0) & (np.arange(n) != v))
        if len(absent) == 0:
            skipped += per_node
            continue
        for w in rng.choice(absent, size=per_node, replace=True):
            trials.append((v, int(w)))
    return trials, skipped


def _graph_trials(A: np.ndarray, cfg: SimConfig, rng: np.random.Generator):
    n = A.shape[0]
    deg = A.sum(axis=1)
    L = np.diag(deg) - A
    base, base_gap = _embed(L, cfg.embed_dim)
    base = fix_signs(base)
    trials, skipped = sample_insertions(A, cfg.insertions_per_node, rng)
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    excluded = 0
    for start in range(0, len(trials), cfg.batch):
        chunk = trials[start:start + cfg.batch]
        Ls = np.repeat(L[None], len(chunk), axis=0)
        for k, (v, w) in enumerate(chunk):
            Ls[k, v, v] += 1.0
            Ls[k, w, w] += 1.0
            Ls[k, v, w] -= 1.0
            Ls[k, w, v] -= 1.0
        vecs, gaps = _embed(Ls, cfg.embed_dim)
        for k, (v, _) in enumerate(chunk):
            if base_gap < GAP_TOL or gaps[k] < GAP_TOL:
                excluded += 1
                continue
            sums[v] += matched_change(base, fix_signs(vecs[k]), v)
            counts[v] += 1
    return deg, sums, counts, excluded, skipped, len(trials) + skipped


def perturb_and_measure(config: SimConfig = SimConfig(), progress=None) -> DegreeChangeCurve:
    """Mean embedding-row change per prior-degree bucket over all graphs.

    Each node's trials are averaged first; a bucket's value is the mean of
    those per-node averages over every node of that degree in every graph.
    Graph g uses its own child seed, so results do not depend on scheduling.
    """
    children = np.random.SeedSequence(config.seed).spawn(config.graphs)
    per_degree: dict[int, list[float]] = {}
    excluded = skipped = total = 0
    for g, child in enumerate(children):
        graph_seed, trial_seed = child.generate_state(2)
        W = ba_graph(config.m0, config.n, config.m_attach, int(graph_seed))
        A = W.to_dense()
        deg, sums, counts, ex, sk, tot = _graph_trials(A, config, np.random.default_rng(trial_seed))
        excluded += ex
        skipped += sk
        total += tot
        for v in np.flatnonzero(counts):
            per_degree.setdefault(int(round(deg[v])), []).append(sums[v] / counts[v])
        if progress is not None:
            print(f"graph {g + 1}/{config.graphs} done", file=progress)
    degrees = np.array(sorted(per_degree), dtype=np.int64)
    means = np.array([math.fsum(per_degree[d]) / len(per_degree[d]) for d in degrees])
    counts = np.array([len(per_degree[d]) for d in degrees], dtype=np.int64)
    return DegreeChangeCurve(degrees, means, counts, excluded, skipped, total,
                             meta=dict(vars(config)))
