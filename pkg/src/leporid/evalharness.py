"""Top-N evaluation: baseline recommenders, HR/precision/recall/F1, tail-user slices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingMatrix
from .interactions import Split, interaction_matrix
from .simgraph import jaccard_topk

DEFAULT_CUTOFFS = (5, 10)
DEFAULT_TAIL_FRACTION = 0.25
DEFAULT_KNN_K = 100
STAGES = ("validation", "test")


class UnknownUserError(KeyError):
    pass


def _history(split: Split, stage: str):
    """Events visible before ``stage`` starts: train, or train + validation."""
    if stage == "validation":
        return split.train
    if stage == "test":
        return split.train.concat(split.validation)
    raise ValueError(f"stage must be one of {STAGES}")


class Recommender:
    """Scores every item for a batch of users; higher is better."""

    kind = "base"

    def fit(self, split: Split) -> "Recommender":
        self.split = split
        self.n_users = split.n_users
        self.n_items = split.n_items
        return self

    def score(self, users: np.ndarray, stage: str = "test") -> np.ndarray:
        raise NotImplementedError

    def _check_users(self, users):
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        bad = users[(users < 0) | (users >= self.n_users)]
        if len(bad):
            raise UnknownUserError(f"unknown user index {int(bad[0])}")
        return users


class TopPop(Recommender):
    kind = "toppop"

    def fit(self, split):
        super().fit(split)
        self.counts = split.train.item_counts().astype(np.float64)
        return self

    def score(self, users, stage="test"):
        users = self._check_users(users)
        return np.broadcast_to(self.counts, (len(users), self.n_items)).copy()


class UserKNN(Recommender):
    """score(u, j) = sum of Jaccard similarities of u's K nearest users that interacted with j."""

    kind = "userknn"

    def __init__(self, k: int = DEFAULT_KNN_K):
        self.k = k

    def fit(self, split):
        super().fit(split)
        self.T = interaction_matrix(split.train)
        self.neighbors = jaccard_topk(self.T, min(self.k, max(self.n_users - 1, 1)))
        return self

    def score(self, users, stage="test"):
        users = self._check_users(users)
        return np.asarray((self.neighbors[users] @ self.T).todense())


class ItemKNN(Recommender):
    """score(u, j) = sum over u's train items i of sim(i, j), each item keeping its K nearest items."""

    kind = "itemknn"

    def __init__(self, k: int = DEFAULT_KNN_K):
        self.k = k

    def fit(self, split):
        super().fit(split)
        self.T = interaction_matrix(split.train)
        self.neighbors = jaccard_topk(self.T.T.tocsr(), min(self.k, max(self.n_items - 1, 1)))
        return self

    def score(self, users, stage="test"):
        users = self._check_users(users)
        return np.asarray((self.T[users] @ self.neighbors).todense())


class EmbeddingNN(Recommender):
    """Negative Euclidean distance between a user vector and each item embedding.

    ``user_repr="embedding"`` uses the user table row directly, which only
    makes sense when both tables share a coordinate system (e.g. SVD
    factors).  ``"item_mean"`` represents the user by the mean embedding of
    their training items, so item embeddings alone are compared.
    """

    kind = "embedding"

    def __init__(self, user_emb: EmbeddingMatrix | np.ndarray | None,
                 item_emb: EmbeddingMatrix | np.ndarray, user_repr: str = "embedding"):
        if user_repr not in ("embedding", "item_mean"):
            raise ValueError("user_repr must be 'embedding' or 'item_mean'")
        if user_repr == "embedding" and user_emb is None:
            raise ValueError("user embeddings required for user_repr='embedding'")
        as_array = lambda e: e.values if isinstance(e, EmbeddingMatrix) else np.asarray(e, dtype=np.float64)
        self.user_vectors = None if user_emb is None else as_array(user_emb)
        self.item_vectors = as_array(item_emb)
        self.user_repr = user_repr

    def fit(self, split):
        super().fit(split)
        if self.item_vectors.shape[0] != self.n_items:
            raise ValueError("item embedding rows do not match the item count")
        if self.user_repr == "embedding":
            if self.user_vectors.shape[0] != self.n_users:
                raise ValueError("user embedding rows do not match the user count")
            if self.user_vectors.shape[1] != self.item_vectors.shape[1]:
                raise ValueError("user and item embeddings differ in dimension")
        else:
            T = interaction_matrix(split.train)
            counts = np.asarray(T.sum(axis=1)).ravel()
            self.user_vectors = (T @ self.item_vectors) / np.maximum(counts, 1.0)[:, None]
        return self

    def score(self, users, stage="test"):
        users = self._check_users(users)
        u = self.user_vectors[users]
        sq = (u * u).sum(1)[:, None] - 2.0 * u @ self.item_vectors.T + (self.item_vectors ** 2).sum(1)[None, :]
        return -np.sqrt(np.maximum(sq, 0.0))


def make_recommender(kind: str, **params) -> Recommender:
    kinds = {"toppop": TopPop, "userknn": UserKNN, "itemknn": ItemKNN, "embedding": EmbeddingNN}
    try:
        return kinds[kind.lower()](**params)
    except KeyError:
        raise ValueError(f"unknown recommender {kind!r}; choose from {sorted(kinds)}") from None


def rank_candidates(scores: np.ndarray, candidates: np.ndarray, N: int) -> np.ndarray:
    """Top-N candidate items by descending score, ties to the smaller item index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:N]]


def recommend(rec: Recommender, user: int, candidates, N: int, stage: str = "test") -> list[int]:
    scores = rec.score(np.array([user]), stage)[0]
    return rank_candidates(scores, np.fromiter(candidates, dtype=np.int64), N).tolist()


@dataclass
class EvalReport:
    cutoffs: tuple[int, ...]
    metrics: dict = field(default_factory=dict)   # slice -> N -> {hr, precision, recall, f1}
    counts: dict = field(default_factory=dict)    # slice -> {users, events}
    stage: str = "test"
    per_event: bool = False
    label: str = ""

    def get(self, metric: str, N: int, slice_: str = "all") -> float:
        return self.metrics[slice_][N][metric]

    def rows(self):
        for slice_, per_n in self.metrics.items():
            for N in self.cutoffs:
                m = per_n[N]
                yield (slice_, N, m["hr"], m["precision"], m["recall"], m["f1"],
                       self.counts[slice_]["users"], self.counts[slice_]["events"])

    def to_tsv(self) -> str:
        lines = ["label\tstage\tslice\tN\thr\tprecision\trecall\tf1\tusers\tevents"]
        for slice_, N, hr, p, r, f1, nu, ne in self.rows():
            lines.append(f"{self.label}\t{self.stage}\t{slice_}\t{N}\t{hr:.6f}\t{p:.6f}\t{r:.6f}\t{f1:.6f}\t{nu}\t{ne}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        head = ("slice", "N", "HR", "precision", "recall", "F1", "users", "events")
        body = [(s, str(N), f"{hr:.4f}", f"{p:.4f}", f"{r:.4f}", f"{f1:.4f}", str(nu), str(ne))
                for s, N, hr, p, r, f1, nu, ne in self.rows()]
        widths = [max(len(row[k]) for row in [head] + body) for k in range(len(head))]
        fmt = lambda row: "  ".join(c.rjust(w) for c, w in zip(row, widths))
        title = f"{self.label or 'report'} ({self.stage}{', per-event' if self.per_event else ''})"
        return "\n".join([title, fmt(head), fmt(tuple("-" * w for w in widths))] + [fmt(r) for r in body]) + "\n"


def f1_score(p: float, r: float) -> float:
    """Harmonic mean of p and r, written as 2 / (1/p + 1/r) so that p=0.2, r=0.5 gives 2/7 exactly."""
    if p <= 0 or r <= 0:
        return 0.0
    return 2.0 / (1.0 / p + 1.0 / r)


def tail_users(split: Split, fraction: float = DEFAULT_TAIL_FRACTION) -> np.ndarray:
    """The ceil(fraction * n_users) users with the fewest train events (ties: lower index)."""
    counts = split.train.user_counts()
    n_tail = int(math.ceil(fraction * split.n_users))
    order = np.lexsort((np.arange(split.n_users), counts))
    return np.sort(order[:n_tail])


def _relevance(split: Split, stage: str):
    """Per-user seen items, relevant items (as sets) and relevant events (lists)."""
    seen_log = _history(split, stage)
    target = split.validation if stage == "validation" else split.test
    seen = [set() for _ in range(split.n_users)]
    for u, i in zip(seen_log.users.tolist(), seen_log.items.tolist()):
        seen[u].add(i)
    events = [[] for _ in range(split.n_users)]
    for u, i in zip(target.users.tolist(), target.items.tolist()):
        if i not in seen[u]:
            events[u].append(i)
    return seen, events


def evaluate(rec: Recommender, split: Split, cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
             tail_fraction: float = DEFAULT_TAIL_FRACTION, per_event: bool = False,
             stage: str = "test", batch_size: int = 256, label: str = "") -> EvalReport:
    """HR@N, precision@N, recall@N and F1@N over users (or events) with relevant items.

    Candidates for a user are the items absent from their history before
    ``stage``; relevant items are the stage's items among those candidates.
    Per user: hits = |top-N & R|, precision = hits/N, recall = hits/|R|,
    HR = [hits >= 1].  F1 is computed from the averaged precision and recall.
    """
    cutoffs = tuple(sorted(set(int(c) for c in cutoffs)))
    if not cutoffs or cutoffs[0] < 1:
        raise ValueError("cutoffs must be positive integers")
    if getattr(rec, "split", None) is not split:
        rec.fit(split)
    seen, events = _relevance(split, stage)
    users = np.array([u for u in range(split.n_users) if events[u]], dtype=np.int64)
    maxN = cutoffs[-1]
    all_items = np.arange(split.n_items)

    # per evaluation unit (user, or event when per_event): hits at each cutoff
    unit_user, unit_rel, unit_hits = [], [], []
    for start in range(0, len(users), batch_size):
        batch = users[start:start + batch_size]
        scores = rec.score(batch, stage)
        for row, u in zip(scores, batch.tolist()):
            mask = np.ones(split.n_items, dtype=bool)
            mask[list(seen[u])] = False
            top = rank_candidates(row, all_items[mask], maxN)
            if per_event:
                position = {item: k for k, item in enumerate(top.tolist())}
                for item in events[u]:
                    k = position.get(item, maxN)
                    unit_user.append(u)
                    unit_rel.append(1)
                    unit_hits.append([int(k < N) for N in cutoffs])
            else:
                relevant = set(events[u])
                hit_flags = np.fromiter((item in relevant for item in top.tolist()), dtype=np.int64,
                                        count=len(top))
                cum = np.concatenate([[0], np.cumsum(hit_flags)])
                unit_user.append(u)
                unit_rel.append(len(relevant))
                unit_hits.append([int(cum[min(N, len(top))]) for N in cutoffs])

    unit_user = np.array(unit_user, dtype=np.int64)
    unit_rel = np.array(unit_rel, dtype=np.int64)
    unit_hits = np.array(unit_hits, dtype=np.int64).reshape(len(unit_user), len(cutoffs))
    n_events = [len(e) for e in events]

    report = EvalReport(cutoffs, stage=stage, per_event=per_event, label=label)
    tail = set(tail_users(split, tail_fraction).tolist())
    pct = int(round(100 * tail_fraction))
    for slice_name, member in (("all", None), (f"tail{pct}", tail)):
        sel = np.ones(len(unit_user), dtype=bool) if member is None else \
            np.array([u in member for u in unit_user.tolist()], dtype=bool)
        n_units = int(sel.sum())
        sliced_users = sorted(set(unit_user[sel].tolist()))
        report.counts[slice_name] = {
            "users": len(sliced_users),
            "events": int(sum(n_events[u] for u in sliced_users)),
        }
        report.metrics[slice_name] = {}
        for c, N in enumerate(cutoffs):
            hits = unit_hits[sel, c]
            if n_units == 0:
                hr = p = r = 0.0
            else:
                # sums then a single division: independent of evaluation order
                hr = math.fsum((hits > 0).astype(float)) / n_units
                p = math.fsum(hits / N) / n_units
                r = math.fsum(hits / unit_rel[sel]) / n_units
            report.metrics[slice_name][N] = {"hr": hr, "precision": p, "recall": r, "f1": f1_score(p, r)}
    return report
