"""Interaction logs: loading, activity filtering and per-user temporal splits."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

TRAIN_FRACTION = (7, 10)
TRAIN_VAL_FRACTION = (8, 10)
DEFAULT_MIN_COUNT = 20


class InteractionFormatError(ValueError):
    """Raised for unreadable interaction files."""


class EmptyLogError(ValueError):
    pass


class Interaction(NamedTuple):
    user: str
    item: str
    timestamp: int


@dataclass(frozen=True)
class InteractionLog:
    """Events in input order plus dense user/item indices.

    ``users``, ``items`` and ``timestamps`` are parallel arrays; the dense
    index of an id is its position in ``user_ids`` / ``item_ids``.  Logs that
    belong to the same split share their id tables, so indices agree across
    train, validation and test.
    """

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    _user_index: dict = field(default=None, repr=False, compare=False)
    _item_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("users", "items", "timestamps"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.users) == len(self.items) == len(self.timestamps)):
            raise ValueError("users, items and timestamps must have equal length")
        if len(self.timestamps) and self.timestamps.min() < 0:
            raise ValueError("timestamps must be non-negative")
        if self._user_index is None:
            object.__setattr__(self, "_user_index", {u: i for i, u in enumerate(self.user_ids)})
        if self._item_index is None:
            object.__setattr__(self, "_item_index", {u: i for i, u in enumerate(self.item_ids)})

    @classmethod
    def from_events(cls, events: Iterable[Interaction | tuple]) -> "InteractionLog":
        """Build a log from (user, item, timestamp) triples, indexing ids by first appearance."""
        user_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        users, items, stamps = [], [], []
        for user, item, ts in events:
            users.append(user_index.setdefault(user, len(user_index)))
            items.append(item_index.setdefault(item, len(item_index)))
            stamps.append(int(ts))
        return cls(
            np.array(users, dtype=np.int64),
            np.array(items, dtype=np.int64),
            np.array(stamps, dtype=np.int64),
            tuple(user_index),
            tuple(item_index),
            user_index,
            item_index,
        )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def user_index(self) -> dict[str, int]:
        return self._user_index

    @property
    def item_index(self) -> dict[str, int]:
        return self._item_index

    def __len__(self) -> int:
        return len(self.users)

    @property
    def events(self) -> list[Interaction]:
        return [
            Interaction(self.user_ids[u], self.item_ids[i], int(t))
            for u, i, t in zip(self.users, self.items, self.timestamps)
        ]

    def subset(self, mask_or_index) -> "InteractionLog":
        """A view over selected events sharing this log's id tables."""
        sel = np.asarray(mask_or_index)
        return InteractionLog(
            self.users[sel],
            self.items[sel],
            self.timestamps[sel],
            self.user_ids,
            self.item_ids,
            self._user_index,
            self._item_index,
        )

    def chronological_order(self) -> np.ndarray:
        """Event positions sorted by (user, timestamp, input order)."""
        return np.lexsort((np.arange(len(self)), self.timestamps, self.users))

    def user_sequences(self) -> list[np.ndarray]:
        """Per-user item indices in chronological order (empty arrays for absent users)."""
        order = self.chronological_order()
        users = self.users[order]
        bounds = np.searchsorted(users, np.arange(self.n_users + 1))
        items = self.items[order]
        return [items[bounds[u]:bounds[u + 1]] for u in range(self.n_users)]

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def concat(self, other: "InteractionLog") -> "InteractionLog":
        if other.user_ids != self.user_ids or other.item_ids != self.item_ids:
            raise ValueError("logs do not share id tables")
        return InteractionLog(
            np.concatenate([self.users, other.users]),
            np.concatenate([self.items, other.items]),
            np.concatenate([self.timestamps, other.timestamps]),
            self.user_ids,
            self.item_ids,
            self._user_index,
            self._item_index,
        )


@dataclass(frozen=True)
class Split:
    train: InteractionLog
    validation: InteractionLog
    test: InteractionLog
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items

    @property
    def user_ids(self) -> tuple[str, ...]:
        return self.train.user_ids

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self.train.item_ids


def load_interactions(path: str | os.PathLike, has_header: bool = False) -> InteractionLog:
    """Read a ``user<TAB>item<TAB>timestamp[<TAB>...]`` file.

    Exact duplicate triples are dropped (first occurrence kept); columns past
    the third are ignored.
    """
    seen: set[tuple[str, str, int]] = set()
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if has_header and lineno == 1:
                continue
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise InteractionFormatError(
                    f"{path}: line {lineno}: expected at least 3 tab-separated fields, got {len(fields)}"
                )
            user, item, raw_ts = fields[0], fields[1], fields[2].strip()
            try:
                ts = int(raw_ts)
            except ValueError:
                raise InteractionFormatError(
                    f"{path}: line {lineno}: timestamp {raw_ts!r} is not an integer"
                ) from None
            if ts < 0:
                raise InteractionFormatError(f"{path}: line {lineno}: negative timestamp {ts}")
            key = (user, item, ts)
            if key in seen:
                continue
            seen.add(key)
            events.append(key)
    if not events:
        raise EmptyLogError(f"{path}: no interactions found")
    return InteractionLog.from_events(events)


def write_interactions(log: InteractionLog, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i, t in zip(log.users, log.items, log.timestamps):
            fh.write(f"{log.user_ids[u]}\t{log.item_ids[i]}\t{t}\n")


def _reindex(log: InteractionLog, keep: np.ndarray) -> InteractionLog:
    users = log.users[keep]
    items = log.items[keep]
    # dense re-indexing that keeps first-appearance order of the survivors
    _, first_u = np.unique(users, return_index=True)
    u_order = users[np.sort(first_u)]
    _, first_i = np.unique(items, return_index=True)
    i_order = items[np.sort(first_i)]
    u_map = np.full(log.n_users, -1, dtype=np.int64)
    u_map[u_order] = np.arange(len(u_order))
    i_map = np.full(log.n_items, -1, dtype=np.int64)
    i_map[i_order] = np.arange(len(i_order))
    return InteractionLog(
        u_map[users],
        i_map[items],
        log.timestamps[keep],
        tuple(log.user_ids[u] for u in u_order),
        tuple(log.item_ids[i] for i in i_order),
    )


def filter_min_activity(log: InteractionLog, min_count: int = DEFAULT_MIN_COUNT) -> InteractionLog:
    """Drop users and items with fewer than ``min_count`` events, repeated to a fixed point."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    keep = np.ones(len(log), dtype=bool)
    while True:
        u_counts = np.bincount(log.users[keep], minlength=log.n_users)
        i_counts = np.bincount(log.items[keep], minlength=log.n_items)
        new_keep = keep & (u_counts[log.users] >= min_count) & (i_counts[log.items] >= min_count)
        if np.array_equal(new_keep, keep):
            break
        keep = new_keep
    if not keep.any():
        raise EmptyLogError("no data survives filtering")
    return _reindex(log, keep)


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, validation, test) counts for a user with ``n`` events.

    Boundaries are cumulative round-half-up of 0.7n and 0.8n, computed in
    integers so that e.g. n=15 gives 11 rather than a float-rounded 10.
    """
    a, b = TRAIN_FRACTION
    c, d = TRAIN_VAL_FRACTION
    n_train = (2 * a * n + b) // (2 * b)
    n_upto_val = (2 * c * n + d) // (2 * d)
    return n_train, n_upto_val - n_train, n - n_upto_val


def temporal_split(log: InteractionLog) -> Split:
    """Chronological 70/10/20 split of every user's history."""
    order = log.chronological_order()
    users = log.users[order]
    counts = np.bincount(users, minlength=log.n_users)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(len(order)) - starts[users]
    part = np.empty(len(order), dtype=np.int8)
    sizes = np.array([split_sizes(int(n)) for n in counts], dtype=np.int64).reshape(-1, 3)
    n_train = sizes[users, 0]
    n_upto_val = n_train + sizes[users, 1]
    part[:] = 2
    part[rank < n_upto_val] = 1
    part[rank < n_train] = 0
    train = log.subset(np.sort(order[part == 0]))
    val = log.subset(np.sort(order[part == 1]))
    test = log.subset(np.sort(order[part == 2]))
    return Split(train, val, test)


def user_item_sets(log: InteractionLog) -> dict[int, set[int]]:
    """Distinct items per user index, for users that have events."""
    sets: dict[int, set[int]] = {}
    for u, i in zip(log.users.tolist(), log.items.tolist()):
        sets.setdefault(u, set()).add(i)
    return sets


def item_user_sets(log: InteractionLog) -> dict[int, set[int]]:
    sets: dict[int, set[int]] = {}
    for u, i in zip(log.users.tolist(), log.items.tolist()):
        sets.setdefault(i, set()).add(u)
    return sets


def interaction_matrix(log: InteractionLog, transpose: bool = False):
    """Binary users x items CSR matrix of the log (items x users if ``transpose``)."""
    import scipy.sparse as sp

    rows, cols = (log.items, log.users) if transpose else (log.users, log.items)
    shape = (log.n_items, log.n_users) if transpose else (log.n_users, log.n_items)
    mat = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    mat.sum_duplicates()
    mat.data[:] = 1.0
    return mat


SPLIT_FILES = ("train.tsv", "validation.tsv", "test.tsv")


def save_split(split: Split, directory: str | os.PathLike) -> None:
    """Write the three parts plus the id tables that pin the dense indices."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLIT_FILES, (split.train, split.validation, split.test)):
        write_interactions(part, directory / name)
    (directory / "users.tsv").write_text("".join(f"{u}\n" for u in split.user_ids), encoding="utf-8")
    (directory / "items.tsv").write_text("".join(f"{i}\n" for i in split.item_ids), encoding="utf-8")


def _read_ids(path: Path) -> tuple[str, ...]:
    return tuple(path.read_text(encoding="utf-8").splitlines())


def load_split(directory: str | os.PathLike) -> Split:
    directory = Path(directory)
    user_ids = _read_ids(directory / "users.tsv")
    item_ids = _read_ids(directory / "items.tsv")
    u_index = {u: k for k, u in enumerate(user_ids)}
    i_index = {i: k for k, i in enumerate(item_ids)}
    parts = []
    for name in SPLIT_FILES:
        users, items, stamps = [], [], []
        with open(directory / name, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                fields = line.rstrip("\r\n").split("\t")
                if len(fields) < 3:
                    raise InteractionFormatError(f"{directory / name}: line {lineno}: malformed")
                try:
                    users.append(u_index[fields[0]])
                    items.append(i_index[fields[1]])
                except KeyError as exc:
                    raise InteractionFormatError(
                        f"{directory / name}: line {lineno}: unknown id {exc.args[0]!r}"
                    ) from None
                stamps.append(int(fields[2]))
        parts.append(InteractionLog(
            np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
            np.array(stamps, dtype=np.int64), user_ids, item_ids, u_index, i_index,
        ))
    return Split(*parts)


def split_log(events: Sequence[tuple[str, str, int]]) -> Split:
    """Convenience: temporal split of in-memory triples without filtering."""
    return temporal_split(InteractionLog.from_events(events))
