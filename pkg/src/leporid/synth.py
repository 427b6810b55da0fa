"""Planted-cluster interaction data for direction-of-effect checks."""

from __future__ import annotations

import numpy as np

from .interactions import Interaction, InteractionLog


def planted_clusters(clusters: int = 4, users: int = 200, items: int = 200, p_in: float = 0.3,
                     p_out: float = 0.01, seed: int = 123) -> list[Interaction]:
    """Users and items are split into ``clusters`` contiguous blocks.

    A user interacts with an item of its own block with probability ``p_in``
    and with any other item with probability ``p_out``.  Each user's events
    get a random order, encoded as timestamps 0..n_u-1.
    """
    if clusters < 1 or users < clusters or items < clusters:
        raise ValueError("need at least one user and one item per cluster")
    if not 0.0 <= p_out < p_in <= 1.0:
        raise ValueError("require 0 <= p_out < p_in <= 1")
    rng = np.random.default_rng(seed)
    user_cluster = np.arange(users) * clusters // users
    item_cluster = np.arange(items) * clusters // items
    prob = np.where(user_cluster[:, None] == item_cluster[None, :], p_in, p_out)
    hits = rng.random((users, items)) < prob
    width_u = len(str(users - 1))
    width_i = len(str(items - 1))
    events = []
    for u in range(users):
        chosen = np.flatnonzero(hits[u])
        stamps = rng.permutation(len(chosen))
        for ts in np.argsort(stamps, kind="stable"):
            events.append(Interaction(f"u{u:0{width_u}d}", f"i{chosen[ts]:0{width_i}d}", int(stamps[ts])))
    return events


def planted_log(**kwargs) -> InteractionLog:
    return InteractionLog.from_events(planted_clusters(**kwargs))


def write_events(events, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(f"{e.user}\t{e.item}\t{e.timestamp}\n")
