import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leporid.interactions import (
    EmptyLogError,
    InteractionFormatError,
    InteractionLog,
    filter_min_activity,
    load_interactions,
    load_split,
    save_split,
    split_log,
    split_sizes,
    temporal_split,
    user_item_sets,
)


def _write(tmp_path, text, name="log.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_exact_duplicates_dropped(tmp_path):
    log = load_interactions(_write(tmp_path, "u1\ti1\t5\nu1\ti1\t5\n"))
    assert len(log) == 1


def test_duplicates_with_different_timestamps_kept(tmp_path):
    log = load_interactions(_write(tmp_path, "u1\ti1\t5\nu1\ti1\t6\n"))
    assert len(log) == 2


def test_index_counting(tmp_path):
    log = load_interactions(_write(tmp_path, "u1\ti1\t5\nu2\ti1\t9\n"))
    assert (log.n_users, log.n_items) == (2, 1)


def test_arity_error_names_line(tmp_path):
    with pytest.raises(InteractionFormatError, match="line 1"):
        load_interactions(_write(tmp_path, "u1\ti1\n"))


def test_bad_timestamp_and_header(tmp_path):
    with pytest.raises(InteractionFormatError, match="line 2"):
        load_interactions(_write(tmp_path, "u1\ti1\t1\nu1\ti2\tsoon\n"))
    log = load_interactions(_write(tmp_path, "user\titem\tts\nu1\ti1\t1\n"), has_header=True)
    assert len(log) == 1


def test_extra_columns_ignored(tmp_path):
    log = load_interactions(_write(tmp_path, "u1\ti1\t3\t4.5\n"))
    assert log.events == [("u1", "i1", 3)]


def test_empty_file(tmp_path):
    with pytest.raises(EmptyLogError):
        load_interactions(_write(tmp_path, ""))


def test_min_count_one_is_identity():
    log = InteractionLog.from_events([("a", "x", 1), ("b", "y", 2), ("a", "y", 3)])
    out = filter_min_activity(log, 1)
    assert out.events == log.events


def test_user_below_threshold_removed():
    events = [("heavy", f"i{k}", k) for k in range(25)] + [("light", f"i{k}", k) for k in range(19)]
    events += [(f"x{j}", f"i{k}", 0) for j in range(20) for k in range(25)]
    out = filter_min_activity(InteractionLog.from_events(events), 20)
    assert "light" not in out.user_ids and "heavy" in out.user_ids


def test_filter_cascades_to_fixed_point():
    # min_count=2: item z has 1 event -> removed; then user c has 1 event -> removed;
    # then item y drops to 1 event -> removed; then user b drops to 1 -> removed.
    events = [("a", "x", 1), ("a", "w", 2), ("d", "x", 3), ("d", "w", 4),
              ("b", "x", 5), ("b", "y", 6), ("c", "y", 7), ("c", "z", 8)]
    out = filter_min_activity(InteractionLog.from_events(events), 2)
    assert set(out.user_ids) == {"a", "d"}
    assert set(out.item_ids) == {"x", "w"}


def test_filter_to_nothing():
    with pytest.raises(EmptyLogError):
        filter_min_activity(InteractionLog.from_events([("a", "x", 1)]), 2)


@pytest.mark.parametrize("n, expected", [(10, (7, 1, 2)), (3, (2, 0, 1)), (20, (14, 2, 4)),
                                         (5, (4, 0, 1)), (15, (11, 1, 3)), (1, (1, 0, 0))])
def test_split_sizes(n, expected):
    assert split_sizes(n) == expected


def test_temporal_split_respects_time():
    events = [("u", f"i{k}", ts) for k, ts in enumerate([9, 3, 7, 1, 5, 2, 8, 4, 6, 0])]
    split = split_log(events)
    assert sorted(split.train.timestamps.tolist()) == list(range(7))
    assert split.validation.timestamps.tolist() == [7]
    assert sorted(split.test.timestamps.tolist()) == [8, 9]


def test_equal_timestamps_use_input_order():
    split = split_log([("u", f"i{k}", 0) for k in range(10)])
    assert [split.train.item_ids[i] for i in split.train.items] == [f"i{k}" for k in range(7)]


def test_user_item_sets():
    log = InteractionLog.from_events([("u1", "i1", 1), ("u1", "i1", 2), ("u1", "i2", 3)])
    assert user_item_sets(log) == {0: {0, 1}}
    assert user_item_sets(InteractionLog.from_events([])) == {}
    log = InteractionLog.from_events([("u1", "i1", 1), ("u2", "i1", 2)])
    assert user_item_sets(log) == {0: {0}, 1: {0}}


def test_split_roundtrip(tmp_path, small_synth):
    save_split(small_synth, tmp_path / "s")
    back = load_split(tmp_path / "s")
    for name in ("train", "validation", "test"):
        a, b = getattr(small_synth, name), getattr(back, name)
        assert a.events == b.events
    assert back.user_ids == small_synth.user_ids and back.item_ids == small_synth.item_ids


event_lists = st.lists(
    st.tuples(st.sampled_from([f"u{k}" for k in range(6)]), st.sampled_from([f"i{k}" for k in range(8)]),
              st.integers(0, 10_000)),
    min_size=1, max_size=80, unique_by=lambda e: e[2])


@settings(max_examples=60, deadline=None)
@given(event_lists, st.randoms(use_true_random=False))
def test_split_is_partition_and_order_invariant(events, rnd):
    split = split_log(events)
    merged = sorted(split.train.events + split.validation.events + split.test.events)
    assert merged == sorted(set(events))
    shuffled = list(events)
    rnd.shuffle(shuffled)
    other = split_log(shuffled)
    for name in ("train", "validation", "test"):
        assert sorted(getattr(split, name).events) == sorted(getattr(other, name).events)
    # per user: train <= validation <= test in time
    for u in range(split.n_users):
        parts = [getattr(split, n) for n in ("train", "validation", "test")]
        stamps = [p.timestamps[p.users == u] for p in parts]
        for earlier, later in zip(stamps, stamps[1:]):
            if len(earlier) and len(later):
                assert earlier.max() <= later.min()


@settings(max_examples=60, deadline=None)
@given(event_lists, st.integers(1, 4))
def test_filter_output_meets_threshold(events, k):
    log = InteractionLog.from_events(events)
    try:
        out = filter_min_activity(log, k)
    except EmptyLogError:
        return
    assert out.user_counts().min() >= k and out.item_counts().min() >= k
    assert np.all(np.diff(np.unique(out.users)) == 1)
