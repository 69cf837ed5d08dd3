import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsteer import scoring
from memsteer.memory import (ActionNormalizer, MemoryEntry, MemoryFormatError, MemoryStore,
                             StateKey, TaskFilter, append_records, filter_by_action)
from memsteer.tokens import jaccard, tokenize

from conftest import populated_store, random_entries

token_sets = st.frozensets(st.sampled_from("abcdefgh"), max_size=6)


# -- tokenizer and similarity ---------------------------------------------------


def test_tokenize_lowercases_and_splits():
    assert tokenize("Open the DOOR") == {"open", "the", "door"}


def test_tokenize_empty():
    assert tokenize("") == frozenset()


def test_tokenize_punctuation_and_dedup():
    assert tokenize("a,a b") == {"a", "b"}


def test_tokenize_keeps_alphanumerics_together():
    assert tokenize("s3 s12") == {"s3", "s12"}


def test_jaccard_identical_sets():
    s = frozenset({"a", "b", "c"})
    assert jaccard(s, s) == 1.0


def test_jaccard_disjoint():
    assert jaccard(frozenset("ab"), frozenset("cd")) == 0.0


def test_jaccard_half_overlap():
    assert jaccard(frozenset("abc"), frozenset("bcd")) == 0.5


def test_jaccard_both_empty_is_one():
    assert jaccard(frozenset(), frozenset()) == 1.0


def test_jaccard_one_empty_is_zero():
    assert jaccard(frozenset(), frozenset("ab")) == 0.0


@given(a=token_sets, b=token_sets)
def test_jaccard_symmetric_and_bounded(a, b):
    assert jaccard(a, b) == jaccard(b, a)
    assert 0.0 <= jaccard(a, b) <= 1.0


def test_statekey_derives_tokens():
    key = StateKey(text="Hall, door", history="go north")
    assert key.tokens == {"hall", "door"}
    assert key.history_tokens == {"go", "north"}


# -- insertion ----------------------------------------------------------------


def test_insert_grows_store():
    store = MemoryStore()
    store.add(StateKey("hall"), "look", 1.0)
    assert len(store) == 1


def test_insert_assigns_increasing_time():
    store = MemoryStore()
    first = store.add(StateKey("hall"), "look", 1.0)
    second = store.add(StateKey("hall"), "look", 2.0)
    assert (first.time_index, second.time_index) == (0, 1)


def test_fifo_eviction_drops_oldest():
    store = MemoryStore(capacity=4)
    for i in range(5):
        store.add(StateKey(f"s{i}"), "a", float(i))
    assert len(store) == 4
    assert [e.time_index for e in store.entries] == [1, 2, 3, 4]


def test_insert_rejects_nan_return():
    store = MemoryStore()
    with pytest.raises(ValueError, match="finite"):
        store.add(StateKey("hall"), "look", float("nan"))


def test_insert_rejects_empty_action():
    store = MemoryStore()
    with pytest.raises(ValueError, match="non-empty"):
        store.add(StateKey("hall"), "", 1.0)


# -- retrieval ------------------------------------------------------------------


def test_retrieve_from_empty_store():
    store = MemoryStore()
    neighborhood = store.retrieve(StateKey("hall"), k=3, threshold=0.5)
    assert len(neighborhood) == 0 and not neighborhood


def test_retrieve_recency_tiebreak():
    store = MemoryStore()
    for i in range(3):
        store.add(StateKey("hall door"), f"act{i}", float(i))
    neighborhood = store.retrieve(StateKey("hall door"), k=2, threshold=0.0)
    assert [sim for _, sim in neighborhood.entries] == [1.0, 1.0]
    assert [e.action for e, _ in neighborhood.entries] == ["act2", "act1"]


def test_retrieve_threshold_filter():
    store = MemoryStore(state_weight=1.0, history_weight=0.0)
    store.add(StateKey("a b"), "hit", 1.0)        # similarity 1.0
    store.add(StateKey("a b c d"), "mid", 1.0)    # similarity 0.5
    store.add(StateKey("a c d e"), "low", 1.0)    # similarity 0.2
    neighborhood = store.retrieve(StateKey("a b"), k=10, threshold=0.8)
    assert [e.action for e, _ in neighborhood.entries] == ["hit"]


def test_retrieve_caps_at_k_and_respects_threshold(rng):
    store = populated_store(rng, 300)
    query = StateKey("door key hall", "go north")
    for k, threshold in [(1, 0.0), (7, 0.3), (50, 0.6)]:
        neighborhood = store.retrieve(query, k=k, threshold=threshold)
        assert len(neighborhood) <= k
        assert all(sim >= threshold for _, sim in neighborhood.entries)
        sims = [sim for _, sim in neighborhood.entries]
        assert sims == sorted(sims, reverse=True)


def test_retrieve_is_deterministic_and_pure(rng):
    store = populated_store(rng, 120)
    query = StateKey("door key", "look")
    first = store.retrieve(query, k=9, threshold=0.1)
    second = store.retrieve(query, k=9, threshold=0.1)
    assert [(e.time_index, sim) for e, sim in first.entries] == \
           [(e.time_index, sim) for e, sim in second.entries]
    assert len(store) == 120


def test_retrieve_validates_arguments():
    store = MemoryStore()
    with pytest.raises(ValueError):
        store.retrieve(StateKey("x"), k=0, threshold=0.5)
    with pytest.raises(ValueError):
        store.retrieve(StateKey("x"), k=1, threshold=1.5)


def test_weighted_state_history_similarity():
    store = MemoryStore()  # default 0.75 state / 0.25 history
    store.add(StateKey("hall door", history="go north"), "a", 1.0)
    neighborhood = store.retrieve(StateKey("hall door", history="go south"),
                                  k=1, threshold=0.0)
    (_, sim), = neighborhood.entries
    # state jaccard 1.0, history jaccard 1/3
    assert sim == pytest.approx(0.75 + 0.25 / 3, abs=1e-12)


def test_statekey_similarity_helper_matches_retrieval():
    a = StateKey("hall door", history="go north")
    b = StateKey("hall door", history="go south")
    store = MemoryStore()
    store.add(b, "x", 0.0)
    (_, sim), = store.retrieve(a, k=1, threshold=0.0).entries
    assert a.similarity(b) == sim


# -- action filtering ------------------------------------------------------------


def _neighborhood_of(actions):
    store = MemoryStore()
    for i, action in enumerate(actions):
        store.add(StateKey("same state"), action, float(i))
    return store.retrieve(StateKey("same state"), k=len(actions), threshold=0.0)


def test_filter_by_action_definitional():
    neighborhood = _neighborhood_of(["x", "y", "x"])
    assert len(filter_by_action(neighborhood, "x")) == 2


def test_filter_by_action_absent():
    neighborhood = _neighborhood_of(["x", "y"])
    assert len(filter_by_action(neighborhood, "z")) == 0


def test_filter_by_action_with_normalization():
    normalizer = ActionNormalizer([(r"\(\s*'?\d+'?\s*\)", "({id})")])
    neighborhood = _neighborhood_of(["click('1240')", "click('88')", "hover('3')"])
    kept = filter_by_action(neighborhood, "click('7')", normalizer)
    assert sorted(e.action for e, _ in kept.entries) == ["click('1240')", "click('88')"]


def test_action_partition_sums_to_neighborhood(rng):
    store = populated_store(rng, 200)
    neighborhood = store.retrieve(StateKey("door hall key"), k=40, threshold=0.0)
    actions = set(neighborhood.actions())
    total = sum(len(filter_by_action(neighborhood, a)) for a in actions)
    assert total == len(neighborhood)


def test_normalizer_collapses_whitespace_and_case():
    normalizer = ActionNormalizer()
    assert normalizer("  Take   KEY ") == "take key"


# -- persistence ------------------------------------------------------------------


def test_roundtrip_empty_store(tmp_path):
    store = MemoryStore()
    path = tmp_path / "bank.jsonl"
    store.save(path)
    assert MemoryStore.load(path).entries == ()


def test_roundtrip_is_field_exact(tmp_path, rng):
    store = populated_store(rng, 1000)
    path = tmp_path / "bank.jsonl"
    store.save(path)
    loaded = MemoryStore.load(path)
    assert loaded.entries == store.entries


@settings(max_examples=20, deadline=None)
@given(returns=st.lists(st.floats(allow_nan=False, allow_infinity=False,
                                  width=64), min_size=1, max_size=20))
def test_roundtrip_preserves_floats_bit_exact(returns):
    store = MemoryStore()
    for i, value in enumerate(returns):
        store.add(StateKey(f"s{i}"), "act", value)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bank.jsonl"
        store.save(path)
        loaded = MemoryStore.load(path)
    for original, read in zip(store.entries, loaded.entries):
        assert math.copysign(1.0, original.return_value) == \
               math.copysign(1.0, read.return_value)
        assert original.return_value == read.return_value


def test_truncated_final_line_names_line(tmp_path, rng):
    store = populated_store(rng, 5)
    path = tmp_path / "bank.jsonl"
    store.save(path)
    text = path.read_text(encoding="utf-8")
    path.write_text(text[:-20], encoding="utf-8")  # corrupt the last record
    with pytest.raises(MemoryFormatError) as err:
        MemoryStore.load(path)
    assert err.value.line_number == 5
    assert "line 5" in str(err.value)


def test_missing_field_raises_with_line(tmp_path):
    path = tmp_path / "bank.jsonl"
    path.write_text('{"state_text": "x", "action": "a"}\n', encoding="utf-8")
    with pytest.raises(MemoryFormatError, match="line 1"):
        MemoryStore.load(path)


def test_append_records_matches_save(tmp_path, rng):
    entries = random_entries(rng, 40)
    store = MemoryStore()
    for entry in entries:
        store.insert(entry)
    saved = tmp_path / "saved.jsonl"
    appended = tmp_path / "appended.jsonl"
    store.save(saved)
    appended.write_text("", encoding="utf-8")
    append_records(appended, store.entries[:17])
    append_records(appended, store.entries[17:])
    assert appended.read_bytes() == saved.read_bytes()


def test_load_preserves_clock(tmp_path, rng):
    store = populated_store(rng, 10)
    path = tmp_path / "bank.jsonl"
    store.save(path)
    loaded = MemoryStore.load(path)
    entry = loaded.add(StateKey("new"), "act", 0.0)
    assert entry.time_index == 10


# -- task filtering ---------------------------------------------------------------


def test_task_filter_gates_retrieval():
    store = MemoryStore()
    store.add(StateKey("orders page", history="open orders"), "click orders", 1.0)
    store.add(StateKey("reviews page", history="open reviews"), "click reviews", 2.0)
    query = StateKey("orders page", history="open orders")
    gate = TaskFilter(task_text="orders page", threshold=0.5,
                      history_weight=0.7, task_weight=0.3)
    kept = store.retrieve(query, k=10, threshold=0.0, task_filter=gate)
    assert [e.action for e, _ in kept.entries] == ["click orders"]


def test_task_filter_admits_arithmetic():
    gate = TaskFilter(task_text="a b", threshold=0.5,
                      history_weight=0.7, task_weight=0.3)
    entry = MemoryEntry(state=StateKey("a b", history="h1 h2"), action="x",
                        return_value=0.0)
    # history jaccard 1/3, task jaccard 1.0 -> 0.7/3 + 0.3 = 0.5333
    assert gate.admits(StateKey("a b", history="h1 zz"), entry)
    # history jaccard 0 -> 0.3 < 0.5
    assert not gate.admits(StateKey("a b", history="qq zz"), entry)


# -- scoring backends ---------------------------------------------------------------


def test_python_backend_retrieval_available(rng):
    store = populated_store(rng, 50, backend="python")
    assert store.backend == "python"
    neighborhood = store.retrieve(StateKey("door key"), k=5, threshold=0.0)
    assert len(neighborhood) == 5


@pytest.mark.skipif(not scoring.compiled_available(),
                    reason="compiled kernel not built")
def test_backends_agree_bit_for_bit(rng):
    entries = random_entries(rng, 400)
    compiled = MemoryStore(backend="compiled")
    pure = MemoryStore(backend="python")
    for entry in entries:
        compiled.insert(entry)
        pure.insert(entry)
    for _ in range(25):
        query = StateKey(" ".join(rng.choice(["door", "key", "hall", "gate", "zzz"],
                                             size=int(rng.integers(0, 4)))),
                         history=" ".join(rng.choice(["go", "north", "look"],
                                                     size=int(rng.integers(0, 3)))))
        a = compiled._scorer.score(query.tokens, query.history_tokens)
        b = pure._scorer.score(query.tokens, query.history_tokens)
        assert np.array_equal(a, b)
        na = compiled.retrieve(query, k=7, threshold=0.2)
        nb = pure.retrieve(query, k=7, threshold=0.2)
        assert [(e.time_index, s) for e, s in na.entries] == \
               [(e.time_index, s) for e, s in nb.entries]


@pytest.mark.skipif(not scoring.compiled_available(),
                    reason="compiled kernel not built")
def test_compiled_backend_survives_eviction_compaction(rng):
    compiled = MemoryStore(capacity=60, backend="compiled")
    pure = MemoryStore(capacity=60, backend="python")
    for entry in random_entries(rng, 400):
        compiled.insert(entry)
        pure.insert(entry)
    query = StateKey("door key hall")
    na = compiled.retrieve(query, k=10, threshold=0.0)
    nb = pure.retrieve(query, k=10, threshold=0.0)
    assert [(e.time_index, s) for e, s in na.entries] == \
           [(e.time_index, s) for e, s in nb.entries]
