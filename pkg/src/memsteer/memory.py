"""Episodic memory: experience triplets, similarity retrieval, persistence.

The store keeps (state, action, return) triplets in insertion order and
retrieves the top-k most similar entries above a similarity threshold.
Similarity is a weighted sum of state-token and history-token Jaccard overlap
(default 0.75 state / 0.25 history). Ties are broken most-recent-first so a
slowly drifting policy is represented by its freshest experience.

Concurrency: retrieval is pure given a snapshot of the store; many readers
may share one store, but writes require exclusive access (the engine runs
episodes sequentially, which provides that discipline).

Persistence is line-delimited JSON, one record per line, append-only during a
run::

    {"state_text": ..., "history_text": ..., "action": ..., "return": ...,
     "episode": ..., "step": ..., "time": ...}
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from memsteer.scoring import make_scorer
from memsteer.tokens import jaccard, tokenize

__all__ = [
    "ActionNormalizer",
    "MemoryEntry",
    "MemoryFormatError",
    "MemoryStore",
    "Neighborhood",
    "StateKey",
    "TaskFilter",
    "filter_by_action",
]

RECORD_FIELDS = ("state_text", "history_text", "action", "return", "episode", "step", "time")


@dataclass(frozen=True)
class StateKey:
    """Abstracted state summary plus recent-action history, as text and tokens."""

    text: str
    history: str = ""
    tokens: frozenset[str] = field(init=False, repr=False, compare=False)
    history_tokens: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tokenize(self.text))
        object.__setattr__(self, "history_tokens", tokenize(self.history))

    def similarity(self, other: "StateKey", state_weight: float = 0.75,
                   history_weight: float = 0.25) -> float:
        js = jaccard(self.tokens, other.tokens)
        jh = jaccard(self.history_tokens, other.history_tokens)
        return state_weight * js + history_weight * jh


@dataclass(frozen=True)
class MemoryEntry:
    """One stored triplet with provenance."""

    state: StateKey
    action: str
    return_value: float
    episode: int = 0
    step: int = 0
    time_index: int = 0

    def validate(self) -> None:
        if not self.action:
            raise ValueError("memory entry action must be non-empty")
        if not math.isfinite(self.return_value):
            raise ValueError(f"memory entry return must be finite, got {self.return_value!r}")


@dataclass
class Neighborhood:
    """Top-k retrieval result: entries paired with their similarity scores."""

    entries: list[tuple[MemoryEntry, float]]
    query: StateKey
    k_requested: int
    threshold: float

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def actions(self) -> list[str]:
        return [entry.action for entry, _ in self.entries]

    def returns(self) -> list[float]:
        return [entry.return_value for entry, _ in self.entries]


class ActionNormalizer:
    """Rewrite table mapping action text to a canonical comparison form.

    Rules are (regex, replacement) pairs applied in order, followed by
    whitespace collapsing and casefolding. Used everywhere two action strings
    are compared (neighborhood filtering, candidate-set union), so e.g.
    ``click('1240')`` and ``click('88')`` can be configured to match.
    """

    def __init__(self, rules: Iterable[tuple[str, str]] = ()):
        self.rules = [(re.compile(pat), repl) for pat, repl in rules]

    def __call__(self, action: str) -> str:
        for pattern, repl in self.rules:
            action = pattern.sub(repl, action)
        return " ".join(action.split()).casefold()


IDENTITY_NORMALIZER = ActionNormalizer()


def filter_by_action(neighborhood: Neighborhood, action: str,
                     normalizer: ActionNormalizer = IDENTITY_NORMALIZER) -> Neighborhood:
    """Entries whose normalized action equals the normalized query action."""
    want = normalizer(action)
    kept = [(entry, sim) for entry, sim in neighborhood.entries if normalizer(entry.action) == want]
    return Neighborhood(entries=kept, query=neighborhood.query,
                        k_requested=neighborhood.k_requested,
                        threshold=neighborhood.threshold)


@dataclass(frozen=True)
class TaskFilter:
    """Cross-task retrieval gate.

    When a query carries a task description, candidate entries are kept only
    if ``history_weight * J(query history, entry history) + task_weight *
    J(task tokens, entry state tokens) >= threshold``. The bank schema has no
    task field, so an entry's task identity is proxied by its state tokens;
    this composition is an interpretation and is applied before the usual
    state/history scoring.
    """

    task_text: str
    threshold: float
    history_weight: float = 0.7
    task_weight: float = 0.3
    task_tokens: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "task_tokens", tokenize(self.task_text))

    def admits(self, query: StateKey, entry: MemoryEntry) -> bool:
        jh = jaccard(query.history_tokens, entry.state.history_tokens)
        jt = jaccard(self.task_tokens, entry.state.tokens)
        return self.history_weight * jh + self.task_weight * jt >= self.threshold


class MemoryFormatError(ValueError):
    """A memory bank record could not be parsed; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"memory bank line {line_number}: {message}")
        self.line_number = line_number


class MemoryStore:
    """Append-ordered triplet store with similarity retrieval.

    Unbounded by default; an optional ``capacity`` turns on FIFO eviction.
    ``retrieval_count`` / ``insert_count`` exist so tests can assert that
    non-learning modes never touch the store.
    """

    def __init__(self, capacity: int | None = None, state_weight: float = 0.75,
                 history_weight: float = 0.25, backend: str | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be None or >= 1")
        self.capacity = capacity
        self.state_weight = state_weight
        self.history_weight = history_weight
        self._entries: list[MemoryEntry] = []
        self._times: list[int] = []
        self._times_cache: np.ndarray | None = None
        self._scorer = make_scorer(state_weight, history_weight, backend=backend)
        self._clock = 0
        self.retrieval_count = 0
        self.insert_count = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[MemoryEntry, ...]:
        return tuple(self._entries)

    @property
    def backend(self) -> str:
        return self._scorer.backend

    def add(self, state: StateKey, action: str, return_value: float,
            episode: int = 0, step: int = 0) -> MemoryEntry:
        """Insert one triplet; the store assigns the time index."""
        entry = MemoryEntry(state=state, action=action, return_value=float(return_value),
                            episode=episode, step=step, time_index=self._clock)
        return self._insert(entry)

    def insert(self, entry: MemoryEntry) -> MemoryEntry:
        """Insert a prebuilt entry, reassigning its time index from the store clock."""
        stamped = MemoryEntry(state=entry.state, action=entry.action,
                              return_value=entry.return_value, episode=entry.episode,
                              step=entry.step, time_index=self._clock)
        return self._insert(stamped)

    def _insert(self, entry: MemoryEntry) -> MemoryEntry:
        entry.validate()
        self._entries.append(entry)
        self._times.append(entry.time_index)
        self._times_cache = None
        self._scorer.append(entry.state.tokens, entry.state.history_tokens)
        self._clock = entry.time_index + 1
        self.insert_count += 1
        if self.capacity is not None and len(self._entries) > self.capacity:
            self._entries.pop(0)
            self._times.pop(0)
            self._scorer.pop_front()
        return entry

    def extend(self, entries: Iterable[MemoryEntry]) -> None:
        for entry in entries:
            self.insert(entry)

    def retrieve(self, query: StateKey, k: int, threshold: float,
                 task_filter: TaskFilter | None = None) -> Neighborhood:
        """Top-k entries with similarity >= threshold, most similar first.

        Ties are broken by time index descending (most recent first). A
        deterministic function of (store contents, query, k, threshold).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        self.retrieval_count += 1
        n = len(self._entries)
        if n == 0:
            return Neighborhood([], query, k, threshold)
        sims = self._scorer.score(query.tokens, query.history_tokens)
        keep = np.nonzero(sims >= threshold)[0]
        if task_filter is not None:
            keep = np.array([i for i in keep
                             if task_filter.admits(query, self._entries[i])], dtype=np.int64)
        if keep.size == 0:
            return Neighborhood([], query, k, threshold)
        if self._times_cache is None:
            self._times_cache = np.asarray(self._times, dtype=np.int64)
        times = self._times_cache
        # similarity descending, then time index descending (recency first)
        order = keep[np.lexsort((-times[keep], -sims[keep]))][:k]
        chosen = [(self._entries[i], float(sims[i])) for i in order]
        return Neighborhood(chosen, query, k, threshold)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self._entries:
                fh.write(encode_record(entry))
                fh.write("\n")

    @classmethod
    def load(cls, path, capacity: int | None = None, state_weight: float = 0.75,
             history_weight: float = 0.25, backend: str | None = None) -> "MemoryStore":
        store = cls(capacity=capacity, state_weight=state_weight,
                    history_weight=history_weight, backend=backend)
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                entry = decode_record(line, lineno)
                store._entries.append(entry)
                store._times.append(entry.time_index)
                store._scorer.append(entry.state.tokens, entry.state.history_tokens)
                store._clock = max(store._clock, entry.time_index + 1)
        store._times_cache = None
        return store


def encode_record(entry: MemoryEntry) -> str:
    record = {
        "state_text": entry.state.text,
        "history_text": entry.state.history,
        "action": entry.action,
        "return": entry.return_value,
        "episode": entry.episode,
        "step": entry.step,
        "time": entry.time_index,
    }
    return json.dumps(record, ensure_ascii=False)


def decode_record(line: str, lineno: int) -> MemoryEntry:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MemoryFormatError(lineno, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise MemoryFormatError(lineno, "record is not an object")
    missing = [name for name in RECORD_FIELDS if name not in raw]
    if missing:
        raise MemoryFormatError(lineno, f"missing fields {missing}")
    try:
        entry = MemoryEntry(
            state=StateKey(text=raw["state_text"], history=raw["history_text"]),
            action=raw["action"],
            return_value=float(raw["return"]),
            episode=int(raw["episode"]),
            step=int(raw["step"]),
            time_index=int(raw["time"]),
        )
        entry.validate()
    except (TypeError, ValueError) as exc:
        raise MemoryFormatError(lineno, str(exc)) from exc
    return entry


def append_records(path, entries: Sequence[MemoryEntry]) -> None:
    """Append entries to a bank file (the per-episode, append-only write path)."""
    with open(path, "a", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(encode_record(entry))
            fh.write("\n")
